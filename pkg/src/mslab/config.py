"""Run configuration: ``key = value`` text with dotted keys.

Blank lines and ``#`` comments are ignored.  Unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from mslab.core import HyperParams
from mslab.trainer import BatchSpec, TrainConfig


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _names(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _str(text: str) -> str:
    return text.strip()


# key -> (parser, default); defaults are the effective values when omitted
SCHEMA = {
    "method": (_str, "ms"),
    "seed": (int, 7),
    "epochs": (int, 200),
    "train.batches_per_epoch": (int, 0),
    "hp.alpha": (float, 2.0),
    "hp.beta": (float, 50.0),
    "hp.lambda": (float, 1.0),
    "hp.epsilon": (float, 0.1),
    "hp.margin": (float, 0.5),
    "batch.classes": (int, 4),
    "batch.m": (int, 5),
    "model.dim": (int, 16),
    "opt.lr": (float, 1e-4),
    "opt.beta1": (float, 0.9),
    "opt.beta2": (float, 0.999),
    "opt.eps": (float, 1e-8),
    "data.synth.classes": (int, 8),
    "data.synth.per_class": (int, 50),
    "data.synth.dim": (int, 32),
    "data.synth.noise": (float, 0.3),
    "data.path": (_str, ""),
    "data.query": (_str, ""),
    "data.gallery": (_str, ""),
    "eval.ks": (_ints, (1, 2, 4, 8)),
    "gradcheck.instances": (int, 50),
    "gradcheck.e2e_instances": (int, 20),
    "gradcheck.h": (float, 1e-6),
    "gradcheck.corrupt": (_str, ""),
    "ablate.methods": (
        _names,
        (
            "contrastive",
            "triplet",
            "lifted",
            "binomial",
            "lifted_star",
            "binlifted",
            "ms_mining",
            "ms_weighting",
            "binomial_m",
            "lifted_star_m",
            "ms",
        ),
    ),
    "dump.scenario": (_str, "S"),
}


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({key: default for key, (_, default) in SCHEMA.items()})

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        config = cls.defaults()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            config.set(key, value, where=f"line {lineno}: ")
        return config

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text)

    def set(self, key: str, value: str, where: str = "") -> None:
        if key not in SCHEMA:
            raise ConfigError(f"{where}unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(value)
        except ValueError:
            raise ConfigError(f"{where}bad value {value!r} for {key}") from None

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> list:
        return [f"{key} = {format_value(self.values[key])}" for key in sorted(self.values)]

    def hyperparams(self) -> HyperParams:
        try:
            return HyperParams(
                alpha=self["hp.alpha"],
                beta=self["hp.beta"],
                lam=self["hp.lambda"],
                epsilon=self["hp.epsilon"],
                margin=self["hp.margin"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self, method: str | None = None) -> TrainConfig:
        try:
            batch = BatchSpec(self["batch.classes"], self["batch.m"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return TrainConfig(
            method=method or self["method"],
            hp=self.hyperparams(),
            batch=batch,
            embed_dim=self["model.dim"],
            lr=self["opt.lr"],
            beta1=self["opt.beta1"],
            beta2=self["opt.beta2"],
            eps_adam=self["opt.eps"],
            epochs=self["epochs"],
            batches_per_epoch=self["train.batches_per_epoch"] or None,
            seed=self["seed"],
        )
