"""Command-line entry point: ``mslab {train,gradcheck,ablate,dump-weights}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from mslab.checks import corrupted, end_to_end_check, loss_level_check
from mslab.config import ConfigError, RunConfig
from mslab.evaluation import (
    Dataset,
    EmptyFile,
    ParseError,
    load_dataset,
    recall_at_k,
    recall_at_k_two_set,
    split_by_class,
    synth_dataset,
)
from mslab.losses import LOSSES, SIMILARITY_TYPES, UnknownMethod, get_loss, ms_mine
from mslab.trainer import embed, train

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _fmt(x: float) -> str:
    return repr(float(x))


# -- data -------------------------------------------------------------------


def build_data(config: RunConfig):
    """Training set plus an evaluation callable ``W -> RecallReport``."""
    ks = config["eval.ks"]
    if config["data.path"]:
        data = load_dataset(config["data.path"])
        if config["data.query"] and config["data.gallery"]:
            query, gallery = load_dataset(config["data.query"]), load_dataset(config["data.gallery"])
            dataset = Dataset(data.X, data.y)

            def report(W):
                return recall_at_k_two_set(
                    embed(W, query.X), query.y, embed(W, gallery.X), gallery.y, ks
                )

            return dataset, report
        train_idx, test_idx = split_by_class(data.y)
        dataset = Dataset(data.X, data.y, train=train_idx, test=test_idx)
    else:
        dataset = synth_dataset(
            config["data.synth.classes"],
            config["data.synth.per_class"],
            config["data.synth.dim"],
            config["data.synth.noise"],
            config["seed"],
        )

    def report(W):
        return recall_at_k(embed(W, dataset.X[dataset.test]), dataset.y[dataset.test], ks)

    return dataset, report


def _train_method(config: RunConfig, method: str, dataset, report):
    W, history = train(config.train_config(method), dataset, evaluate=lambda W: report(W).values[0])
    return history, report(W)


# -- commands ---------------------------------------------------------------


def cmd_train(config: RunConfig) -> tuple:
    get_loss(config["method"])
    dataset, report = build_data(config)
    history, final = _train_method(config, config["method"], dataset, report)
    lines = ["# mslab train", "[config]", *config.echo(), "[history]", "epoch,loss,recall_first_k"]
    for epoch, (loss, r1) in enumerate(zip(history.loss, history.recall_at_1), start=1):
        lines.append(f"{epoch},{_fmt(loss)},{_fmt(r1)}")
    lines += [
        "[summary]",
        f"degenerate_batches = {history.degenerate_batches}",
        f"queries = {final.queries}",
        f"excluded_queries = {final.excluded}",
        "[recall]",
        "k,recall",
    ]
    lines += [f"{k},{_fmt(v)}" for k, v in final.rows()]
    return lines, EXIT_OK


def cmd_gradcheck(config: RunConfig) -> tuple:
    rng = np.random.default_rng(config["seed"])
    hp = config.hyperparams()
    broken = config["gradcheck.corrupt"]
    if broken:
        get_loss(broken)
    lines = ["# mslab gradcheck", "[config]", *config.echo(), "[gradcheck]"]
    lines.append("method,loss_max_rel_err,loss_tol,e2e_max_rel_err,e2e_tol,status")
    failed = False
    for name, loss in LOSSES.items():
        if not loss.has_value:
            lines.append(f"{name},,,,,skipped: gradient-defined method")
            continue
        if name == broken:
            loss = corrupted(loss)
        a = loss_level_check(loss, rng, config["gradcheck.instances"], hp=hp, h=config["gradcheck.h"])
        b = end_to_end_check(loss, rng, config["gradcheck.e2e_instances"], hp=hp)
        ok = a.passed and b.passed
        failed |= not ok
        lines.append(
            f"{name},{a.max_error:.3e},{a.tolerance:g},{b.max_error:.3e},{b.tolerance:g},"
            f"{'ok' if ok else 'FAIL'}"
        )
    lines += ["[summary]", f"status = {'FAIL' if failed else 'ok'}"]
    return lines, EXIT_VERIFY if failed else EXIT_OK


def cmd_ablate(config: RunConfig) -> tuple:
    methods = config["ablate.methods"]
    for name in methods:
        get_loss(name)
    dataset, report = build_data(config)
    rows = []
    for name in methods:
        _, final = _train_method(config, name, dataset, report)
        rows.append((name, final))
    rows.sort(key=lambda r: (-r[1].values[0], r[0]))
    ks = config["eval.ks"]
    lines = [
        "# mslab ablate",
        "[config]",
        *config.echo(),
        "[notes]",
        f"mining_epsilon = {_fmt(config['hp.epsilon'])}  # shared by ms, ms_mining, binomial_m, lifted_star_m",
        "[ablation]",
        "rank,method,similarities," + ",".join(f"R@{k}" for k in ks),
    ]
    for rank, (name, final) in enumerate(rows, start=1):
        values = ",".join(_fmt(v) for v in final.values)
        lines.append(f"{rank},{name},{SIMILARITY_TYPES.get(name, '')},{values}")
    return lines, EXIT_OK


DUMP_METHODS = ("contrastive", "triplet", "lifted", "binomial", "lifted_star", "binlifted", "ms")


def sweep(scenario: str):
    """Anchor-row similarities ``(s_ij, s_pos, s_competitor)`` along a sweep.

    Sample 0 is the anchor, 1 its positive, 2 the tracked negative and 3 a
    competing negative from a third class.
    """
    steps = range(13)
    if scenario == "S":
        # shift both negatives together: self-similarity grows, their gap is fixed
        points = [(0.35 + 0.05 * k, 0.3, 0.25 + 0.05 * k) for k in steps]
    elif scenario == "N":
        # competitor negative moves away from the anchor
        points = [(0.6, 0.3, 0.9 - 0.05 * k) for k in steps]
    elif scenario == "P":
        # positive moves away; grid is offset from the mining threshold
        points = [(0.5, 0.975 - 0.05 * k, 0.1) for k in steps]
    else:
        raise ConfigError(f"unknown scenario {scenario!r}; choose S, P or N")
    return [tuple(round(v, 6) for v in p) for p in points]


def mini_batch(s_ij: float, s_pos: float, s_comp: float):
    S = np.eye(4)
    for (i, j), v in {(0, 1): s_pos, (0, 2): s_ij, (0, 3): s_comp}.items():
        S[i, j] = S[j, i] = v
    return S, np.array([0, 0, 1, 2])


def cmd_dump_weights(config: RunConfig, scenario: str | None = None) -> tuple:
    scenario = scenario or config["dump.scenario"]
    points = sweep(scenario)
    hp = config.hyperparams()
    lines = [
        "# mslab dump-weights",
        "[config]",
        *config.echo(),
        "[weights]",
        f"scenario = {scenario}",
        "# weight = m * |dL/dS_02| for anchor 0 and tracked negative 2 (m = 4)",
        "step,s_ij,s_pos,s_competitor,neg_threshold," + ",".join(DUMP_METHODS) + ",ms_selected",
    ]
    for step, (s_ij, s_pos, s_comp) in enumerate(points):
        S, y = mini_batch(s_ij, s_pos, s_comp)
        weights = [4 * abs(get_loss(name).grad(S, y, hp)[0, 2]) for name in DUMP_METHODS]
        selected = int(ms_mine(S, y, hp.epsilon).neg[0, 2])
        cols = [s_ij, s_pos, s_comp, round(s_pos - hp.epsilon, 6), *weights]
        lines.append(f"{step}," + ",".join(_fmt(v) for v in cols) + f",{selected}")
    return lines, EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "dump-weights": cmd_dump_weights,
}


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mslab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", type=Path, help="output document (default: stdout)")
        if name == "dump-weights":
            p.add_argument("--scenario", choices=["S", "P", "N"])
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        config = RunConfig.from_file(args.config) if args.config else RunConfig.defaults()
        if args.seed is not None:
            config.values["seed"] = args.seed
        command = COMMANDS[args.command]
        if args.command == "dump-weights":
            lines, status = command(config, args.scenario)
        else:
            lines, status = command(config)
    except UnknownMethod as exc:
        print(f"mslab: UnknownMethod: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ParseError, EmptyFile, OSError) as exc:
        print(f"mslab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = "\n".join(lines) + "\n"
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
