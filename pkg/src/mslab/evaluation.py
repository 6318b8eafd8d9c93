"""Retrieval metrics and datasets."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mslab.core import l2_normalize


class DegenerateGallery(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyFile(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    train: Optional[np.ndarray] = None
    test: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} rows but {self.y.shape[0]} labels")
        if (self.train is None) != (self.test is None):
            raise ValueError("train and test splits must be given together")
        if self.train is not None:
            both = np.concatenate([self.train, self.test])
            if len(np.unique(both)) != len(both) or len(both) != len(self.y):
                raise ValueError("train/test split must be disjoint and cover every sample")

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])


@dataclass
class RecallReport:
    ks: tuple
    values: tuple
    queries: int
    excluded: int = 0

    def __getitem__(self, k: int) -> float:
        return self.values[self.ks.index(k)]

    def rows(self):
        return list(zip(self.ks, self.values))


def _first_hit_ranks(S, yq, yg, usable):
    order = np.argsort(-S, axis=1, kind="stable")
    hit = yg[order] == yq[:, None]
    # rank of the first same-class neighbour; len(yg) when none exists
    first = np.where(hit.any(axis=1), hit.argmax(axis=1), hit.shape[1])
    return first[usable]


def _report(first, ks, excluded) -> RecallReport:
    if first.size == 0:
        raise DegenerateGallery("no query has a same-class sample in the gallery")
    values = tuple(float(np.mean(first < k)) for k in ks)
    return RecallReport(ks=tuple(ks), values=values, queries=int(first.size), excluded=excluded)


def recall_at_k(E, y, ks: Sequence[int] = (1, 2, 4, 8)) -> RecallReport:
    """Recall@K with every sample used as a query against all the others.

    Neighbours are ranked by cosine similarity, ties going to the lower
    index.  Queries whose class has no other member are excluded and
    counted in ``excluded``.
    """
    E = np.asarray(E, dtype=np.float64)
    y = np.asarray(y)
    S = E @ E.T
    np.fill_diagonal(S, -np.inf)
    _, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    usable = counts[inverse] >= 2
    first = _first_hit_ranks(S, y, y, usable)
    return _report(first, ks, int((~usable).sum()))


def recall_at_k_two_set(Q, yq, G, yg, ks: Sequence[int] = (1, 2, 4, 8)) -> RecallReport:
    """Recall@K for separate query and gallery sets."""
    Q = np.asarray(Q, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    yq, yg = np.asarray(yq), np.asarray(yg)
    usable = np.isin(yq, yg)
    first = _first_hit_ranks(Q @ G.T, yq, yg, usable)
    return _report(first, ks, int((~usable).sum()))


def synth_dataset(classes: int, per_class: int, dim: int, noise: float, rng) -> Dataset:
    """Gaussian clusters around random unit centers, projected to the sphere.

    The first half of each class (rounded down) is the train split.
    """
    if classes < 2 or per_class < 2 or noise < 0:
        raise ValueError("need classes >= 2, per_class >= 2, noise >= 0")
    rng = np.random.default_rng(rng)
    centers = l2_normalize(rng.standard_normal((classes, dim)))
    y = np.repeat(np.arange(classes), per_class)
    X = l2_normalize(centers[y] + noise * rng.standard_normal((len(y), dim)))
    within = np.tile(np.arange(per_class), classes)
    is_train = within < per_class // 2
    return Dataset(X, y, train=np.flatnonzero(is_train), test=np.flatnonzero(~is_train))


def load_dataset(path) -> Dataset:
    """Read ``label,f1,...,fd`` lines; labels are remapped to 0..C-1."""
    labels, rows = [], []
    d = None
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        try:
            label = int(fields[0])
        except ValueError:
            raise ParseError(lineno, f"label {fields[0]!r} is not an integer") from None
        try:
            values = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if d is None:
            if not values:
                raise ParseError(lineno, "no feature values")
            d = len(values)
        elif len(values) != d:
            raise ParseError(lineno, f"expected {d} features, got {len(values)}")
        if not np.all(np.isfinite(values)):
            raise ParseError(lineno, "non-finite feature value")
        labels.append(label)
        rows.append(values)
    if not rows:
        raise EmptyFile(f"{path} has no data lines")
    _, y = np.unique(np.array(labels), return_inverse=True)
    return Dataset(np.array(rows), y)


def save_dataset(dataset: Dataset, path) -> None:
    lines = [
        ",".join([str(int(label))] + [repr(float(v)) for v in row])
        for label, row in zip(dataset.y, dataset.X)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_by_class(y) -> tuple:
    """Half of each class (first occurrences) to train, the rest to test."""
    y = np.asarray(y)
    train = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        train.extend(idx[: len(idx) // 2])
    train = np.array(sorted(train), dtype=int)
    test = np.setdiff1d(np.arange(len(y)), train)
    return train, test
