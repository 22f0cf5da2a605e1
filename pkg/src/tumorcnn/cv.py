"""Seeded k-fold and stratified k-fold plans."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import PlanError

STRATEGIES = ("plain", "stratified")


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    strategy: str
    n: int
    tests: tuple[tuple[int, ...], ...]

    def test(self, fold: int) -> np.ndarray:
        return np.array(self.tests[fold], dtype=np.int64)

    def train(self, fold: int) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[list(self.tests[fold])] = False
        return np.flatnonzero(mask)

    def to_json(self) -> str:
        body = {
            "k": self.k,
            "seed": self.seed,
            "strategy": self.strategy,
            "n": self.n,
            "folds": [list(t) for t in self.tests],
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        body = json.loads(text)
        return cls(body["k"], body["seed"], body["strategy"], body["n"],
                   tuple(tuple(f) for f in body["folds"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FoldPlan":
        return cls.from_json(Path(path).read_text())


def _chunk_sizes(n: int, k: int, offset: int = 0) -> list[int]:
    """Split n into k near-equal parts; the n % k extra items go to folds offset, offset+1, ..."""
    base, extra = divmod(n, k)
    sizes = [base] * k
    for j in range(extra):
        sizes[(offset + j) % k] += 1
    return sizes


def make_folds(labels: Sequence[int], k: int = 10, seed: int = 0, strategy: str = "stratified",
               class_names: Sequence[str] | None = None) -> FoldPlan:
    """Partition ``range(len(labels))`` into k test folds.

    ``plain`` shuffles all indices and cuts contiguous chunks. ``stratified``
    does the same inside every class and unions the chunks fold by fold; the
    remainder of each class starts where the previous class's remainder
    stopped so fold totals stay balanced.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if strategy not in STRATEGIES:
        raise PlanError(f"unknown strategy {strategy!r}")
    if k < 2:
        raise PlanError(f"k must be at least 2 (k={k} leaves no training data)")
    if n < k:
        raise PlanError(f"{n} samples cannot fill {k} folds")
    folds: list[list[int]] = [[] for _ in range(k)]
    if strategy == "plain":
        perm = rngmod.fisher_yates(n, rngmod.stream(rngmod.FOLDS, seed))
        start = 0
        for f, size in enumerate(_chunk_sizes(n, k)):
            folds[f].extend(perm[start:start + size].tolist())
            start += size
    else:
        offset = 0
        for c in np.unique(labels).tolist():
            members = np.flatnonzero(labels == c)
            if len(members) < k:
                name = class_names[c] if class_names is not None else c
                raise PlanError(f"class {name!r} has {len(members)} samples, fewer than k={k}")
            perm = members[rngmod.fisher_yates(len(members), rngmod.stream(rngmod.FOLDS, seed, c + 1))]
            start = 0
            for f, size in enumerate(_chunk_sizes(len(members), k, offset)):
                folds[f].extend(perm[start:start + size].tolist())
                start += size
            offset = (offset + len(members) % k) % k
    return FoldPlan(k, seed, strategy, n, tuple(tuple(sorted(f)) for f in folds))
