"""Ranking under tie-breaking rules, and rank-score vectors."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

_PRIORITY_KINDS = ("first", "last", "random")


@dataclass(frozen=True)
class TieMethod:
    """How equal outcomes are ranked.

    ``first``: the lower index gets the lower rank.  ``last``: the reverse.
    ``random``: ``first`` applied after reordering units by ``permutation``
    (unit ``permutation[j]`` is placed at position ``j``).  ``average``:
    tied units share the mean rank.
    """

    kind: str
    permutation: tuple | None = None

    def __post_init__(self):
        if self.kind not in _PRIORITY_KINDS + ("average",):
            raise ValueError(f"unknown tie method {self.kind!r}")
        if self.kind == "random":
            if self.permutation is None:
                raise ValueError("random ties need an explicit permutation")
            perm = tuple(int(i) for i in self.permutation)
            if sorted(perm) != list(range(len(perm))):
                raise ValueError("tie permutation must be a permutation of 0..n-1")
            object.__setattr__(self, "permutation", perm)
        elif self.permutation is not None:
            raise ValueError(f"{self.kind} ties take no permutation")

    @classmethod
    def random(cls, n: int, seed: int) -> "TieMethod":
        """Draw the tie permutation once from ``seed``."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x71E5]))
        return cls("random", tuple(int(i) for i in rng.permutation(n)))

    @property
    def uses_priority(self) -> bool:
        return self.kind in _PRIORITY_KINDS

    def priority(self, n: int) -> np.ndarray:
        """Secondary sort key: among equal outcomes a smaller key gets a smaller rank."""
        if self.kind == "first":
            return np.arange(n)
        if self.kind == "last":
            return np.arange(n)[::-1].copy()
        if self.kind == "random":
            if len(self.permutation) != n:
                raise ValueError(f"tie permutation has length {len(self.permutation)}, data has {n}")
            return np.argsort(np.asarray(self.permutation))
        raise ValueError("average ties have no priority order")

    def digest(self) -> str | None:
        if self.permutation is None:
            return None
        data = np.asarray(self.permutation, dtype="<i8").tobytes()
        return hashlib.sha256(data).hexdigest()

    def describe(self) -> dict:
        return {"method": self.kind, "permutation_sha256": self.digest()}


FIRST = TieMethod("first")
LAST = TieMethod("last")
AVERAGE = TieMethod("average")


def _check(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.isnan(y).any():
        raise ValueError("outcomes contain NaN")
    return y


def rank_vector(y, tie: TieMethod) -> np.ndarray:
    """Ranks 1..n; larger outcomes get larger ranks.  Integer array unless ties are averaged."""
    y = _check(y)
    n = y.shape[-1]
    if tie.kind == "average":
        return rankdata(y, method="average", axis=-1)
    prio = tie.priority(n)
    if y.ndim == 1:
        return rank_rows(y[None, :], prio)[0]
    return rank_rows(y, prio)


def rank_rows(Y: np.ndarray, prio: np.ndarray) -> np.ndarray:
    """Row-wise ranks of a 2-D array with a shared tie priority."""
    K, n = Y.shape
    P = np.broadcast_to(prio, (K, n))
    order = np.lexsort((P, Y), axis=-1)
    R = np.empty((K, n), dtype=np.int64)
    np.put_along_axis(R, order, np.arange(1, n + 1)[None, :].repeat(K, axis=0), axis=-1)
    return R


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """Rank scores, ``phi[r-1]`` is the score of rank ``r``."""

    phi: np.ndarray
    kind: str
    s: int | None = None
    integral: bool = field(init=False)

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float).copy()
        if phi.ndim != 1 or phi.size == 0:
            raise ValueError("score vector must be a non-empty 1-D array")
        if not np.isfinite(phi).all():
            raise ValueError("scores must be finite")
        if (np.diff(phi) < 0).any():
            raise ValueError("scores must be nondecreasing in rank")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        exact = bool(np.all(phi == np.round(phi))) and math.fsum(np.abs(phi)) < 2.0**53
        object.__setattr__(self, "integral", exact)

    @property
    def n(self) -> int:
        return self.phi.size

    def key(self) -> tuple:
        return (self.kind, self.s, self.phi.tobytes())

    def __eq__(self, other):
        return isinstance(other, ScoreVector) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def describe(self) -> dict:
        d = {"kind": self.kind, "n": self.n}
        if self.s is not None:
            d["s"] = self.s
        return d


def wilcoxon(n: int) -> ScoreVector:
    return ScoreVector(np.arange(1, n + 1, dtype=float), "wilcoxon")


def stephenson(n: int, s: int) -> ScoreVector:
    """phi(r) = C(r-1, s-1) for r >= s, else 0.

    The binomials are built with an exact integer recurrence and converted
    once, so each score is the correctly rounded float of the true value.
    """
    if int(s) != s or s < 2 or s > n:
        raise ValueError(f"Stephenson subset size must satisfy 2 <= s <= n, got s={s}, n={n}")
    s = int(s)
    out = np.zeros(n)
    c = 1  # C(s-1, s-1)
    try:
        for r in range(s, n + 1):
            out[r - 1] = float(c)
            c = c * r // (r - s + 1)
    except OverflowError as exc:
        raise ValueError(f"Stephenson scores overflow floating point at n={n}, s={s}") from exc
    return ScoreVector(out, "stephenson", s)


def custom(phi: Sequence[float]) -> ScoreVector:
    return ScoreVector(np.asarray(phi, dtype=float), "custom")


def make_scores(kind: str, n: int, s: int | None = None, phi=None) -> ScoreVector:
    kind = kind.lower()
    if kind == "wilcoxon":
        return wilcoxon(n)
    if kind == "stephenson":
        if s is None:
            raise ValueError("stephenson scores need s")
        return stephenson(n, s)
    if kind == "custom":
        sv = custom(phi)
        if sv.n != n:
            raise ValueError(f"custom scores have length {sv.n}, expected {n}")
        return sv
    raise ValueError(f"unknown score kind {kind!r}")


def load_scores_csv(path) -> ScoreVector:
    """Single-column CSV, row r holds phi(r).  A non-numeric first row is a header."""
    vals = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: not a number: {row[0]!r}") from None
    return custom(vals)


def average_tie_scores(score: ScoreVector, y) -> np.ndarray:
    """Per-unit scores where each tie group gets the mean score of its rank positions."""
    y = _check(y)
    n = y.size
    if score.n != n:
        raise ValueError("score length differs from outcome length")
    order = np.argsort(y, kind="stable")
    ys = y[order]
    out = np.empty(n)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and ys[stop] == ys[start]:
            stop += 1
        if stop - start == 1:
            out[order[start]] = score.phi[start]
        else:
            out[order[start:stop]] = math.fsum(score.phi[start:stop]) / (stop - start)
        start = stop
    return out
