"""Test statistics and randomized checks of their structural properties.

Two families are provided: sum scores ``sum z_i psi1_i(y_i) - sum (1-z_i) psi0_i(y_i)``
(with difference in means and Horvitz-Thompson as special cases) and rank scores
``sum z_i phi(r_i(y))``.  Each statistic carries three flags:

* effect_increasing: raising treated outcomes or lowering control outcomes never
  lowers the statistic;
* differential_increasing: adding nonnegative effects to the units treated under
  ``a`` raises ``t(a, .)`` at least as much as ``t(z, .)`` for any other ``z``;
* distribution_free: under an exchangeable mechanism, the law of ``t(Z, y)`` does
  not depend on ``y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ranks import ScoreVector, TieMethod, average_tie_scores, rank_rows, rank_vector

_EXACT_LIMIT = 2.0**52


def masked_sums(A: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row sums of ``V`` over positions where ``A`` is 1.

    The result depends only on the multiset of selected values: integral inputs
    with small totals are summed exactly with BLAS, everything else goes
    through ``math.fsum`` (correctly rounded).
    """
    A = np.asarray(A)
    V = np.asarray(V, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    absV = np.abs(V)
    integral = bool(np.all(V == np.trunc(V))) and float(absV.sum(axis=-1).max(initial=0.0)) < _EXACT_LIMIT
    if integral:
        Af = A.astype(float)
        if V.ndim == 1:
            return Af @ V
        return np.einsum("ij,ij->i", Af, V)
    mask = A.astype(bool)
    if V.ndim == 1:
        return np.array([math.fsum(V[row].tolist()) for row in mask])
    return np.array([math.fsum(V[i][mask[i]].tolist()) for i in range(mask.shape[0])])


class Statistic:
    """Base class.  Subclasses implement ``evaluate_many`` and ``evaluate_rows``."""

    name = "statistic"
    effect_increasing = False
    differential_increasing = False
    distribution_free = False

    def evaluate(self, z, y) -> float:
        z = np.asarray(z)
        y = np.asarray(y, dtype=float)
        if z.shape != y.shape:
            raise ValueError(f"assignment length {z.shape} differs from outcome length {y.shape}")
        return float(self.evaluate_many(z[None, :], y)[0])

    def evaluate_many(self, A: np.ndarray, y) -> np.ndarray:
        """Statistic for each row of ``A`` against one outcome vector."""
        raise NotImplementedError

    def evaluate_rows(self, A: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Statistic for row ``i`` of ``A`` against row ``i`` of ``Y``."""
        return np.array([self.evaluate(A[i], Y[i]) for i in range(A.shape[0])])

    @property
    def rank_score_ties(self) -> str | None:
        """Tie method when this is a rank-score statistic with a priority tie order."""
        return None

    def null_key(self):
        """Cache key for the assignment-only null distribution, or None."""
        return None

    def describe(self) -> dict:
        return {
            "name": self.name,
            "effect_increasing": self.effect_increasing,
            "differential_increasing": self.differential_increasing,
            "distribution_free": self.distribution_free,
        }

    def __call__(self, z, y) -> float:
        return self.evaluate(z, y)


class RankScore(Statistic):
    """``sum_i z_i phi(r_i(y))``."""

    effect_increasing = True
    differential_increasing = False

    def __init__(self, scores: ScoreVector, tie: TieMethod, name: str | None = None):
        self.scores = scores
        self.tie = tie
        self.name = name or scores.kind
        self.distribution_free = tie.uses_priority

    def unit_scores(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.size != self.scores.n:
            raise ValueError(f"statistic built for n={self.scores.n}, got {y.size} outcomes")
        if self.tie.kind == "average":
            return average_tie_scores(self.scores, y)
        return self.scores.phi[rank_vector(y, self.tie) - 1]

    def evaluate_many(self, A, y):
        return masked_sums(A, self.unit_scores(y))

    def evaluate_rows(self, A, Y):
        Y = np.asarray(Y, dtype=float)
        if self.tie.kind == "average":
            V = np.stack([average_tie_scores(self.scores, row) for row in Y])
        else:
            V = self.scores.phi[rank_rows(Y, self.tie.priority(Y.shape[1])) - 1]
        return masked_sums(A, V)

    @property
    def rank_score_ties(self):
        return self.tie.kind if self.tie.uses_priority else None

    def null_key(self):
        # the tie order does not change the assignment-only distribution
        return ("rank", self.scores.key()) if self.distribution_free else None

    def describe(self):
        d = super().describe()
        d["scores"] = self.scores.describe()
        d["ties"] = self.tie.describe()
        return d


class SumScore(Statistic):
    """``sum z_i psi1(y)_i - sum (1 - z_i) psi0(y)_i``.

    ``psi1`` and ``psi0`` map an outcome array (1-D, or 2-D with units on the
    last axis) to transformed values elementwise per unit.  Pass
    ``monotone=True`` only when both are nondecreasing in each outcome.
    """

    def __init__(self, psi1: Callable, psi0: Callable, monotone: bool = False, name: str = "sum-score"):
        self.psi1 = psi1
        self.psi0 = psi0
        self.name = name
        self.effect_increasing = bool(monotone)
        self.differential_increasing = bool(monotone)

    def evaluate_many(self, A, y):
        y = np.asarray(y, dtype=float)
        A = np.asarray(A)
        return masked_sums(A, self.psi1(y)) - masked_sums(1 - A, self.psi0(y))

    def evaluate_rows(self, A, Y):
        Y = np.asarray(Y, dtype=float)
        A = np.asarray(A)
        return masked_sums(A, self.psi1(Y)) - masked_sums(1 - A, self.psi0(Y))


class DifferenceInMeans(Statistic):
    name = "dim"
    effect_increasing = True
    differential_increasing = True

    def _combine(self, A, S1, S0):
        n = A.shape[1]
        m = A.sum(axis=1).astype(float)
        if ((m == 0) | (m == n)).any():
            raise ValueError("difference in means needs at least one treated and one control unit "
                             "(under Bernoulli designs some draws have an empty arm; use the Horvitz-Thompson statistic, ht)")
        return S1 / m - S0 / (n - m)

    def evaluate_many(self, A, y):
        A = np.asarray(A)
        y = np.asarray(y, dtype=float)
        return self._combine(A, masked_sums(A, y), masked_sums(1 - A, y))

    def evaluate_rows(self, A, Y):
        A = np.asarray(A)
        Y = np.asarray(Y, dtype=float)
        return self._combine(A, masked_sums(A, Y), masked_sums(1 - A, Y))


class HorvitzThompson(SumScore):
    """Inverse-probability weighted contrast with per-unit treatment probabilities."""

    def __init__(self, treat_prob):
        p = np.asarray(treat_prob, dtype=float)
        if ((p <= 0) | (p >= 1)).any():
            raise ValueError("treatment probabilities must lie strictly inside (0, 1)")
        n = p.size
        self.treat_prob = p
        super().__init__(
            lambda y: y / (n * p),
            lambda y: y / (n * (1.0 - p)),
            monotone=True,
            name="horvitz-thompson",
        )

    @classmethod
    def for_mechanism(cls, mech) -> "HorvitzThompson":
        return cls(mech.treated_marginals())


class CustomStatistic(Statistic):
    """Arbitrary ``func(z, y) -> float``; every property flag must be declared by the caller."""

    def __init__(self, func: Callable, name: str = "custom", effect_increasing: bool = False,
                 differential_increasing: bool = False, distribution_free: bool = False):
        self.func = func
        self.name = name
        self.effect_increasing = effect_increasing
        self.differential_increasing = differential_increasing
        self.distribution_free = distribution_free

    def evaluate(self, z, y):
        return float(self.func(np.asarray(z), np.asarray(y, dtype=float)))

    def evaluate_many(self, A, y):
        y = np.asarray(y, dtype=float)
        return np.array([float(self.func(a, y)) for a in np.asarray(A)])

    def null_key(self):
        return ("custom", id(self)) if self.distribution_free else None


# ---------------------------------------------------------------------------
# property falsification

EFFECT_INCREASING = "effect_increasing"
DIFFERENTIAL_INCREASING = "differential_increasing"
DISTRIBUTION_FREE = "distribution_free"
PROPERTIES = (EFFECT_INCREASING, DIFFERENTIAL_INCREASING, DISTRIBUTION_FREE)


def _tol(*vals) -> float:
    return 1e-9 * max(1.0, *(abs(v) for v in vals))


def _lst(x):
    return [float(v) if not float(v).is_integer() else int(v) for v in np.asarray(x).ravel()]


def effect_increasing_violation(stat: Statistic, z, y, eta, xi) -> dict | None:
    """Counterexample payload if raising treated / lowering control outcomes lowers t."""
    z = np.asarray(z)
    y = np.asarray(y, dtype=float)
    moved = y + z * np.asarray(eta, dtype=float) + (1 - z) * np.asarray(xi, dtype=float)
    before, after = stat.evaluate(z, y), stat.evaluate(z, moved)
    if after < before - _tol(before, after):
        return {"z": _lst(z), "y": _lst(y), "eta": _lst(eta), "xi": _lst(xi),
                "t_before": before, "t_after": after}
    return None


def differential_increasing_violation(stat: Statistic, z, a, y, eta) -> dict | None:
    """Counterexample payload if t(z, y + a*eta) - t(z, y) > t(a, y + a*eta) - t(a, y)."""
    z = np.asarray(z)
    a = np.asarray(a)
    y = np.asarray(y, dtype=float)
    y2 = y + a * np.asarray(eta, dtype=float)
    lhs = stat.evaluate(z, y2) - stat.evaluate(z, y)
    rhs = stat.evaluate(a, y2) - stat.evaluate(a, y)
    if lhs > rhs + _tol(lhs, rhs):
        return {"z": _lst(z), "a": _lst(a), "y": _lst(y), "eta": _lst(eta),
                "gain_under_z": lhs, "gain_under_a": rhs}
    return None


def exact_law(stat: Statistic, mech, y, cap: int = 100_000) -> list[tuple[float, float]]:
    """Atoms of t(Z, y) under an enumerable mechanism."""
    A, probs = mech.enumerate_matrix(cap)
    vals = stat.evaluate_many(A, np.asarray(y, dtype=float))
    w = np.full(A.shape[0], 1.0 / A.shape[0]) if probs is None else probs
    out: dict[float, list[float]] = {}
    for v, p in zip(vals.tolist(), w.tolist()):
        out.setdefault(v, []).append(p)
    return sorted((v, math.fsum(ps)) for v, ps in out.items())


def distribution_free_violation(stat: Statistic, mech, y1, y2) -> dict | None:
    law1, law2 = exact_law(stat, mech, y1), exact_law(stat, mech, y2)
    same = len(law1) == len(law2) and all(
        abs(v1 - v2) <= _tol(v1, v2) and abs(p1 - p2) <= 1e-12
        for (v1, p1), (v2, p2) in zip(law1, law2)
    )
    if same:
        return None
    return {"y1": _lst(y1), "y2": _lst(y2), "law1": law1, "law2": law2}


@dataclass
class PropertyReport:
    statistic: str
    property: str
    trials: int
    holds: bool
    counterexample: dict | None = None
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "property": self.property,
            "trials": self.trials,
            "holds": self.holds,
            "counterexample": self.counterexample,
        }


def check_property(stat: Statistic, prop: str, mech, trials: int = 1000, seed: int = 0,
                   low: int = -3, high: int = 3) -> PropertyReport:
    """Search for a counterexample on integer lattices ``{low..high}^n``.

    Assignments are drawn from ``mech``; effects ``eta`` are drawn from
    ``{0..high}`` and control shifts ``xi`` from ``{low..0}``.  Finding no
    counterexample is evidence, not proof.
    """
    if prop not in PROPERTIES:
        raise ValueError(f"unknown property {prop!r}; choose from {PROPERTIES}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), PROPERTIES.index(prop)]))
    n = mech.n

    def lattice(lo, hi):
        return rng.integers(lo, hi + 1, size=n).astype(float)

    def draw_z():
        return mech.sample(int(rng.integers(0, 2**63)), 0)

    if prop == DISTRIBUTION_FREE:
        base = lattice(low, high)
        for t in range(trials):
            found = distribution_free_violation(stat, mech, base, lattice(low, high))
            if found:
                return PropertyReport(stat.name, prop, t + 1, False, found)
        return PropertyReport(stat.name, prop, trials, True)

    for t in range(trials):
        z = draw_z()
        y = lattice(low, high)
        eta = lattice(0, high)
        if prop == EFFECT_INCREASING:
            found = effect_increasing_violation(stat, z, y, eta, lattice(low, 0))
        else:
            found = differential_increasing_violation(stat, z, draw_z(), y, eta)
        if found:
            return PropertyReport(stat.name, prop, t + 1, False, found)
    return PropertyReport(stat.name, prop, trials, True)


def parse_statistic(text: str, n: int, tie: TieMethod, mech=None, scores: ScoreVector | None = None) -> Statistic:
    """Build a statistic from a short name.

    ``dim``, ``ht`` (needs ``mech``), ``wilcoxon``, ``stephenson:<s>``, or
    ``custom`` with an explicit score vector.
    """
    from .ranks import stephenson, wilcoxon

    name, _, arg = text.strip().lower().partition(":")
    if name == "dim":
        return DifferenceInMeans()
    if name in ("ht", "horvitz-thompson"):
        if mech is None:
            raise ValueError("the Horvitz-Thompson statistic needs the assignment mechanism")
        return HorvitzThompson.for_mechanism(mech)
    if name == "wilcoxon":
        return RankScore(wilcoxon(n), tie, "wilcoxon")
    if name == "stephenson":
        s = int(arg) if arg else 10
        return RankScore(stephenson(n, s), tie, f"stephenson:{s}")
    if name == "custom":
        if scores is None:
            raise ValueError("custom statistics need a score vector")
        if scores.n != n:
            raise ValueError(f"custom scores have length {scores.n}, data has {n} units")
        return RankScore(scores, tie, "custom")
    raise ValueError(f"unknown statistic {text!r}")
