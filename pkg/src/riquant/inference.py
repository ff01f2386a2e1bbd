"""Randomization p-values for sharp, bounded and quantile nulls."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .assignment import DEFAULT_CAP
from .ranks import TieMethod
from .statistics import RankScore, Statistic


class AssumptionError(ValueError):
    """The requested inference is not justified for this statistic or mechanism."""


# ---------------------------------------------------------------------------
# plans and hypotheses

@dataclass(frozen=True)
class Plan:
    """Exact enumeration (``mode="exact"``) or seeded Monte Carlo (``mode="mc"``).

    Monte Carlo p-values are ``(1 + hits) / (R + 1)`` unless
    ``observed_correction`` is switched off, in which case ``hits / R``.
    """

    mode: str = "exact"
    cap: int = DEFAULT_CAP
    draws: int = 10_000
    seed: int = 0
    observed_correction: bool = True

    def __post_init__(self):
        if self.mode not in ("exact", "mc"):
            raise ValueError(f"plan mode must be 'exact' or 'mc', got {self.mode!r}")
        if self.mode == "mc" and self.draws < 100:
            raise ValueError("Monte Carlo plans need at least 100 draws")

    @classmethod
    def exact(cls, cap: int = DEFAULT_CAP) -> "Plan":
        return cls("exact", cap=cap)

    @classmethod
    def monte_carlo(cls, draws: int = 10_000, seed: int = 0, observed_correction: bool = True) -> "Plan":
        return cls("mc", draws=draws, seed=seed, observed_correction=observed_correction)

    @classmethod
    def auto(cls, mech, cap: int = DEFAULT_CAP, draws: int = 10_000, seed: int = 0) -> "Plan":
        """Exact when the space fits under ``cap``, Monte Carlo otherwise."""
        if mech.space_size() <= cap:
            return cls.exact(cap)
        return cls.monte_carlo(draws, seed)

    def describe(self) -> dict:
        if self.mode == "exact":
            return {"mode": "exact", "cap": self.cap}
        return {"mode": "mc", "draws": self.draws, "seed": self.seed,
                "observed_correction": self.observed_correction}


@dataclass(frozen=True)
class Sharp:
    """tau = delta exactly; with ``bounded=True`` read as tau <= delta elementwise."""

    delta: tuple
    bounded: bool = False

    def describe(self):
        return {"type": "sharp", "bounded": self.bounded, "delta": list(self.delta)}


@dataclass(frozen=True)
class BoundedConstant:
    """Every effect at most ``c`` (side="le") or at least ``c`` (side="ge")."""

    c: float
    side: str = "le"

    def __post_init__(self):
        if self.side not in ("le", "ge"):
            raise ValueError("side must be 'le' or 'ge'")

    def describe(self):
        return {"type": "bounded_constant", "c": self.c, "side": self.side}


@dataclass(frozen=True)
class QuantileAtMost:
    """The k-th smallest effect is at most ``c``."""

    k: int
    c: float

    def describe(self):
        return {"type": "quantile_at_most", "k": self.k, "c": self.c}


Hypothesis = Union[Sharp, BoundedConstant, QuantileAtMost]


@dataclass
class PValueResult:
    p: float
    hypothesis: object
    statistic_value: float
    plan: Plan
    xi: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "p_value": self.p,
            "hypothesis": self.hypothesis.describe() if hasattr(self.hypothesis, "describe") else self.hypothesis,
            "statistic_value": self.statistic_value,
            "plan": self.plan.describe(),
        }
        if self.xi is not None:
            d["xi"] = [float(v) for v in self.xi]
        d.update(self.metadata)
        return d


# ---------------------------------------------------------------------------
# null distributions

@dataclass
class NullDistribution:
    """Sorted atoms of a reference distribution with a tail query.

    For uniform mechanisms and Monte Carlo draws the weights are integer
    counts, so tail probabilities are a single correctly rounded division.
    """

    values: np.ndarray
    counts: np.ndarray | None
    probs: np.ndarray | None
    total: int
    exact: bool
    observed_correction: bool = False
    _suffix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.counts is not None:
            suffix = np.concatenate([np.cumsum(self.counts[::-1])[::-1], [0]])
        else:
            suffix = np.concatenate([np.cumsum(self.probs[::-1])[::-1], [0.0]])
        self._suffix = suffix

    @classmethod
    def from_values(cls, vals: np.ndarray, probs: np.ndarray | None, exact: bool,
                    observed_correction: bool = False) -> "NullDistribution":
        if probs is None:
            values, counts = np.unique(vals, return_counts=True)
            return cls(values, counts.astype(np.int64), None, int(vals.size), exact, observed_correction)
        values, inv = np.unique(vals, return_inverse=True)
        grouped = [[] for _ in range(values.size)]
        for i, p in zip(inv.tolist(), probs.tolist()):
            grouped[i].append(p)
        return cls(values, None, np.array([math.fsum(g) for g in grouped]), int(vals.size), exact)

    def hits(self, c: float) -> int:
        """Number of draws (or assignments) with value >= c; count-weighted only."""
        return int(self._suffix[np.searchsorted(self.values, c, side="left")])

    def tail(self, c: float) -> float:
        """P(T >= c)."""
        idx = int(np.searchsorted(self.values, c, side="left"))
        if self.counts is None:
            return float(min(1.0, max(0.0, self._suffix[idx])))
        hits = int(self._suffix[idx])
        if self.exact or not self.observed_correction:
            return hits / self.total
        return (hits + 1) / (self.total + 1)

    def atoms(self) -> list[tuple[float, float]]:
        if self.counts is None:
            return list(zip(self.values.tolist(), self.probs.tolist()))
        return [(v, c / self.total) for v, c in zip(self.values.tolist(), self.counts.tolist())]


_NULL_CACHE: dict = {}
_NULL_LOCK = threading.Lock()


def _reference_draws(mech, plan: Plan):
    """Assignment matrix and probabilities (None for equal weights)."""
    if plan.mode == "exact":
        return mech.enumerate_matrix(plan.cap)
    return mech.sample_matrix(plan.seed, plan.draws), None


def null_distribution(mech, stat: Statistic, y_ref, plan: Plan) -> NullDistribution:
    """Law of ``t(A, y_ref)`` over the mechanism.

    Distribution-free statistics under exchangeable mechanisms ignore
    ``y_ref`` and are cached per (mechanism, scores, plan).
    """
    key = stat.null_key()
    if key is not None and mech.exchangeable:
        ck = (mech, key, plan)
        with _NULL_LOCK:
            hit = _NULL_CACHE.get(ck)
        if hit is not None:
            return hit
        dist = _build_null(mech, stat, np.arange(mech.n, dtype=float), plan)
        with _NULL_LOCK:
            _NULL_CACHE[ck] = dist
        return dist
    return _build_null(mech, stat, np.asarray(y_ref, dtype=float), plan)


def _build_null(mech, stat, y_ref, plan) -> NullDistribution:
    A, probs = _reference_draws(mech, plan)
    vals = stat.evaluate_many(A, y_ref)
    return NullDistribution.from_values(vals, probs, plan.mode == "exact", plan.observed_correction)


def clear_null_cache() -> None:
    with _NULL_LOCK:
        _NULL_CACHE.clear()


# ---------------------------------------------------------------------------
# helpers

def _vec(x, n=None, name="vector") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 and n is not None:
        arr = np.full(n, float(arr))
    if n is not None and arr.shape != (n,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    return arr


def _check_data(mech, z, y):
    z = np.asarray(z)
    if z.ndim != 1 or z.size != mech.n:
        raise ValueError(f"assignment has length {z.size}, mechanism has n={mech.n}")
    if not np.isin(z, (0, 1)).all():
        raise ValueError("assignment entries must be 0 or 1")
    y = _vec(y, mech.n, "outcomes")
    if np.isnan(y).any():
        raise ValueError("outcomes contain NaN")
    return z.astype(np.int8), y


def impute_control(z, y, delta) -> np.ndarray:
    """Control outcomes implied by effects ``delta``: ``y - z * delta``."""
    z = np.asarray(z)
    y = np.asarray(y, dtype=float)
    delta = _vec(delta, y.size, "delta")
    return np.where(z == 1, y - delta, y)


def flip_for_lesser(z, y):
    """Negate outcomes: greater-side procedures on the result give lesser-side inference.

    Effects of the negated data are the negated effects, the assignment and
    mechanism stay the same, and applying it twice restores the input.
    """
    return np.asarray(z).copy(), -np.asarray(y, dtype=float)


def switch_arms(z, y):
    """Swap treatment labels and negate outcomes.

    Effects are unchanged; the control-imputation machinery then imputes
    treated potential outcomes instead.  The mechanism must be replaced by
    its mirror (CRE(n, m) becomes CRE(n, n-m)).
    """
    return 1 - np.asarray(z), -np.asarray(y, dtype=float)


def _p_from(values: np.ndarray, probs, cutoff: float, plan: Plan) -> float:
    mask = values >= cutoff
    if probs is not None:
        return float(min(1.0, math.fsum(probs[mask].tolist())))
    hits = int(np.count_nonzero(mask))
    total = values.size
    if plan.mode == "mc" and plan.observed_correction:
        return (hits + 1) / (total + 1)
    return hits / total


def _require_bounded_ok(stat: Statistic):
    if not (stat.effect_increasing or stat.differential_increasing):
        raise AssumptionError(
            f"statistic {stat.name!r} is neither effect increasing nor differential increasing; "
            "the p-value is only valid for the sharp null, not for a bounded null"
        )


# ---------------------------------------------------------------------------
# p-values

def pvalue_sharp(mech, stat: Statistic, z, y, delta, plan: Plan, bounded: bool = False) -> PValueResult:
    """``P(t(A, y0) >= t(z, y0))`` with ``y0 = y - z * delta``.

    ``bounded=True`` asks for the bounded-null reading (effects at most
    ``delta``), which requires an effect-increasing or differential-increasing
    statistic.
    """
    z, y = _check_data(mech, z, y)
    delta = _vec(delta, mech.n, "delta")
    if bounded:
        _require_bounded_ok(stat)
    y0 = impute_control(z, y, delta)
    observed = stat.evaluate(z, y0)
    dist = null_distribution(mech, stat, y0, plan)
    return PValueResult(dist.tail(observed), Sharp(tuple(delta.tolist()), bounded), observed, plan)


def pvalue_sharp_alt(mech, stat: Statistic, z, y, delta, plan: Plan) -> PValueResult:
    """Alternative p-value comparing ``t(a, y0 + a * delta)`` with the raw ``t(z, y)``."""
    z, y = _check_data(mech, z, y)
    delta = _vec(delta, mech.n, "delta")
    if not stat.effect_increasing:
        raise AssumptionError(
            f"statistic {stat.name!r} is not effect increasing; the re-imputed p-value is not valid for it"
        )
    y0 = impute_control(z, y, delta)
    y1 = np.where(z == 1, y, y + delta)
    observed = stat.evaluate(z, y)
    A, probs = _reference_draws(mech, plan)
    Y = np.where(A == 1, y1[None, :], y0[None, :])
    vals = stat.evaluate_rows(A, Y)
    p = _p_from(vals, probs, observed, plan)
    return PValueResult(p, Sharp(tuple(delta.tolist()), True), observed, plan,
                        metadata={"variant": "reimputed"})


def worst_case_effects(z, y, k: int, c: float, tie: TieMethod):
    """Worst-case effect vector for the null "k-th smallest effect <= c".

    Returns ``(xi, treated_top, big)`` where ``treated_top`` holds the treated
    units with the ``min(n-k, m)`` largest outcomes (ties broken by ``tie``),
    which receive the large shift ``big``; every other unit gets ``c``.
    """
    z = np.asarray(z)
    y = np.asarray(y, dtype=float)
    n = y.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}, got {k}")
    treated = np.flatnonzero(z == 1)
    control = np.flatnonzero(z == 0)
    if treated.size == 0:
        raise ValueError("no treated units: the quantile null is untestable")
    count = min(n - k, treated.size)
    span = float(y.max() - y.min())
    gap = float(y[treated].max() - y[control].min()) if control.size else 0.0
    big = gap + max(1.0, span)
    if count:
        prio = tie.priority(n)
        order = np.lexsort((prio[treated], y[treated]))
        top = np.sort(treated[order[-count:]])
    else:
        top = np.array([], dtype=np.int64)
    xi = np.full(n, float(c))
    xi[top] = big
    return xi, top, big


def quantile_guard(mech, stat: Statistic) -> dict:
    """Raise unless the quantile machinery applies; return metadata flags."""
    if not mech.exchangeable:
        raise AssumptionError(
            "quantile inference needs an exchangeable assignment mechanism "
            "(declare and verify exchangeability for explicit tables)"
        )
    ties = stat.rank_score_ties
    if not isinstance(stat, RankScore) or ties is None:
        raise AssumptionError(
            "quantile inference needs a rank-score statistic with nondecreasing scores and "
            "first, last or random tie-breaking (average ties are not supported)"
        )
    if ties == "last":
        return {"tie_note": "last-index tie breaking is outside the validated first/random rule"}
    return {}


def pvalue_quantile(mech, stat: RankScore, z, y, k: int, c: float, plan: Plan) -> PValueResult:
    """Valid p-value for "the k-th smallest individual effect is at most c"."""
    meta = quantile_guard(mech, stat)
    z, y = _check_data(mech, z, y)
    xi, top, big = worst_case_effects(z, y, k, c, stat.tie)
    shifted = y - z * xi
    observed = stat.evaluate(z, shifted)
    dist = null_distribution(mech, stat, shifted, plan)
    meta.update({"shifted_units": top.tolist(), "shift": big})
    return PValueResult(dist.tail(observed), QuantileAtMost(int(k), float(c)), observed, plan, xi, meta)


def run_test(mech, stat: Statistic, z, y, hypothesis, plan: Plan) -> PValueResult:
    """Dispatch on the hypothesis type."""
    if isinstance(hypothesis, Sharp):
        return pvalue_sharp(mech, stat, z, y, hypothesis.delta, plan, bounded=hypothesis.bounded)
    if isinstance(hypothesis, BoundedConstant):
        if hypothesis.side == "le":
            res = pvalue_sharp(mech, stat, z, y, hypothesis.c, plan, bounded=True)
        else:
            fz, fy = flip_for_lesser(z, y)
            res = pvalue_sharp(mech, stat, fz, fy, -hypothesis.c, plan, bounded=True)
        res.hypothesis = hypothesis
        return res
    if isinstance(hypothesis, QuantileAtMost):
        return pvalue_quantile(mech, stat, z, y, hypothesis.k, hypothesis.c, plan)
    raise TypeError(f"unsupported hypothesis {hypothesis!r}")
