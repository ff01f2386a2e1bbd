"""Confidence limits by inverting the quantile and bounded-null p-values."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .inference import (
    AssumptionError,
    Plan,
    _check_data,
    worst_case_effects,
    flip_for_lesser,
    null_distribution,
    pvalue_sharp,
    quantile_guard,
)
from .statistics import Statistic


class QuantileEngine:
    """Shared state for repeated quantile p-values on one dataset.

    Holds the reference tail (computed once) and the tie-ordered treated
    units, so ``p_value(k, c)`` is one ranking plus one table lookup.
    """

    def __init__(self, mech, stat, z, y, plan: Plan):
        self.notes = quantile_guard(mech, stat)
        z, y = _check_data(mech, z, y)
        self.mech, self.stat, self.z, self.y, self.plan = mech, stat, z, y, plan
        self.n = y.size
        self.treated = np.flatnonzero(z == 1)
        self.control = np.flatnonzero(z == 0)
        self.m = self.treated.size
        if self.m == 0:
            raise ValueError("no treated units")
        _, _, self.big = worst_case_effects(z, y, self.n, 0.0, stat.tie)
        prio = stat.tie.priority(self.n)
        order = np.lexsort((prio[self.treated], y[self.treated]))
        self._treated_sorted = self.treated[order]
        self.null = null_distribution(mech, stat, y, plan)

    def top(self, k: int) -> np.ndarray:
        """Treated units receiving the large shift under the null for rank ``k``."""
        count = min(self.n - k, self.m)
        return self._treated_sorted[self.m - count:] if count > 0 else self._treated_sorted[:0]

    def p_value(self, k: int, c: float) -> float:
        if not 1 <= k <= self.n:
            raise ValueError(f"k must lie in 1..{self.n}")
        shifted = self.y.copy()
        shifted[self.treated] = self.y[self.treated] - c
        top = self.top(k)
        shifted[top] = self.y[top] - self.big
        return self.null.tail(self.stat.evaluate(self.z, shifted))

    def candidates(self, k: int) -> np.ndarray:
        """Sorted shifts where the p-value can change: treated (not shifted away) minus control."""
        keep = self._treated_sorted[: self.m - min(self.n - k, self.m)]
        if keep.size == 0 or self.control.size == 0:
            return np.array([])
        return np.unique(np.subtract.outer(self.y[keep], self.y[self.control]).ravel())

    def lower_limit(self, k: int, alpha: float, floor: float | None = None) -> tuple[float, bool]:
        """Return ``(limit, attained)`` for the one-sided interval of the k-th smallest effect.

        The interval is ``{c : p(k, c) > alpha}``; ``attained`` is True when
        ``p(k, limit) <= alpha``, i.e. the interval is open at ``limit``.
        ``floor`` is a limit already known to bound this one from below.
        """
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if k <= self.n - self.m:
            return -math.inf, False
        cands = self.candidates(k)
        lo = 0
        if floor is not None and math.isfinite(floor):
            cands = np.unique(np.concatenate([cands[cands >= floor], [floor]]))
            lo = 1  # everything below floor is already rejected
        M = cands.size
        if M == 0:
            return -math.inf, False

        def point(i):
            j, odd = divmod(i, 2)
            if odd:
                return float(cands[j])
            if j == 0:
                return float(cands[0] - max(1.0, abs(cands[0])))
            if j == M:
                return float(cands[-1] + max(1.0, abs(cands[-1])))
            return float((cands[j - 1] + cands[j]) / 2)

        hi = 2 * M
        while lo < hi:
            mid = (lo + hi) // 2
            if self.p_value(k, point(mid)) > alpha:
                hi = mid
            else:
                lo = mid + 1
        if lo == 0:
            return -math.inf, False
        j, odd = divmod(lo, 2)
        if odd:
            return float(cands[j]), False
        return float(cands[j - 1]), True

    def describe(self) -> dict:
        meta = {
            "statistic": self.stat.describe(),
            "plan": self.plan.describe(),
            "mechanism": describe_mechanism(self.mech),
            "n": self.n,
            "m": self.m,
        }
        meta.update(self.notes)
        return meta


def describe_mechanism(mech) -> dict:
    name = type(mech).__name__
    if name == "CRE":
        return {"type": "CRE", "n": mech.n, "m": mech.m}
    if name == "BRE":
        return {"type": "BRE", "n": mech.n, "p": mech.p}
    return {"type": name, "n": mech.n, "rows": mech.space_size()}


@dataclass
class QuantileBand:
    """Per-rank confidence limits for the sorted individual effects.

    ``lower[k-1]`` bounds the k-th smallest effect from below; the
    ``attained`` flags mark limits excluded from the interval (open end).
    Two-sided and lesser-side bands also carry ``upper`` limits.
    """

    alpha: float
    side: str
    lower: np.ndarray
    lower_attained: np.ndarray
    upper: np.ndarray | None = None
    upper_attained: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def level(self) -> float:
        return 1.0 - self.alpha

    def rows(self) -> list[dict]:
        out = []
        for k in range(1, self.n + 1):
            row = {"k": k, "rank_from_top": self.n - k + 1,
                   "lower_limit": float(self.lower[k - 1]),
                   "attained": bool(self.lower_attained[k - 1])}
            if self.upper is not None:
                row["upper_limit"] = float(self.upper[k - 1])
                row["upper_attained"] = bool(self.upper_attained[k - 1])
            out.append(row)
        return out

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else v)
                             for k, v in row.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"level": self.level, "alpha": self.alpha, "side": self.side,
                "rows": [{k: _json_float(v) for k, v in r.items()} for r in self.rows()],
                "metadata": self.metadata}


def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


def ci_quantile_lower(engine: QuantileEngine, k: int, alpha: float) -> tuple[float, bool]:
    return engine.lower_limit(k, alpha)


def band_all_quantiles(engine: QuantileEngine, alpha: float, prune: bool = True) -> QuantileBand:
    """Lower limits for every rank, simultaneously valid at level 1 - alpha."""
    n = engine.n
    lower = np.full(n, -math.inf)
    attained = np.zeros(n, dtype=bool)
    floor = None
    for k in range(1, n + 1):
        lim, att = engine.lower_limit(k, alpha, floor if prune else None)
        lower[k - 1], attained[k - 1] = lim, att
        if math.isfinite(lim):
            floor = lim
    meta = engine.describe()
    meta["alpha"] = alpha
    return QuantileBand(alpha, "greater", lower, attained, metadata=meta)


@dataclass
class CountBound:
    threshold: float
    bound: int
    n: int
    level: float

    def to_dict(self):
        return {"threshold": self.threshold, "lower_bound": self.bound, "n": self.n,
                "interval": [self.bound, self.n], "level": self.level}


def ci_count_lower(band: QuantileBand, c: float) -> CountBound:
    """Lower confidence bound on the number of units with effect above ``c``."""
    if band.side != "greater":
        raise ValueError("count bounds come from a greater-side band")
    c = float(c)
    excluded = (band.lower > c) | ((band.lower == c) & band.lower_attained)
    return CountBound(c, int(np.count_nonzero(excluded)), band.n, band.level)


def count_lower_direct(engine: QuantileEngine, c: float, alpha: float) -> int:
    """Same bound found by a search over k of ``p(k, c) > alpha``."""
    n, m = engine.n, engine.m
    lo, hi = n - m, n  # p(k, c) = 1 for k <= n - m
    if lo < 1:
        lo = 0
    # largest k in [lo, hi] with p > alpha; k = lo always qualifies (or is 0)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if engine.p_value(mid, c) > alpha:
            lo = mid
        else:
            hi = mid - 1
    return n - lo


# ---------------------------------------------------------------------------
# max effect, range, two-sided

def max_effect_lower(mech, stat: Statistic, z, y, alpha: float, plan: Plan,
                     rel_tol: float = 1e-12) -> tuple[float, bool]:
    """Lower confidence limit for the largest individual effect.

    Rank-score statistics use the exact candidate-set inversion.  Other
    statistics whose bounded-null p-value is monotone in a constant shift
    (differential increasing, or effect increasing and distribution free)
    are inverted by bisection to ``rel_tol``; ``attained`` is then False.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    try:
        quantile_guard(mech, stat)
        rank_ok = True
    except AssumptionError:
        rank_ok = False
    if rank_ok:
        eng = QuantileEngine(mech, stat, z, y, plan)
        return eng.lower_limit(eng.n, alpha)
    if not (stat.differential_increasing or (stat.effect_increasing and stat.distribution_free)):
        raise AssumptionError(
            f"statistic {stat.name!r} does not give a p-value monotone in the effect bound; "
            "it needs to be differential increasing, or effect increasing and distribution free"
        )
    z, y = _check_data(mech, z, y)
    n = y.size
    span = float(y.max() - y.min()) + 1.0

    def p(c):
        return pvalue_sharp(mech, stat, z, y, c, plan).p

    lo, hi = -2.0 * n * span, 2.0 * n * span
    if p(lo) > alpha:
        return -math.inf, False
    while p(hi) <= alpha:
        hi *= 2.0
    while hi - lo > rel_tol * max(1.0, abs(hi)):
        mid = (lo + hi) / 2
        if mid in (lo, hi):
            break
        if p(mid) > alpha:
            hi = mid
        else:
            lo = mid
    return hi, False


@dataclass
class RangeResult:
    limit: float
    rejected: bool
    max_lower: float
    min_upper: float
    alpha: float

    def to_dict(self):
        return {"range_lower_limit": self.limit, "constant_effect_rejected": self.rejected,
                "max_effect_lower": _json_float(self.max_lower),
                "min_effect_upper": _json_float(self.min_upper), "alpha": self.alpha}


def range_from_limits(max_lower: float, min_upper: float, alpha: float) -> RangeResult:
    diff = max_lower - min_upper
    limit = diff if (math.isfinite(diff) and diff > 0) else 0.0
    return RangeResult(limit, limit > 0, max_lower, min_upper, alpha)


def effect_range(mech, stat: Statistic, z, y, alpha: float, plan: Plan) -> RangeResult:
    """Lower confidence limit for max effect minus min effect; positive means effects are not constant."""
    max_lower, _ = max_effect_lower(mech, stat, z, y, alpha / 2, plan)
    fz, fy = flip_for_lesser(z, y)
    neg_lower, _ = max_effect_lower(mech, stat, fz, fy, alpha / 2, plan)
    return range_from_limits(max_lower, -neg_lower, alpha)


def lesser_band(mech, stat, z, y, alpha: float, plan: Plan) -> QuantileBand:
    """Upper limits for every sorted effect, from the negated data."""
    fz, fy = flip_for_lesser(z, y)
    neg = band_all_quantiles(QuantileEngine(mech, stat, fz, fy, plan), alpha)
    upper = -neg.lower[::-1]
    upper_att = neg.lower_attained[::-1].copy()
    n = upper.size
    meta = dict(neg.metadata)
    return QuantileBand(alpha, "less", np.full(n, -math.inf), np.zeros(n, dtype=bool),
                        upper, upper_att, meta)


def two_sided_band(mech, stat, z, y, alpha: float, plan: Plan) -> QuantileBand:
    """Greater- and lesser-side bands at alpha/2 each, combined per rank."""
    lower = band_all_quantiles(QuantileEngine(mech, stat, z, y, plan), alpha / 2)
    upper = lesser_band(mech, stat, z, y, alpha / 2, plan)
    meta = dict(lower.metadata)
    meta["alpha"] = alpha
    return QuantileBand(alpha, "two-sided", lower.lower, lower.lower_attained,
                        upper.upper, upper.upper_attained, meta)


def max_effect_band(mech, stat, z, y, alpha: float, plan: Plan, side: str = "greater") -> QuantileBand:
    """Band for statistics without quantile inversion: only the extreme effects get finite limits.

    The greater side bounds the largest effect (rank n) and the lesser side
    the smallest (rank 1); every other limit is the trivial infinite one.
    """
    n = np.asarray(y).size
    lower = np.full(n, -math.inf)
    upper = np.full(n, math.inf)
    a_side = alpha / 2 if side == "two-sided" else alpha
    if side in ("greater", "two-sided"):
        lower[-1], _ = max_effect_lower(mech, stat, z, y, a_side, plan)
    if side in ("less", "two-sided"):
        fz, fy = flip_for_lesser(z, y)
        neg, _ = max_effect_lower(mech, stat, fz, fy, a_side, plan)
        upper[0] = -neg
    meta = {"statistic": stat.describe(), "plan": plan.describe(),
            "mechanism": describe_mechanism(mech), "alpha": alpha,
            "note": "this statistic only bounds the extreme effects; other ranks are unbounded"}
    flags = np.zeros(n, dtype=bool)
    if side == "greater":
        return QuantileBand(alpha, side, lower, flags, metadata=meta)
    return QuantileBand(alpha, side, lower, flags, upper, flags.copy(), meta)


def band_for(mech, stat, z, y, alpha: float, plan: Plan, side: str = "greater") -> QuantileBand:
    """Dispatch on side and on whether the statistic supports quantile inversion."""
    if side not in ("greater", "less", "two-sided"):
        raise ValueError("side must be greater, less or two-sided")
    try:
        quantile_guard(mech, stat)
    except AssumptionError:
        return max_effect_band(mech, stat, z, y, alpha, plan, side)
    if side == "greater":
        return band_all_quantiles(QuantileEngine(mech, stat, z, y, plan), alpha)
    if side == "less":
        return lesser_band(mech, stat, z, y, alpha, plan)
    return two_sided_band(mech, stat, z, y, alpha, plan)
