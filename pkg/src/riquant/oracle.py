"""Brute-force reference computations for small instances.

Everything here is written from the definitions, with exact rational
probabilities, and shares nothing with the production p-value code except
statistic evaluation.  Used by the test-suite and the acceptance harness.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

ORACLE_CAP = 100_000


@dataclass
class OracleReport:
    instance: dict
    production: float
    oracle: float
    counterexample: dict | None = None

    @property
    def match(self) -> bool:
        return self.production == self.oracle


def _support(mech):
    """(bits, Fraction probability) for every assignment with positive probability."""
    kind = type(mech).__name__
    n = mech.n
    if kind == "Explicit":
        rows = list(zip(mech.assignments, mech.probabilities))
        if len(rows) > ORACLE_CAP:
            raise ValueError("oracle capacity exceeded")
        return [(tuple(r), Fraction(p)) for r, p in rows if p > 0]
    if 2 ** n > 4 * ORACLE_CAP:
        raise ValueError("oracle capacity exceeded")
    out = []
    if kind == "CRE":
        total = math.comb(n, mech.m)
        if total > ORACLE_CAP:
            raise ValueError("oracle capacity exceeded")
        for bits in itertools.product((1, 0), repeat=n):
            if sum(bits) == mech.m:
                out.append((bits, Fraction(1, total)))
    elif kind == "BRE":
        p = Fraction(mech.p)
        for bits in itertools.product((1, 0), repeat=n):
            k = sum(bits)
            out.append((bits, p ** k * (1 - p) ** (n - k)))
    else:
        raise TypeError(f"unknown mechanism {kind}")
    return out


def _tie_position(stat, n):
    """Per-unit tie-break key, from the definition of each rule."""
    tie = stat.tie
    if tie.kind == "first":
        return list(range(n))
    if tie.kind == "last":
        return [-i for i in range(n)]
    if tie.kind == "random":
        pos = [0] * n
        for j, unit in enumerate(tie.permutation):
            pos[unit] = j
        return pos
    raise ValueError("average ties have no ordering")


def _big_shift(y, c):
    # deliberately different from the production constant
    return 4.0 * (max(y) - min(y)) + abs(c) + 10.0


def oracle_worst_case_effects(stat, z, y, k, c):
    """Worst-case effect vector, built independently of the production helper."""
    n = len(y)
    key = _tie_position(stat, n)
    treated = [i for i in range(n) if z[i] == 1]
    count = min(n - k, len(treated))
    ranked = sorted(treated, key=lambda i: (y[i], key[i]))
    top = set(ranked[len(ranked) - count:]) if count else set()
    big = _big_shift(y, c)
    return [big if i in top else float(c) for i in range(n)], top


def brute_pvalue(mech, stat, z, y, delta=None, k=None, c=None, alt: bool = False) -> float:
    """Literal sum over the assignment space.

    * ``delta`` given: sharp-null p-value (``alt=True`` gives the re-imputed variant).
    * ``(k, c)`` given: p-value at the worst-case effect vector for the quantile null.
    """
    n = len(y)
    z = [int(v) for v in z]
    y = [float(v) for v in y]
    if k is not None:
        delta, _ = oracle_worst_case_effects(stat, z, y, k, c)
    elif delta is None:
        raise ValueError("give delta or (k, c)")
    if np.ndim(delta) == 0:
        delta = [float(delta)] * n
    delta = [float(d) for d in delta]
    y0 = [y[i] - delta[i] if z[i] else y[i] for i in range(n)]
    y1 = [y[i] if z[i] else y[i] + delta[i] for i in range(n)]
    if alt:
        cutoff = stat.evaluate(np.array(z), np.array(y))
    else:
        cutoff = stat.evaluate(np.array(z), np.array(y0))
    total = Fraction(0)
    for bits, prob in _support(mech):
        a = np.array(bits)
        if alt:
            ya = np.array([y1[i] if bits[i] else y0[i] for i in range(n)])
        else:
            ya = np.array(y0)
        if stat.evaluate(a, ya) >= cutoff:
            total += prob
    return float(total)


@dataclass
class SubsetMinimum:
    minimum: float
    argmins: list
    probe_violations: list = field(default_factory=list)
    probes: int = 0


def brute_min_over_Hkc(stat, z, y, k, c, probes: int = 1000, seed: int = 0) -> SubsetMinimum:
    """Minimum of ``t(z, y - z*xi_J)`` over treated subsets ``J`` of the size the null allows.

    Also draws random effect vectors with at most ``n - k`` entries above
    ``c`` and records any whose statistic falls below that minimum.
    """
    z = [int(v) for v in z]
    y = [float(v) for v in y]
    n = len(y)
    treated = [i for i in range(n) if z[i] == 1]
    if len(treated) > 12:
        raise ValueError("oracle capacity exceeded (more than 12 treated)")
    size = min(n - k, len(treated))
    big = _big_shift(y, c)
    zarr = np.array(z)
    best, arg = math.inf, []
    for J in itertools.combinations(treated, size):
        xi = np.array([big if i in J else float(c) for i in range(n)])
        t = stat.evaluate(zarr, np.array(y) - zarr * xi)
        if t < best:
            best, arg = t, [set(J)]
        elif t == best:
            arg.append(set(J))

    rng = np.random.default_rng(seed)
    span = max(y) - min(y) + 1.0
    bad = []
    for _ in range(probes):
        above = rng.permutation(n)[: rng.integers(0, n - k + 1)]
        delta = c - rng.choice([0.0, 1.0]) * rng.uniform(0, 2 * span, size=n)
        delta[above] = c + rng.uniform(1e-9, 3 * span, size=above.size)
        t = stat.evaluate(zarr, np.array(y) - zarr * delta)
        if t < best:
            bad.append({"delta": delta.tolist(), "t": t})
    return SubsetMinimum(best, arg, bad, probes)


@dataclass
class AuditReport:
    assignments: int
    rejection: dict
    coverage: dict

    def to_dict(self):
        return {"assignments": self.assignments, "rejection_rate": self.rejection,
                "simultaneous_coverage": self.coverage}


def validity_audit(y0, y1, mech, stat, alphas, delta=None, band: bool = False, plan=None) -> AuditReport:
    """Run the production procedures on every assignment of a fixed potential-outcome table.

    ``rejection[alpha]`` is the exact probability that the bounded-null
    p-value at ``delta`` (default 0) is at most alpha.  With ``band=True``,
    ``coverage[alpha]`` is the exact probability that the greater-side band
    covers every sorted true effect at once.
    """
    from .inference import Plan, pvalue_sharp
    from .intervals import QuantileEngine, band_all_quantiles

    plan = plan or Plan.exact()
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    tau_sorted = np.sort(y1 - y0)
    delta = np.zeros(y0.size) if delta is None else np.asarray(delta, dtype=float)
    rej = {a: Fraction(0) for a in alphas}
    cov = {a: Fraction(0) for a in alphas}
    support = _support(mech)
    for bits, prob in support:
        a = np.array(bits)
        y = np.where(a == 1, y1, y0)
        p = pvalue_sharp(mech, stat, a, y, delta, plan, bounded=True).p
        for al in alphas:
            if p <= al:
                rej[al] += prob
        if band:
            eng = QuantileEngine(mech, stat, a, y, plan)
            for al in alphas:
                b = band_all_quantiles(eng, al)
                inside = (tau_sorted > b.lower) | ((tau_sorted == b.lower) & ~b.lower_attained)
                if inside.all():
                    cov[al] += prob
    return AuditReport(len(support), {a: float(v) for a, v in rej.items()},
                       {a: float(v) for a, v in cov.items()} if band else {})
