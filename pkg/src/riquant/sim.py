"""Simulation studies: power for the bounded null, count bounds, Neyman comparison.

A scenario fixes a potential-outcome table (finite-population regime) and
redraws only the assignment in each replication, unless ``superpopulation``
is set, in which case the table is regenerated every replication.
Every random quantity is keyed by the scenario seed, so reports do not
depend on the number of worker processes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from statistics import NormalDist

import numpy as np

from .assignment import CRE
from .inference import Plan, pvalue_sharp
from .intervals import QuantileEngine, count_lower_direct
from .ranks import TieMethod
from .statistics import parse_statistic

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


# ---------------------------------------------------------------------------
# data generating processes

@dataclass(frozen=True)
class NormalEffects:
    tau0: float = 0.0
    sigma: float = 0.0
    standardize: bool = True


@dataclass(frozen=True)
class Mixture:
    main_effect: float = 2.0
    outlier_effect: float = -50.0
    outlier_fraction: float = 0.05

    def __post_init__(self):
        if not 0 <= self.outlier_fraction <= 1:
            raise ValueError("outlier fraction must lie in [0, 1]")


@dataclass(frozen=True)
class HeavyTailNull:
    df: float = 1.5
    skew: float = 5.0

    def __post_init__(self):
        if self.df <= 0 or self.skew <= 0:
            raise ValueError("df and skew must be positive")


@dataclass(frozen=True)
class ConstantEffect:
    c: float = 0.0


@dataclass(frozen=True)
class Population:
    """Control outcomes plus unit effects; the effects are stored, not recovered by subtraction."""
    y0: np.ndarray
    tau: np.ndarray

    @property
    def y1(self) -> np.ndarray:
        return self.y0 + self.tau

    def observe(self, z) -> np.ndarray:
        return np.where(np.asarray(z) == 1, self.y1, self.y0)


def standardize(x: np.ndarray) -> np.ndarray:
    """Mean 0, sample sd 1 (n - 1 denominator)."""
    x = x - x.mean()
    x = x / x.std(ddof=1)
    return x - x.mean()


def skewed_t(rng: np.random.Generator, size: int, df: float, skew: float) -> np.ndarray:
    """Fernandez-Steel skewed Student-t: positive half scaled by ``skew``, negative by ``1/skew``."""
    t = np.abs(rng.standard_t(df, size=size))
    right = rng.random(size) < skew**2 / (1 + skew**2)
    return np.where(right, skew * t, -t / skew)


def generate_population(dgp, n: int, seed, outlier: tuple[int, float] | None = None) -> Population:
    """Draw a fixed potential-outcome table."""
    rng = np.random.default_rng(seed)
    if isinstance(dgp, NormalEffects):
        y0 = rng.standard_normal(n)
        eps = rng.standard_normal(n)
        if dgp.standardize:
            y0, eps = standardize(y0), standardize(eps)
        tau = dgp.tau0 + dgp.sigma * eps
    elif isinstance(dgp, Mixture):
        y0 = rng.standard_normal(n)
        n_out = int(round(dgp.outlier_fraction * n))
        tau = np.full(n, float(dgp.main_effect))
        tau[rng.permutation(n)[:n_out]] = dgp.outlier_effect
    elif isinstance(dgp, HeavyTailNull):
        y0 = skewed_t(rng, n, dgp.df, dgp.skew)
        tau = np.zeros(n)
    elif isinstance(dgp, ConstantEffect):
        y0 = rng.standard_normal(n)
        tau = np.full(n, float(dgp.c))
    else:
        raise TypeError(f"unknown data generating process {dgp!r}")
    if outlier is not None:
        units, value = outlier
        pick = rng.permutation(n)[: int(units)]
        y0 = y0.copy()
        y0[pick] = value
        tau = tau.copy()
        tau[pick] = 0.0
    return Population(y0, tau)


# ---------------------------------------------------------------------------
# scenarios

@dataclass
class Scenario:
    n: int = 120
    treated: int = 60
    dgp: object = field(default_factory=NormalEffects)
    sigmas: tuple = (0.0,)
    replications: int = 500
    alpha: float = 0.1
    statistics: tuple = ("dim", "wilcoxon", "stephenson:10")
    metric: str = "power"
    threshold: float = 0.0
    plan_mode: str = "mc"
    draws: int = 2000
    seed: int = 0
    outlier: tuple | None = None
    superpopulation: bool = False
    ties: str = "random"

    def __post_init__(self):
        if self.metric not in ("power", "count"):
            raise ValueError("metric must be 'power' or 'count'")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        CRE(self.n, self.treated)
        self.sigmas = tuple(float(s) for s in self.sigmas)
        self.statistics = tuple(self.statistics)

    @property
    def mechanism(self) -> CRE:
        return CRE(self.n, self.treated)

    def plan(self) -> Plan:
        if self.plan_mode == "exact":
            return Plan.exact()
        return Plan.monte_carlo(self.draws, _derive(self.seed, 3))

    def tie(self) -> TieMethod:
        if self.ties == "random":
            return TieMethod.random(self.n, self.seed)
        return TieMethod(self.ties)

    def dgp_at(self, sigma: float):
        if isinstance(self.dgp, NormalEffects):
            return NormalEffects(self.dgp.tau0, sigma, self.dgp.standardize)
        return self.dgp

    def describe(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "dgp"}
        d["dgp"] = {"type": type(self.dgp).__name__, **asdict(self.dgp)}
        if isinstance(self.dgp, HeavyTailNull):
            d["dgp"]["sampler"] = "fernandez-steel"
        return d


_DGPS = {"normal": NormalEffects, "mixture": Mixture, "heavy_tail": HeavyTailNull, "constant": ConstantEffect}


def scenario_from_dict(cfg: dict) -> Scenario:
    cfg = dict(cfg)
    dgp_cfg = dict(cfg.pop("dgp", {"type": "normal"}))
    kind = dgp_cfg.pop("type", "normal")
    if kind not in _DGPS:
        raise ValueError(f"unknown dgp type {kind!r}; choose from {sorted(_DGPS)}")
    sigmas = dgp_cfg.pop("sigma", None)
    dgp = _DGPS[kind](**dgp_cfg)
    if sigmas is not None:
        cfg["sigmas"] = sigmas if isinstance(sigmas, (list, tuple)) else [sigmas]
    plan = cfg.pop("plan", {})
    if plan:
        cfg["plan_mode"] = plan.get("mode", "mc")
        cfg["draws"] = plan.get("draws", 2000)
    out = cfg.pop("outlier", None)
    if out:
        cfg["outlier"] = (int(out.get("units", 1)), float(out.get("value", 10.0)))
    if "treated_fraction" in cfg:
        cfg["treated"] = int(round(cfg.pop("treated_fraction") * cfg.get("n", 120)))
    return Scenario(dgp=dgp, **cfg)


def load_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        return scenario_from_dict(tomllib.load(fh))


def _derive(seed: int, *path: int) -> int:
    state = np.random.SeedSequence([int(seed), *path]).generate_state(1, np.uint64)
    return int(state[0]) & ((1 << 63) - 1)


# ---------------------------------------------------------------------------
# reports

@dataclass
class SimReport:
    rows: list
    scenario: dict
    runtime_seconds: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["statistic", "sigma", "metric", "value", "se", "replications"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_json(self, include_runtime: bool = False) -> str:
        d = {"scenario": self.scenario, "rows": self.rows}
        if include_runtime:
            d["runtime_seconds"] = self.runtime_seconds
        return json.dumps(d, indent=2, sort_keys=True)

    def value(self, statistic: str, sigma: float | None = None) -> float:
        for r in self.rows:
            if r["statistic"] == statistic and (sigma is None or r["sigma"] == sigma):
                return r["value"]
        raise KeyError((statistic, sigma))


def _population(sc: Scenario, grid: int, rep: int) -> Population:
    sigma = sc.sigmas[grid]
    key = (sc.seed, 1, grid, rep) if sc.superpopulation else (sc.seed, 1, grid)
    return generate_population(sc.dgp_at(sigma), sc.n, np.random.SeedSequence(list(key)), sc.outlier)


def _chunk(sc: Scenario, grid: int, reps: range) -> dict:
    """Per-statistic sums (and sums of squares) over a block of replications."""
    mech, plan, tie = sc.mechanism, sc.plan(), sc.tie()
    stats = {name: parse_statistic(name, sc.n, tie, mech) for name in sc.statistics}
    assign_seed = _derive(sc.seed, 2, grid)
    pop = None if sc.superpopulation else _population(sc, grid, 0)
    acc = {name: [0.0, 0.0] for name in sc.statistics}
    for r in reps:
        p_r = _population(sc, grid, r) if sc.superpopulation else pop
        z = mech.sample(assign_seed, r)
        y = p_r.observe(z)
        for name, stat in stats.items():
            if sc.metric == "power":
                v = float(pvalue_sharp(mech, stat, z, y, 0.0, plan, bounded=True).p <= sc.alpha)
            else:
                v = float(count_lower_direct(QuantileEngine(mech, stat, z, y, plan), sc.threshold, sc.alpha))
            acc[name][0] += v
            acc[name][1] += v * v
    return acc


def _split(total: int, parts: int) -> list[range]:
    parts = max(1, min(parts, total))
    step = math.ceil(total / parts)
    return [range(i, min(i + step, total)) for i in range(0, total, step)]


def _run_blocks(sc: Scenario, grid: int, workers: int) -> dict:
    blocks = _split(sc.replications, workers)
    if workers <= 1:
        parts = [_chunk(sc, grid, b) for b in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk, [sc] * len(blocks), [grid] * len(blocks), blocks))
    total = {name: [0.0, 0.0] for name in sc.statistics}
    for part in parts:
        for name, (s, ss) in part.items():
            total[name][0] += s
            total[name][1] += ss
    return total


def run_power_study(sc: Scenario, workers: int = 1) -> SimReport:
    """Rejection rates (metric "power") or mean count bounds (metric "count") over the sigma grid."""
    start = time.perf_counter()
    rows = []
    R = sc.replications
    for g, sigma in enumerate(sc.sigmas):
        total = _run_blocks(sc, g, workers)
        for name in sc.statistics:
            s, ss = total[name]
            mean = s / R
            if sc.metric == "power":
                se = math.sqrt(mean * (1 - mean) / R)
            else:
                var = max(ss / R - mean * mean, 0.0) * R / max(R - 1, 1)
                se = math.sqrt(var / R)
            rows.append({"statistic": name, "sigma": sigma, "metric": sc.metric,
                         "value": mean, "se": se, "replications": R})
    return SimReport(rows, sc.describe(), time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Neyman comparison and null p-value draws

@dataclass
class NeymanReport:
    neyman_lower: np.ndarray
    count_lower: np.ndarray
    true_ate: float
    alpha: float
    runtime_seconds: float = 0.0

    @property
    def mean_count_lower(self) -> float:
        return float(self.count_lower.mean())

    @property
    def neyman_cover_zero(self) -> float:
        """Share of replications whose interval [L, inf) contains 0."""
        return float(np.mean(self.neyman_lower <= 0))

    def histograms(self, bins: int = 20) -> dict:
        h1, e1 = np.histogram(self.neyman_lower, bins=bins)
        h2, e2 = np.histogram(self.count_lower, bins=np.arange(self.count_lower.max() + 2) - 0.5)
        return {"neyman_lower": {"counts": h1.tolist(), "edges": e1.tolist()},
                "count_lower": {"counts": h2.tolist(), "edges": e2.tolist()}}

    def summary(self) -> dict:
        return {"mean_count_lower": self.mean_count_lower,
                "max_count_lower": int(self.count_lower.max()),
                "mean_neyman_lower": float(self.neyman_lower.mean()),
                "neyman_cover_zero": self.neyman_cover_zero,
                "true_ate": self.true_ate, "alpha": self.alpha,
                "replications": int(self.count_lower.size)}


def neyman_lower(z, y, alpha: float) -> float:
    """Normal-approximation lower limit for the average effect."""
    z = np.asarray(z)
    y1, y0 = y[z == 1], y[z == 0]
    se = math.sqrt(y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size)
    return float(y1.mean() - y0.mean() - NormalDist().inv_cdf(1 - alpha) * se)


def run_neyman_comparison(sc: Scenario, statistic: str = "stephenson:10") -> NeymanReport:
    """Per replication: Neyman lower limit for the average effect and the count bound for effects above the threshold."""
    start = time.perf_counter()
    mech, plan, tie = sc.mechanism, sc.plan(), sc.tie()
    stat = parse_statistic(statistic, sc.n, tie, mech)
    pop = _population(sc, 0, 0)
    seed = _derive(sc.seed, 2, 0)
    ney = np.empty(sc.replications)
    cnt = np.empty(sc.replications, dtype=np.int64)
    for r in range(sc.replications):
        p_r = _population(sc, 0, r) if sc.superpopulation else pop
        z = mech.sample(seed, r)
        y = p_r.observe(z)
        ney[r] = neyman_lower(z, y, sc.alpha)
        cnt[r] = count_lower_direct(QuantileEngine(mech, stat, z, y, plan), sc.threshold, sc.alpha)
    return NeymanReport(ney, cnt, float(pop.tau.mean()), sc.alpha, time.perf_counter() - start)


def null_pvalue_draws(sc: Scenario, statistic: str) -> np.ndarray:
    """Sharp-null p-values over replications (for checking uniform dominance)."""
    mech, plan, tie = sc.mechanism, sc.plan(), sc.tie()
    stat = parse_statistic(statistic, sc.n, tie, mech)
    pop = _population(sc, 0, 0)
    seed = _derive(sc.seed, 2, 0)
    out = np.empty(sc.replications)
    for r in range(sc.replications):
        z = mech.sample(seed, r)
        out[r] = pvalue_sharp(mech, stat, z, pop.observe(z), 0.0, plan).p
    return out
