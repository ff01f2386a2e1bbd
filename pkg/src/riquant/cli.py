"""Command-line interface.

Subcommands: ``test``, ``ci``, ``count``, ``range``, ``null-dist``,
``check-stat`` and ``simulate``.  Results go to stdout (or ``--out``) as
JSON; errors go to stderr as JSON with a nonzero exit status.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .assignment import BRE, CRE
from .inference import BoundedConstant, Plan, QuantileAtMost, Sharp, null_distribution, run_test
from .intervals import (
    QuantileEngine,
    band_for,
    ci_count_lower,
    count_lower_direct,
    effect_range,
)
from .ranks import TieMethod, load_scores_csv
from .statistics import PROPERTIES, check_property, parse_statistic

DEFAULTS = {"stat": "stephenson", "s": 10, "alpha": 0.1, "ties": "random", "plan": "auto",
            "cap": 2_000_000, "draws": 10_000, "seed": 0}


class CliError(Exception):
    code = "usage"


# ---------------------------------------------------------------------------
# data

@dataclass
class Dataset:
    z: np.ndarray
    y: np.ndarray
    ids: list | None = None

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def m(self) -> int:
        return int(self.z.sum())


def parse_dataset(path) -> Dataset:
    """Read a CSV with header columns ``z`` (0/1) and ``y`` (number), optional ``id``."""
    with open(path, newline="") as fh:
        return parse_dataset_text(fh.read(), str(path))


def parse_dataset_text(text: str, source: str = "<data>") -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise CliError(f"{source}: empty file") from None
    for col in ("z", "y"):
        if col not in header:
            raise CliError(f"{source}:1: header must contain a '{col}' column")
    iz, iy = header.index("z"), header.index("y")
    iid = header.index("id") if "id" in header else None
    z, y, ids = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CliError(f"{source}:{lineno}: expected {len(header)} fields, found {len(row)}")
        zs, ys = row[iz].strip(), row[iy].strip()
        if zs not in ("0", "1"):
            raise CliError(f"{source}:{lineno}: z must be 0 or 1, found {zs!r}")
        try:
            yv = float(ys)
        except ValueError:
            raise CliError(f"{source}:{lineno}: y is not a number: {ys!r}") from None
        if not math.isfinite(yv):
            raise CliError(f"{source}:{lineno}: y must be finite, found {ys!r}")
        z.append(int(zs))
        y.append(yv)
        if iid is not None:
            ids.append(row[iid].strip())
    if len(y) < 2:
        raise CliError(f"{source}: need at least 2 units, found {len(y)}")
    m = sum(z)
    if m == 0:
        raise CliError(f"{source}: degenerate arm, no treated units (every z is 0)")
    if m == len(z):
        raise CliError(f"{source}: degenerate arm, no control units (every z is 1)")
    return Dataset(np.array(z, dtype=np.int8), np.array(y), ids if iid is not None else None)


def _read_delta(arg: str, n: int) -> np.ndarray | float:
    try:
        return float(arg)
    except ValueError:
        pass
    with open(arg, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    col = 0
    if rows and rows[0]:
        try:
            float(rows[0][0])
        except ValueError:
            head = [h.strip().lower() for h in rows[0]]
            col = head.index("delta") if "delta" in head else 0
            rows = rows[1:]
    vals = np.array([float(r[col]) for r in rows])
    if vals.size != n:
        raise CliError(f"{arg}: delta has {vals.size} entries, data has {n} units")
    return vals


# ---------------------------------------------------------------------------
# configuration

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _env_int(name: str, default: int) -> int:
    v = os.environ.get(name)
    if v is None or v == "":
        return default
    try:
        return int(v)
    except ValueError:
        raise CliError(f"environment variable {name} must be an integer, found {v!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="riquant", description="Randomization inference for individual treatment effects.")
    p.add_argument("--version", action="version", version=f"riquant {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--stat", choices=["dim", "ht", "wilcoxon", "stephenson", "custom"], default=DEFAULTS["stat"])
    common.add_argument("--s", type=int, default=DEFAULTS["s"], help="Stephenson subset size (>= 2)")
    common.add_argument("--scores", help="single-column CSV of custom rank scores")
    common.add_argument("--ties", choices=["random", "first", "last", "average"], default=DEFAULTS["ties"])
    common.add_argument("--plan", choices=["auto", "exact", "mc"], default=DEFAULTS["plan"])
    common.add_argument("--cap", type=int, default=DEFAULTS["cap"], help="largest assignment space to enumerate")
    common.add_argument("--draws", type=int, default=DEFAULTS["draws"], help="Monte Carlo draws (>= 100)")
    common.add_argument("--seed", type=int, default=None, help="master seed (env RIQUANT_SEED)")
    common.add_argument("--threads", type=int, default=None, help="worker processes (env RIQUANT_THREADS)")
    common.add_argument("--design", choices=["cre", "bre"], default="cre")
    common.add_argument("--p", type=float, default=0.5, help="treatment probability for --design bre")
    common.add_argument("--alpha", type=float, default=DEFAULTS["alpha"])
    common.add_argument("--out", help="write the JSON result here as well as stdout")

    data = _Parser(add_help=False)
    data.add_argument("--data", required=True, help="CSV with columns z, y and optional id")

    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    t = sub.add_parser("test", parents=[common, data], help="p-value for a bounded or quantile null")
    t.add_argument("--delta", default="0", help="scalar effect bound or CSV with per-unit bounds")
    t.add_argument("--k", type=int, help="rank of the effect for the quantile null")
    t.add_argument("--c", type=float, help="threshold for the quantile null (default: --delta)")
    t.add_argument("--side", choices=["greater", "less"], default="greater")

    c = sub.add_parser("ci", parents=[common, data], help="confidence band for all sorted effects")
    c.add_argument("--side", choices=["greater", "less", "two-sided"], default="greater")
    c.add_argument("--out-csv", help="band CSV path")
    c.add_argument("--out-json", help="band JSON path")

    n = sub.add_parser("count", parents=[common, data], help="lower bound on the number of effects above a threshold")
    n.add_argument("--threshold", type=float, default=0.0)

    sub.add_parser("range", parents=[common, data], help="lower limit for the effect range")

    d = sub.add_parser("null-dist", parents=[common, data], help="dump the reference distribution")
    d.add_argument("--out-csv", help="atom CSV path")

    k = sub.add_parser("check-stat", parents=[common], help="search for property counterexamples")
    k.add_argument("--n", type=int, default=6)
    k.add_argument("--m", type=int, default=3)
    k.add_argument("--trials", type=int, default=1000)

    s = sub.add_parser("simulate", parents=[common], help="run a simulation scenario file")
    s.add_argument("--scenario", required=True, help="TOML scenario file")
    s.add_argument("--out-csv")
    s.add_argument("--out-json")
    return p


@dataclass
class Context:
    mech: object
    stat: object
    plan: Plan
    tie: TieMethod
    seed: int
    meta: dict


def _context(args, n: int, m: int) -> Context:
    seed = args.seed if args.seed is not None else _env_int("RIQUANT_SEED", DEFAULTS["seed"])
    mech = CRE(n, m) if args.design == "cre" else BRE(n, args.p)
    tie = TieMethod.random(n, seed) if args.ties == "random" else TieMethod(args.ties)
    scores = load_scores_csv(args.scores) if args.stat == "custom" and args.scores else None
    stat_name = f"stephenson:{args.s}" if args.stat == "stephenson" else args.stat
    stat = parse_statistic(stat_name, n, tie, mech, scores)
    if args.plan == "exact":
        plan = Plan.exact(args.cap)
    elif args.plan == "mc":
        plan = Plan.monte_carlo(args.draws, seed)
    else:
        plan = Plan.auto(mech, args.cap, args.draws, seed)
    meta = {
        "version": __version__,
        "command": args.command,
        "statistic": stat.describe(),
        "plan": plan.describe(),
        "seed": seed,
        "tie_permutation_sha256": tie.digest(),
        "design": {"type": args.design.upper(), "n": n, **({"m": m} if args.design == "cre" else {"p": args.p})},
        "alpha": args.alpha,
        "defaults": DEFAULTS,
    }
    return Context(mech, stat, plan, tie, seed, meta)


def _threads(args) -> int:
    t = args.threads if args.threads is not None else _env_int("RIQUANT_THREADS", 1)
    if t < 1:
        raise CliError("--threads must be at least 1")
    return t


def _fmt(v: float) -> str:
    return repr(float(v))


def _clean(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _write(path, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# commands

def cmd_test(args, out):
    ds = parse_dataset(args.data)
    ctx = _context(args, ds.n, ds.m)
    delta = _read_delta(args.delta, ds.n)
    if args.k is not None:
        c = args.c if args.c is not None else delta
        if not np.isscalar(c):
            raise CliError("the quantile null takes a scalar threshold")
        if args.side != "greater":
            raise CliError("quantile nulls are tested on the greater side; negate the outcomes for the other side")
        hyp = QuantileAtMost(args.k, float(c))
    elif np.isscalar(delta):
        hyp = BoundedConstant(float(delta), "le" if args.side == "greater" else "ge")
    else:
        if args.side == "greater":
            hyp = Sharp(tuple(delta.tolist()), bounded=True)
        else:
            hyp = Sharp(tuple((-delta).tolist()), bounded=True)
    y = ds.y if (args.side == "greater" or args.k is not None or np.isscalar(delta)) else -ds.y
    res = run_test(ctx.mech, ctx.stat, ds.z, y, hyp, ctx.plan)
    result = res.to_dict()
    result["side"] = args.side
    return {"result": result, "metadata": ctx.meta}


def cmd_ci(args, out):
    ds = parse_dataset(args.data)
    ctx = _context(args, ds.n, ds.m)
    band = band_for(ctx.mech, ctx.stat, ds.z, ds.y, args.alpha, ctx.plan, args.side)
    band.metadata.update(ctx.meta)
    payload = band.to_dict()
    if args.out_csv:
        _write(args.out_csv, band.to_csv())
    if args.out_json:
        _write(args.out_json, dumps(payload))
    summary = {"result": {"side": band.side, "level": band.level, "rows": payload["rows"]},
               "metadata": band.metadata}
    if band.side == "greater":
        summary["result"]["count_above_0"] = ci_count_lower(band, 0.0).bound
    return summary


def cmd_count(args, out):
    ds = parse_dataset(args.data)
    ctx = _context(args, ds.n, ds.m)
    eng = QuantileEngine(ctx.mech, ctx.stat, ds.z, ds.y, ctx.plan)
    bound = count_lower_direct(eng, args.threshold, args.alpha)
    return {"result": {"threshold": args.threshold, "lower_bound": bound, "interval": [bound, ds.n],
                       "level": 1 - args.alpha},
            "metadata": ctx.meta}


def cmd_range(args, out):
    ds = parse_dataset(args.data)
    ctx = _context(args, ds.n, ds.m)
    res = effect_range(ctx.mech, ctx.stat, ds.z, ds.y, args.alpha, ctx.plan)
    return {"result": res.to_dict(), "metadata": ctx.meta}


def cmd_null_dist(args, out):
    ds = parse_dataset(args.data)
    ctx = _context(args, ds.n, ds.m)
    dist = null_distribution(ctx.mech, ctx.stat, ds.y, ctx.plan)
    atoms = dist.atoms()
    if args.out_csv:
        lines = ["value,probability"] + [f"{_fmt(v)},{_fmt(p)}" for v, p in atoms]
        _write(args.out_csv, "\n".join(lines) + "\n")
    return {"result": {"atoms": len(atoms), "exact": dist.exact,
                       "observed_value": ctx.stat.evaluate(ds.z, ds.y),
                       "upper_tail_at_observed": dist.tail(ctx.stat.evaluate(ds.z, ds.y))},
            "metadata": ctx.meta}


def cmd_check_stat(args, out):
    ctx = _context(args, args.n, args.m)
    reports = [check_property(ctx.stat, prop, ctx.mech, args.trials, ctx.seed).to_dict() for prop in PROPERTIES]
    return {"result": {"reports": reports}, "metadata": ctx.meta}


def cmd_simulate(args, out):
    from .sim import load_scenario, run_neyman_comparison, run_power_study, scenario_from_dict

    try:
        import tomllib
    except ModuleNotFoundError:  # pragma: no cover
        import tomli as tomllib
    with open(args.scenario, "rb") as fh:
        cfg = tomllib.load(fh)
    study = cfg.pop("study", "power")
    neyman_stat = cfg.pop("neyman_statistic", "stephenson:10")
    if args.seed is not None or os.environ.get("RIQUANT_SEED"):
        cfg["seed"] = args.seed if args.seed is not None else _env_int("RIQUANT_SEED", 0)
    sc = scenario_from_dict(cfg)
    meta = {"version": __version__, "command": "simulate", "scenario": sc.describe()}
    if study == "neyman":
        rep = run_neyman_comparison(sc, neyman_stat)
        if args.out_csv:
            lines = ["replication,neyman_lower,count_lower"] + [
                f"{i},{_fmt(a)},{int(b)}" for i, (a, b) in enumerate(zip(rep.neyman_lower, rep.count_lower))]
            _write(args.out_csv, "\n".join(lines) + "\n")
        payload = {"result": {**rep.summary(), "histograms": rep.histograms()}, "metadata": meta}
        print(f"runtime {rep.runtime_seconds:.1f}s", file=sys.stderr)
    elif study == "power":
        rep = run_power_study(sc, workers=_threads(args))
        if args.out_csv:
            _write(args.out_csv, rep.to_csv())
        payload = {"result": {"rows": rep.rows}, "metadata": meta}
        print(f"runtime {rep.runtime_seconds:.1f}s", file=sys.stderr)
    else:
        raise CliError(f"unknown study {study!r}; use 'power' or 'neyman'")
    if args.out_json:
        _write(args.out_json, dumps(payload))
    return payload


COMMANDS = {
    "test": cmd_test,
    "ci": cmd_ci,
    "count": cmd_count,
    "range": cmd_range,
    "null-dist": cmd_null_dist,
    "check-stat": cmd_check_stat,
    "simulate": cmd_simulate,
}


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if not 0 < args.alpha < 1:
            raise CliError("--alpha must lie in (0, 1)")
        if args.stat == "stephenson" and args.s < 2:
            raise CliError("--s must be at least 2")
        if args.stat == "custom" and not args.scores:
            raise CliError("--stat custom needs --scores")
        if args.plan == "mc" and args.draws < 100:
            raise CliError("--draws must be at least 100")
        payload = COMMANDS[args.command](args, stdout)
        text = dumps(payload)
        if args.out:
            _write(args.out, text)
        stdout.write(text)
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # reported as JSON
        err = {"error": type(exc).__name__, "code": getattr(exc, "code", None), "message": str(exc)}
        stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 2


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
