"""Randomization inference for bounded nulls and quantiles of individual effects."""

__version__ = "0.1.0"

from .assignment import BRE, CRE, CapacityError, Explicit, space_size
from .ranks import AVERAGE, FIRST, LAST, TieMethod, make_scores, rank_vector, stephenson, wilcoxon
from .statistics import (
    CustomStatistic,
    DifferenceInMeans,
    HorvitzThompson,
    RankScore,
    SumScore,
    check_property,
)
from .inference import (
    AssumptionError,
    BoundedConstant,
    Plan,
    QuantileAtMost,
    Sharp,
    worst_case_effects,
    flip_for_lesser,
    impute_control,
    null_distribution,
    pvalue_quantile,
    pvalue_sharp,
    pvalue_sharp_alt,
    run_test,
    switch_arms,
)
from .intervals import (
    QuantileEngine,
    band_all_quantiles,
    ci_count_lower,
    ci_quantile_lower,
    count_lower_direct,
    effect_range,
    max_effect_lower,
    two_sided_band,
)

__all__ = [
    "__version__",
    "AVERAGE",
    "AssumptionError",
    "BRE",
    "BoundedConstant",
    "CRE",
    "CapacityError",
    "CustomStatistic",
    "DifferenceInMeans",
    "Explicit",
    "FIRST",
    "HorvitzThompson",
    "LAST",
    "Plan",
    "QuantileAtMost",
    "QuantileEngine",
    "RankScore",
    "Sharp",
    "SumScore",
    "TieMethod",
    "band_all_quantiles",
    "worst_case_effects",
    "check_property",
    "ci_count_lower",
    "ci_quantile_lower",
    "count_lower_direct",
    "effect_range",
    "flip_for_lesser",
    "impute_control",
    "make_scores",
    "max_effect_lower",
    "null_distribution",
    "pvalue_quantile",
    "pvalue_sharp",
    "pvalue_sharp_alt",
    "rank_vector",
    "stephenson",
    "wilcoxon",
    "run_test",
    "space_size",
    "switch_arms",
    "two_sided_band",
]
