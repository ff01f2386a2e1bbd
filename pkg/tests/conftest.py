import numpy as np
import pytest

from riquant.ranks import FIRST, rank_vector
from riquant.statistics import CustomStatistic

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, title: str, ok: bool | None, detail: str = "") -> None:
    """Print and keep one status line per acceptance criterion."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    line = f"[{status}] criterion {criterion}: {title}" + (f" -- {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_record():
    return record


# Fixture statistics, each satisfying exactly one of the three properties.

def _first_treated(z, y):
    return float(y[np.flatnonzero(z)[0]])


def _sum_minus_twice_total(z, y):
    return float(np.sum(z * y) - 2 * np.sum(y))


def _neg_first_two_ranks(z, y):
    r = rank_vector(y, FIRST)
    return float(-np.sum(z[:2] * r[:2]))


ONLY_EFFECT_INCREASING = CustomStatistic(_first_treated, "first-treated-outcome", effect_increasing=True)
ONLY_DIFFERENTIAL_INCREASING = CustomStatistic(_sum_minus_twice_total, "treated-sum-minus-twice-total",
                                               differential_increasing=True)
ONLY_DISTRIBUTION_FREE = CustomStatistic(_neg_first_two_ranks, "negated-leading-ranks", distribution_free=True)
