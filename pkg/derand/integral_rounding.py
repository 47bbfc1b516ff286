import dataclasses as dc
import logging
import math
from collections.abc import Callable

import numpy as np
from dataclasses_json import dataclass_json

from derand.buckets import check_delta, compute_prob_bad_partial
from derand.config import FixingConfig
from derand.error import InvalidArgument, ShapeMismatch
from derand.matrix import ConstraintMatrix
from derand.partial_fixing import partial_fix
from derand.potentials import StepRecord

logger = logging.getLogger(__name__)

#: Relative slack of the final direct deviation check
DEVIATION_TOLERANCE = 1e-12
#: Per-level shrink of ratio(A, Delta) that bounds the recursion depth
RATIO_SHRINK = 0.999

@dataclass_json
@dc.dataclass
class LevelReport:
    level: int = dc.field()
    ratio: float = dc.field()
    "max_i tracked nonintegral mass / budget over the active rows"
    active_rows: int = dc.field()
    moving_columns: int = dc.field()
    "Nonintegral columns entering the level"
    frozen_columns: int = dc.field()
    "Columns the level made integral"
    bad_rows: list[int] = dc.field(default_factory=list)
    steps: int = dc.field(default=0)
    work: int = dc.field(default=0)

@dataclass_json
@dc.dataclass
class IntegralReport:
    k: int = dc.field()
    "Granularity actually used (even)"
    levels: list[LevelReport] = dc.field(default_factory=list)
    bad: list[int] = dc.field(default_factory=list)
    "Rows whose final deviation exceeds Delta_i"
    abandoned: list[int] = dc.field(default_factory=list)
    "Rows some level stopped tracking after a failed check or an exhausted budget"
    deviations: list[float] = dc.field(default_factory=list)
    prob_bad: list[float] = dc.field(default_factory=list)
    "Per-row partial fixing bound, capped at 1"
    regime_violations: list[int] = dc.field(default_factory=list)
    "Rows with Delta_i < 1000 sum_j a_ij / k"
    base_case: str = dc.field(default="ratio")
    "Why the recursion stopped: ratio, depth or stalled"

    @property
    def steps (self) -> int:
        return sum(level.steps for level in self.levels)

    @property
    def work (self) -> int:
        return sum(level.work for level in self.levels)

def check_probabilities (p: np.ndarray, n: int | None = None) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or (n is not None and len(p) != n):
        raise ShapeMismatch(f"Expected a vector of {n} probabilities, got shape {p.shape}")

    if len(p) and not (np.all(np.isfinite(p)) and p.min() >= 0 and p.max() <= 1):
        raise InvalidArgument("Probabilities must lie in [0, 1]")

    return p

def round_probabilities_to_grid (p: np.ndarray, k: int) -> np.ndarray:
    """
    Moves every entry to the nearest multiple of 1/k, ties rounding up.

    :raises InvalidArgument: If ``k < 1`` or some entry is outside [0, 1]
    """
    if k < 1:
        raise InvalidArgument(f"Granularity must be positive, got {k}")

    p = check_probabilities(p)
    return np.minimum(np.floor(p * k + 0.5), k) / k

def even_granularity (k: int) -> int:
    k = max(2, int(k))
    if k % 2:
        logger.info(f"Granularity {k} is odd, using {k + 1}")
        k += 1

    return k

def fix_integral (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int,
    config: FixingConfig | None = None, trace: Callable[[StepRecord], None] | None = None
) -> tuple[np.ndarray, np.ndarray, IntegralReport]:
    """
    Rounds ``p`` to a 0/1 vector by repeated partial fixing.

    Every level grid-rounds the nonintegral columns, runs the walk against the rows that
    are still constrained and hands what stays nonintegral to the next level with
    shrunken per-row budgets. Rows whose remaining nonintegral weight fits their budget
    are retired; when every row is retired the leftover columns go to 0. The returned bad
    rows are those whose final deviation exceeds their bound.

    :param A: Constraint matrix
    :param p: Probabilities in [0, 1]
    :param delta: Positive deviation bound per row
    :param k: Granularity, odd values are rounded up
    :param config: Constants, paper profile when omitted
    :param trace: Called with the record of every walk step, all levels included
    :return: ``(q, bad rows, report)`` with ``q`` exactly 0/1
    """
    config = config or FixingConfig()
    k = even_granularity(k)
    p = check_probabilities(p, A.n)
    delta = check_delta(delta, A.m)

    rows, cols, weights = A.entry_rows, A.entry_cols, A.weights
    row_sums = A.row_sums()

    q = p.copy()
    tracked = np.ones(A.nnz, dtype=bool)
    active = np.ones(A.m, dtype=bool)
    abandoned = np.zeros(A.m, dtype=bool)
    budget = delta.copy()

    report = IntegralReport(k=k)
    report.regime_violations = np.flatnonzero(
        (row_sums > 0) & (delta < 1000 * row_sums / k)
    ).tolist()
    max_levels = math.ceil(math.log(k) / math.log(1 / RATIO_SHRINK)) + 1

    for level in range(max_levels + 1):
        nonintegral = (q > 0) & (q < 1)
        entry_open = tracked & nonintegral[cols]
        mass = np.bincount(rows, weights=weights * entry_open, minlength=A.m)

        active &= ~(mass <= budget)
        tracked &= active[rows]

        if not active.any() or not nonintegral.any():
            break

        if level == max_levels:
            logger.warning(f"Recursion depth {max_levels} reached with active rows left")
            report.base_case = "depth"
            break

        active_ids = np.flatnonzero(active)
        local = np.full(A.m, -1, dtype=np.int64)
        local[active_ids] = np.arange(len(active_ids))
        entries = np.flatnonzero(entry_open & active[rows])

        sub = ConstraintMatrix.from_entries(
            len(active_ids), A.n, local[rows[entries]], cols[entries], weights[entries]
        )
        info = LevelReport(
            level=level, ratio=float(np.max(mass[active_ids] / budget[active_ids])),
            active_rows=len(active_ids), moving_columns=int(nonintegral.sum()), frozen_columns=0,
        )
        logger.info(
            f"Level {level}: ratio {info.ratio:.4g}, {info.active_rows} rows, "
            f"{info.moving_columns} nonintegral columns"
        )

        grid = np.where(nonintegral, round_probabilities_to_grid(q, k), q)
        result = partial_fix(sub, grid, budget[active_ids], k, config, trace=trace)

        q = np.where(nonintegral, result.q, q)
        info.steps, info.work = result.steps, result.work

        # ignored columns no longer count against their row
        tracked[entries[result.decomposition.ignore_entries]] = False

        level_bad = active_ids[result.bad]
        abandoned[level_bad] = True
        active[level_bad] = False
        tracked &= active[rows]

        still_open = (q > 0) & (q < 1)
        untracked = np.bincount(
            rows, weights=weights * (still_open[cols] & ~tracked), minlength=A.m
        )
        remaining = delta - A.deviations(p, q) - untracked
        budget = np.minimum(config.recursion_shrink * budget, remaining)

        exhausted = active & (budget <= 0)
        abandoned[exhausted] = True
        active[exhausted] = False
        tracked &= active[rows]

        info.bad_rows = sorted(level_bad.tolist() + np.flatnonzero(exhausted).tolist())
        info.frozen_columns = int(nonintegral.sum() - still_open.sum())
        report.levels.append(info)

        if not info.frozen_columns:
            logger.warning(f"Level {level} froze no column, finishing with the base case")
            report.base_case = "stalled"
            break

    q = np.where((q > 0) & (q < 1), 0.0, q)

    deviations = A.deviations(p, q)
    bad = deviations > delta * (1 + DEVIATION_TOLERANCE)

    report.bad = np.flatnonzero(bad).tolist()
    report.abandoned = np.flatnonzero(abandoned).tolist()
    report.deviations = deviations.tolist()
    report.prob_bad = np.minimum(
        1.0, np.where(
            row_sums > 0, compute_prob_bad_partial(A, delta, k, config.failure_constant), 0.0
        )
    ).tolist()

    logger.info(
        f"Integral rounding done after {len(report.levels)} levels, {len(report.bad)} bad rows"
    )

    return q.astype(np.int8), np.flatnonzero(bad), report
