"""
Dispatches a rounding request to the matching engine and wraps its outcome in a
:class:`~derand.report.RunReport`.
"""
import logging
import time
from collections.abc import Callable
from enum import Enum

import numpy as np

from derand.concentration import (BoundMode, compute_failure_bounds,
                                  fix_bernstein, fix_chernoff, fix_hoeffding)
from derand.config import FixingConfig
from derand.error import InvalidArgument
from derand.integral_rounding import (check_probabilities, even_granularity,
                                      fix_integral,
                                      round_probabilities_to_grid)
from derand.matrix import ConstraintMatrix
from derand.partial_fixing import partial_fix
from derand.potentials import StepRecord
from derand.report import RunReport

logger = logging.getLogger(__name__)

class FixMode (str, Enum):
    PARTIAL: str = "partial"
    INTEGRAL: str = "integral"
    HOEFFDING: str = "hoeffding"
    CHERNOFF: str = "chernoff"
    BERNSTEIN: str = "bernstein"

WRAPPERS = {
    FixMode.HOEFFDING: fix_hoeffding,
    FixMode.CHERNOFF: fix_chernoff,
    FixMode.BERNSTEIN: fix_bernstein,
}

def scaled_delta (A: ConstraintMatrix, p: np.ndarray, scale: float) -> np.ndarray:
    """
    ``Delta_i = scale * sum_j a_ij p_j``.

    :raises InvalidArgument: If the scale is not positive or some row gets a zero bound
    """
    if not scale > 0:
        raise InvalidArgument(f"Deviation scale must be positive, got {scale}")

    delta = scale * A.dot(p)
    zero = np.flatnonzero(delta <= 0)
    if len(zero):
        raise InvalidArgument(
            f"Rows {zero.tolist()[:10]} get a zero deviation bound; give explicit bounds"
        )

    return delta

def run_fix (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, mode: FixMode | str, k: int,
    config: FixingConfig | None = None, trace: Callable[[StepRecord], None] | None = None,
    timing: bool = False
) -> tuple[np.ndarray, RunReport]:
    """
    Rounds ``p`` with one of the engines.

    ``partial`` grid-rounds ``p`` first and returns grid values; every other mode returns
    a 0/1 vector.

    :param trace: Called with every walk step record of every engine run
    :param timing: Record the wall time in the report
    :return: The output vector and its report
    """
    try:
        mode = FixMode(mode)

    except ValueError:
        raise InvalidArgument(f"Unknown rounding mode {mode!r}") from None

    config = config or FixingConfig()
    p = check_probabilities(p, A.n)
    delta = np.asarray(delta, dtype=np.float64)
    started = time.perf_counter()

    match mode:
        case FixMode.PARTIAL:
            k_effective = even_granularity(k)
            grid = round_probabilities_to_grid(p, k_effective)
            result = partial_fix(A, grid, delta, k_effective, config, trace=trace)
            q = result.q
            report = RunReport.from_rows(
                mode.value, k, k_effective, config.profile.value, A.n,
                A.deviations(p, q), delta, result.prob_bad, result.bad,
                steps=result.steps, work=result.work,
                details={ "nonintegral": int(result.nonintegral.sum()) },
            )

        case FixMode.INTEGRAL:
            q, bad, integral = fix_integral(A, p, delta, k, config, trace=trace)
            bounds = compute_failure_bounds(A, p, delta, integral.k, BoundMode.PARTIAL, config)
            report = RunReport.from_rows(
                mode.value, k, integral.k, config.profile.value, A.n,
                A.deviations(p, q), delta, bounds.prob_bad, bad,
                steps=integral.steps, work=integral.work,
                details=integral.to_dict(encode_json=True),
            )

        case _:
            q, bad, bounds = WRAPPERS[mode](A, p, delta, k, config, trace=trace)
            report = RunReport.from_rows(
                mode.value, k, bounds.k_effective, config.profile.value, A.n,
                A.deviations(p, q), delta, bounds.prob_bad, bad,
                steps=bounds.steps, work=bounds.work,
                details=bounds.to_dict(encode_json=True),
            )

    if timing:
        report.wall_time = time.perf_counter() - started

    logger.info(f"{mode.value}: {report.bad_count} bad rows out of {report.m}")

    return q, report
