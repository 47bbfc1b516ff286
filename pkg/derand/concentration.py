"""
Concentration front ends: rounding with Hoeffding, Chernoff and Bernstein style
guarantees on top of the integral rounding recursion.
"""
import dataclasses as dc
import logging
import math
from collections.abc import Callable
from enum import Enum
from fractions import Fraction

import numpy as np
from dataclasses_json import dataclass_json

from derand.buckets import check_delta
from derand.config import FixingConfig
from derand.error import InvalidArgument
from derand.integral_rounding import (DEVIATION_TOLERANCE, IntegralReport,
                                      check_probabilities, even_granularity,
                                      fix_integral)
from derand.matrix import ConstraintMatrix
from derand.potentials import StepRecord

logger = logging.getLogger(__name__)

#: Decay of the subsampling schedules
SCHEDULE_DECAY = Fraction(4, 5)

class BoundMode (str, Enum):
    PARTIAL: str = "partial"
    HOEFFDING: str = "hoeffding"
    CHERNOFF: str = "chernoff"
    BERNSTEIN: str = "bernstein"

def subsampling_schedule (
    ell: int, k: int, exact: bool = False
) -> tuple[float, float] | tuple[Fraction, Fraction]:
    """
    ``(epsilon_ell, alpha_ell)`` with ``epsilon = max(0.8^ell, 1/k) / 16`` and
    ``alpha = (1 - 0.8^ell + ell/k) / 2``.

    :param exact: Return :class:`~fractions.Fraction` values
    """
    if ell < 0 or k < 1:
        raise InvalidArgument(f"Schedules need ell >= 0 and k >= 1, got ell={ell}, k={k}")

    decay = SCHEDULE_DECAY ** ell
    epsilon = max(decay, Fraction(1, k)) / 16
    alpha = (1 - decay + Fraction(ell, k)) / 2

    if exact:
        return epsilon, alpha

    return float(epsilon), float(alpha)

def subsampling_depth (p: np.ndarray, k: int) -> int:
    """
    ``ceil(-log2 min p_j)`` over the nonintegral positive entries, 0 when there are none.

    :raises InvalidArgument: If a positive entry is below ``2^-k``
    """
    positive = p[(p > 0) & (p < 1)]
    if not len(positive):
        return 0

    smallest = float(positive.min())
    if smallest < 2.0 ** -k:
        raise InvalidArgument(
            f"Probability {smallest:.3g} is below 2^-{k}; use a concentration wrapper instead"
        )

    return max(0, math.ceil(-math.log2(smallest)))

@dataclass_json
@dc.dataclass
class SubsamplingLevel:
    ell: int = dc.field()
    epsilon: float = dc.field()
    alpha: float = dc.field()
    small_columns: int = dc.field()
    "Columns below 0.5^(ell - 1) that were halved or doubled"
    k_small: int = dc.field()
    bad_rows: list[int] = dc.field(default_factory=list)
    integral: IntegralReport | None = dc.field(default=None)

@dataclass_json
@dc.dataclass
class SubsamplingReport:
    ell: int = dc.field()
    "Depth of the induction"
    levels: list[SubsamplingLevel] = dc.field(default_factory=list)
    base: IntegralReport | None = dc.field(default=None)
    bad: list[int] = dc.field(default_factory=list)
    deviations: list[float] = dc.field(default_factory=list)

    @property
    def steps (self) -> int:
        reports = [level.integral for level in self.levels] + [self.base]
        return sum(report.steps for report in reports if report is not None)

    @property
    def work (self) -> int:
        reports = [level.integral for level in self.levels] + [self.base]
        return sum(report.work for report in reports if report is not None)

def fix_with_subsampling (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int,
    config: FixingConfig | None = None, trace: Callable[[StepRecord], None] | None = None
) -> tuple[np.ndarray, np.ndarray, SubsamplingReport]:
    """
    Rounds probabilities as small as ``2^-k`` by repeated sampling.

    At depth ``ell`` every column below ``0.5^(ell - 1)`` is kept with probability 1/2
    (and doubled) or dropped, which is itself an integral rounding of the scaled matrix
    ``2 p_j a_ij`` at 1/2. Once every probability is at least 1/2 the remaining instance
    goes to :func:`fix_integral`.

    :param trace: Called with the record of every walk step of every depth
    :raises InvalidArgument: If some positive ``p_j`` is below ``2^-k``
    :return: ``(q, bad rows, report)`` with ``q`` exactly 0/1
    """
    config = config or FixingConfig()
    k = even_granularity(k)
    p = check_probabilities(p, A.n)
    delta = check_delta(delta, A.m)

    ell = subsampling_depth(p, k)
    report = SubsamplingReport(ell=ell)
    q = p.copy()
    budget = delta.copy()
    k_small = k ** config.small_k_exponent

    for level in range(ell, 1, -1):
        epsilon, alpha = subsampling_schedule(level, k)
        small = (q > 0) & (q < 0.5 ** (level - 1))
        info = SubsamplingLevel(
            ell=level, epsilon=epsilon, alpha=alpha, small_columns=int(small.sum()),
            k_small=k_small
        )

        if small.any():
            logger.info(f"Subsampling depth {level}: {info.small_columns} small columns")
            scaled = A.scale_columns(np.where(small, 2 * q, 0.0))
            half = np.where(small, 0.5, 0.0)
            kept, level_bad, info.integral = fix_integral(
                scaled, half, epsilon * budget, k_small, config, trace=trace
            )

            q = np.where(small, np.where(kept == 1, 2 * q, 0.0), q)
            info.bad_rows = level_bad.tolist()

        budget = (1 + epsilon) * budget
        report.levels.append(info)

    _, alpha = subsampling_schedule(1, k)
    q, _, report.base = fix_integral(A, q, alpha * budget, k, config, trace=trace)

    deviations = A.deviations(p, q)
    bad = deviations > delta * (1 + DEVIATION_TOLERANCE)
    report.bad = np.flatnonzero(bad).tolist()
    report.deviations = deviations.tolist()

    return q, np.flatnonzero(bad), report

def shift_probabilities (p: np.ndarray) -> np.ndarray:
    """
    ``max(p_j, 1/n)``, lifting tiny probabilities into the range subsampling accepts.
    """
    p = check_probabilities(p)
    if not len(p):
        return p

    return np.maximum(p, 1 / len(p))

def effective_granularity (n: int, m: int, k: int, config: FixingConfig) -> int:
    """
    Granularity used by the concentration wrappers: ``ceil(c^2 log(2nm)) k`` when inflation is
    enabled, ``k`` otherwise. Always even and at least ``ceil(log2 n)``.
    """
    if config.inflate_granularity:
        factor = math.ceil(config.failure_constant ** 2 * math.log(max(2 * n * m, 2)))
        k = factor * k

    k = max(k, math.ceil(math.log2(max(n, 1))))
    return k + k % 2

@dataclass_json
@dc.dataclass
class ExponentReport:
    mode: BoundMode = dc.field()
    k: int = dc.field()
    "Requested granularity"
    k_effective: int = dc.field()
    "Granularity the walk actually ran with"
    exponents: list[float] = dc.field(default_factory=list)
    "Per-row exponent of the failure bound, infinite for rows that cannot fail"
    prob_bad: list[float] = dc.field(default_factory=list)
    "Per-row failure bound, capped at 1"
    deviations: list[float] = dc.field(default_factory=list)
    bad: list[int] = dc.field(default_factory=list)
    expanded_rows: int = dc.field(default=0)
    "Bucket constraints of a Bernstein expansion"
    subsampling: SubsamplingReport | None = dc.field(default=None)

    @property
    def prob_bad_sum (self) -> float:
        return math.fsum(self.prob_bad)

    @property
    def steps (self) -> int:
        return self.subsampling.steps if self.subsampling is not None else 0

    @property
    def work (self) -> int:
        return self.subsampling.work if self.subsampling is not None else 0

def row_statistics (
    A: ConstraintMatrix, p: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    ``sum a^2``, ``mu = sum p a``, ``V = sum p a^2`` and ``max a`` per row.
    """
    return A.row_square_sums(), A.dot(p), A.csr.multiply(A.csr) @ p, A.row_max()

def bernstein_alpha (mu: np.ndarray, delta: np.ndarray, c: float) -> np.ndarray:
    return 1 / (c * np.log2(mu / delta + 2))

def compute_failure_bounds (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int,
    mode: BoundMode | str, config: FixingConfig | None = None
) -> ExponentReport:
    """
    Evaluates the per-row failure bound of one guarantee.

    ``partial`` and ``hoeffding`` use ``min(Delta^2 / sum a^2, Delta k / S)`` with ``S``
    the row sum or ``sum p a``; ``chernoff`` uses
    ``min(Delta^2 / (mu max a), Delta / max a, Delta k / mu)``; all three report
    ``c exp(-e / c)``. ``bernstein`` reports ``exp(-alpha e) / alpha`` with
    ``e = min(Delta^2 / V, Delta / max a, Delta k / mu)``. Rows without weight never fail.
    """
    mode = BoundMode(mode)
    config = config or FixingConfig()
    p = check_probabilities(p, A.n)
    delta = check_delta(delta, A.m)
    c = config.failure_constant

    squares, mu, variance, largest = row_statistics(A, p)

    with np.errstate(divide="ignore", invalid="ignore"):
        match mode:
            case BoundMode.PARTIAL:
                exponent = np.minimum(delta ** 2 / squares, delta * k / A.row_sums())

            case BoundMode.HOEFFDING:
                exponent = np.minimum(delta ** 2 / squares, delta * k / mu)

            case BoundMode.CHERNOFF:
                exponent = np.minimum.reduce((
                    delta ** 2 / (mu * largest), delta / largest, delta * k / mu
                ))

            case BoundMode.BERNSTEIN:
                exponent = np.minimum.reduce((
                    delta ** 2 / variance, delta / largest, delta * k / mu
                ))

        exponent = np.where(np.isnan(exponent) | (largest == 0), np.inf, exponent)

        if mode is BoundMode.BERNSTEIN:
            alpha = bernstein_alpha(mu, delta, c)
            bound = np.exp(-alpha * exponent) / alpha

        else:
            bound = c * np.exp(-exponent / c)

    return ExponentReport(
        mode=mode, k=k, k_effective=k, exponents=exponent.tolist(),
        prob_bad=np.minimum(bound, 1.0).tolist(),
    )

def _fix_with_reduction (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int, mode: BoundMode,
    config: FixingConfig | None, trace: Callable[[StepRecord], None] | None = None
) -> tuple[np.ndarray, np.ndarray, ExponentReport]:
    config = config or FixingConfig()
    p = check_probabilities(p, A.n)
    delta = check_delta(delta, A.m)

    k_effective = effective_granularity(A.n, A.m, k, config)
    logger.info(f"{mode.value} rounding of {A.n} columns and {A.m} rows, k'={k_effective}")

    q, _, subsampling = fix_with_subsampling(
        A, shift_probabilities(p), delta / 2, k_effective, config, trace=trace
    )

    deviations = A.deviations(p, q)
    failing = deviations > delta * (1 + DEVIATION_TOLERANCE)

    report = compute_failure_bounds(A, p, delta, k, mode, config)
    report.k_effective = k_effective
    report.deviations = deviations.tolist()
    report.bad = np.flatnonzero(failing).tolist()
    report.subsampling = subsampling

    return q, np.flatnonzero(failing), report

def fix_hoeffding (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int,
    config: FixingConfig | None = None, trace: Callable[[StepRecord], None] | None = None
) -> tuple[np.ndarray, np.ndarray, ExponentReport]:
    """
    Rounds ``p`` to 0/1 with ``|sum_j a_ij (p_j - q_j)| <= Delta_i`` outside the bad rows.

    :param A: Constraint matrix
    :param p: Probabilities in [0, 1]
    :param delta: Positive deviation bound per row
    :param k: Granularity before inflation
    :param config: Constants, paper profile when omitted
    :param trace: Called with the record of every walk step
    :return: ``(q, bad rows, report)`` with Hoeffding failure bounds
    """
    return _fix_with_reduction(A, p, delta, k, BoundMode.HOEFFDING, config, trace)

def fix_chernoff (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int,
    config: FixingConfig | None = None, trace: Callable[[StepRecord], None] | None = None
) -> tuple[np.ndarray, np.ndarray, ExponentReport]:
    """
    Same rounding as :func:`fix_hoeffding`, reported with Chernoff failure bounds.
    """
    return _fix_with_reduction(A, p, delta, k, BoundMode.CHERNOFF, config, trace)

def coefficient_buckets (weights: np.ndarray) -> np.ndarray:
    """
    ``ell`` with ``2^(ell - 1) < a <= 2^ell``.
    """
    mantissa, exponent = np.frexp(np.asarray(weights, dtype=np.float64))
    return np.where(mantissa > 0.5, exponent, exponent - 1).astype(np.int64)

@dc.dataclass(eq=False)
class BernsteinPlan:
    """
    One constraint per nonempty coefficient bucket of every row, with its share of the
    row's deviation budget.
    """
    entry_bucket: np.ndarray = dc.field(repr=False)
    bucket_row: np.ndarray = dc.field(repr=False)
    bucket_ell: np.ndarray = dc.field(repr=False)
    mu: np.ndarray = dc.field(repr=False)
    "sum p a per row"
    variance: np.ndarray = dc.field(repr=False)
    "sum p a^2 per row"
    gamma: np.ndarray = dc.field(repr=False)
    alpha: np.ndarray = dc.field(repr=False)
    shares: np.ndarray = dc.field(repr=False)
    "max of the three shares per bucket"
    bucket_delta: np.ndarray = dc.field(repr=False)

    @property
    def bucket_count (self) -> int:
        return len(self.bucket_row)

    def share_sums (self, m: int) -> np.ndarray:
        """
        ``sum_ell Delta_{i, ell}`` per row.
        """
        return np.bincount(self.bucket_row, weights=self.bucket_delta, minlength=m)

def build_bernstein_plan (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, config: FixingConfig | None = None
) -> BernsteinPlan:
    config = config or FixingConfig()
    p = check_probabilities(p, A.n)
    delta = check_delta(delta, A.m)

    rows, cols, weights = A.entry_rows, A.entry_cols, A.weights
    ell = coefficient_buckets(weights)

    if A.nnz:
        low = int(ell.min())
        span = int(ell.max()) - low + 1
        unique, entry_bucket = np.unique(rows * span + (ell - low), return_inverse=True)
        bucket_row, bucket_ell = unique // span, unique % span + low

    else:
        entry_bucket = bucket_row = bucket_ell = np.zeros(0, dtype=np.int64)

    count = len(bucket_row)
    mu = A.dot(p)
    variance = A.csr.multiply(A.csr) @ p
    bucket_mu = np.bincount(entry_bucket, weights=p[cols] * weights, minlength=count)
    bucket_variance = np.bincount(entry_bucket, weights=p[cols] * weights ** 2, minlength=count)

    top = np.full(A.m, np.iinfo(np.int64).min)
    np.maximum.at(top, bucket_row, bucket_ell)
    top_ell = top[bucket_row]

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        gamma = np.where(
            top > np.iinfo(np.int64).min, variance / (delta * np.exp2(top.astype(np.float64))), 0.0
        )
        alpha = bernstein_alpha(mu, delta, config.failure_constant)

        row = bucket_row
        first = np.where(variance[row] > 0, np.sqrt(
            config.failure_constant * alpha[row] * np.minimum(1, np.sqrt(gamma[row]))
            * bucket_variance / variance[row]
        ), 0.0)
        second = 0.9 ** (top_ell - bucket_ell).astype(np.float64)
        third = np.where(mu[row] > 0, bucket_mu / mu[row], 0.0)

    shares = np.maximum.reduce((first, second, third))

    return BernsteinPlan(
        entry_bucket=entry_bucket.astype(np.int64), bucket_row=bucket_row.astype(np.int64),
        bucket_ell=bucket_ell.astype(np.int64), mu=mu, variance=variance, gamma=gamma,
        alpha=alpha, shares=shares, bucket_delta=shares * delta[bucket_row] / 100,
    )

def fix_bernstein (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int,
    config: FixingConfig | None = None, trace: Callable[[StepRecord], None] | None = None
) -> tuple[np.ndarray, np.ndarray, ExponentReport]:
    """
    Rounds ``p`` with a Bernstein style guarantee by splitting every row into its
    coefficient buckets, each with its own share of the row's budget.

    :return: ``(q, bad rows, report)``; a row is bad when one of its buckets is
    """
    config = config or FixingConfig()
    p = check_probabilities(p, A.n)
    delta = check_delta(delta, A.m)

    plan = build_bernstein_plan(A, p, delta, config)
    expanded = ConstraintMatrix.from_entries(
        plan.bucket_count, A.n, plan.entry_bucket, A.entry_cols, A.weights
    )

    k_expanded = k
    if config.inflate_granularity:
        k_expanded = math.ceil(config.failure_constant * math.log(max(A.n * A.m, 2))) * k

    logger.info(f"Bernstein plan: {A.m} rows expanded into {plan.bucket_count} bucket rows")
    q, bucket_bad, inner = fix_chernoff(
        expanded, p, plan.bucket_delta, k_expanded, config, trace=trace
    )

    deviations = A.deviations(p, q)
    failing = np.zeros(A.m, dtype=bool)
    failing[plan.bucket_row[bucket_bad]] = True
    failing |= deviations > delta * (1 + DEVIATION_TOLERANCE)

    report = compute_failure_bounds(A, p, delta, k, BoundMode.BERNSTEIN, config)
    report.k_effective = inner.k_effective
    report.deviations = deviations.tolist()
    report.bad = np.flatnonzero(failing).tolist()
    report.expanded_rows = plan.bucket_count
    report.subsampling = inner.subsampling

    return q, np.flatnonzero(failing), report
