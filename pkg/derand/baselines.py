"""
Randomized and sequential reference roundings, used as oracles and as empirical
comparisons for the derandomized engine.
"""
import dataclasses as dc
import logging
import math
from concurrent import futures

import numpy as np

from derand.applications import SetSystem
from derand.buckets import check_delta
from derand.error import InvalidArgument, RegimeError
from derand.integral_rounding import check_probabilities
from derand.matrix import ConstraintMatrix
from derand.potentials import check_granularity, grid_numerators

logger = logging.getLogger(__name__)

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX_FIRST = np.uint64(0xBF58476D1CE4E5B9)
MIX_SECOND = np.uint64(0x94D049BB133111EB)

#: lambda of the sequential potentials
SEQUENTIAL_LAMBDA = 1 / 10

class SplitMix64:
    """
    Counter based SplitMix64: output ``i`` is the finalizer applied to
    ``seed + (i + 1) * 0x9E3779B97F4A7C15`` (mod 2^64).
    """
    def __init__ (self, seed: int):
        self.seed = np.uint64(seed % (1 << 64))
        self.position = 0

    def next_u64 (self, count: int) -> np.ndarray:
        counters = np.arange(self.position + 1, self.position + count + 1, dtype=np.uint64)
        self.position += count

        with np.errstate(over="ignore"):
            z = self.seed + counters * GOLDEN_GAMMA
            z = (z ^ (z >> np.uint64(30))) * MIX_FIRST
            z = (z ^ (z >> np.uint64(27))) * MIX_SECOND

        return z ^ (z >> np.uint64(31))

    def uniform (self, count: int) -> np.ndarray:
        """
        Doubles in [0, 1) from the top 53 bits.
        """
        return (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def signs (self, count: int) -> np.ndarray:
        return np.where(self.next_u64(count) >> np.uint64(63), 1, -1).astype(np.int64)

@dc.dataclass(eq=False)
class WalkTrace:
    q: np.ndarray = dc.field(repr=False)
    "Final grid values"
    steps: int = dc.field()
    "Steps until nothing moved, at most T"
    times: list[int] = dc.field(default_factory=list)
    phi: list[np.ndarray] = dc.field(default_factory=list, repr=False)
    "sum_j a_ij p_j,t per row at every recorded time"
    psi: list[np.ndarray] = dc.field(default_factory=list, repr=False)
    "Unweighted pair spread of every row's support at every recorded time"

def support_spread (support: ConstraintMatrix, p: np.ndarray) -> np.ndarray:
    """
    ``sum_{(j1, j2) in S_i^2} (p_j1 - p_j2)^2`` for the support ``S_i`` of every row.
    """
    size = support.row_sums()
    return 2 * size * support.dot(p ** 2) - 2 * support.dot(p) ** 2

def randomized_walk (
    A: ConstraintMatrix, p: np.ndarray, k: int, rng_seed: int, horizon: float = 100.0,
    trace_every: int = 1
) -> WalkTrace:
    """
    Walk with fully independent +-1/k increments for ``horizon * k^2`` steps.

    :param p: Probabilities on the 1/k grid
    :param k: Even granularity
    :param rng_seed: Seed of the :class:`SplitMix64` stream
    :param trace_every: Record phi and psi every this many steps
    :raises InvalidArgument: On odd ``k`` or off-grid probabilities
    """
    check_granularity(k)
    numerators = grid_numerators(check_probabilities(p, A.n), k)
    support = ConstraintMatrix(A.csr.sign())
    generator = SplitMix64(rng_seed)
    steps = max(1, math.ceil(horizon * k * k))

    trace = WalkTrace(q=numerators / k, steps=0)

    def record (t: int):
        values = numerators / k
        trace.times.append(t)
        trace.phi.append(A.dot(values))
        trace.psi.append(support_spread(support, values))

    record(0)
    for t in range(1, steps + 1):
        moving = np.flatnonzero((numerators != 0) & (numerators != k))
        if not len(moving):
            break

        numerators[moving] += generator.signs(len(moving))
        trace.steps = t
        if t % trace_every == 0:
            record(t)

    if trace.times[-1] != trace.steps:
        record(trace.steps)

    trace.q = numerators / k
    return trace

def monte_carlo_round (p: np.ndarray, rng_seed: int) -> np.ndarray:
    """
    Independent rounding, ``q_j = 1`` with probability ``p_j``.
    """
    p = check_probabilities(p)
    return (SplitMix64(rng_seed).uniform(len(p)) < p).astype(np.int8)

@dc.dataclass(eq=False)
class SequentialResult:
    labels: np.ndarray = dc.field(repr=False)
    "+-1 per element"
    potentials: list[float] = dc.field(default_factory=list, repr=False)
    "Pot before the first and after every decision"

def sequential_conditional_fix (
    system: SetSystem, order: np.ndarray | None = None, lam: float = SEQUENTIAL_LAMBDA
) -> SequentialResult:
    """
    Labels the elements one at a time with conditional expectations over two product
    potentials per set, normalized so that the starting potential is exactly 1.

    :param order: Element order, identity by default
    :raises RegimeError: If a set has at most ``50 ln(3m)`` elements
    """
    minimum = 50 * math.log(3 * max(system.m, 1))
    sizes = system.sizes
    if system.m and sizes.min() <= minimum:
        raise RegimeError(f"Every set needs more than {minimum:.1f} elements")

    order = np.arange(system.n) if order is None else np.asarray(order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(system.n)):
        raise InvalidArgument("Element order must be a permutation of the ground set")

    membership = system.to_matrix().csr.tocsc()
    compensator = 1 + lam * lam
    up = np.ones(system.m)
    down = np.ones(system.m)
    scale = 1 / (2 * max(system.m, 1))

    labels = np.ones(system.n, dtype=np.int8)
    potentials = [float(np.sum(up + down) * scale) if system.m else 0.0]
    potential = potentials[0]

    for element in order:
        sets = membership.indices[membership.indptr[element]:membership.indptr[element + 1]]
        change = {}
        for label in (1, -1):
            grow = (1 + lam * label + lam * lam) / compensator
            shrink = (1 - lam * label + lam * lam) / compensator
            change[label] = np.sum(up[sets] * (grow - 1) + down[sets] * (shrink - 1))

        label = 1 if change[1] <= change[-1] else -1
        labels[element] = label
        up[sets] *= (1 + lam * label + lam * lam) / compensator
        down[sets] *= (1 - lam * label + lam * lam) / compensator

        potential += change[label] * scale
        potentials.append(potential)

    logger.debug(f"Sequential labelling done, final potential {potential:.6g}")

    return SequentialResult(labels=labels, potentials=potentials)

def monte_carlo_percentile (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, seeds: int = 100,
    percentile: float = 95.0, threads: int = 1
) -> float:
    """
    Percentile over seeds of the worst row's ``deviation / Delta_i`` under independent
    rounding.
    """
    p = check_probabilities(p, A.n)
    delta = check_delta(delta, A.m)
    if not A.m:
        return 0.0

    def worst (seed: int) -> float:
        return float(np.max(A.deviations(p, monte_carlo_round(p, seed)) / delta))

    with futures.ThreadPoolExecutor(max_workers=threads) as pool:
        values = list(pool.map(worst, range(seeds)))

    return float(np.percentile(values, percentile))
