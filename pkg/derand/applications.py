import dataclasses as dc
import logging
import math
from enum import Enum

import numpy as np
from dataclasses_json import dataclass_json

from derand.concentration import ExponentReport, fix_chernoff
from derand.config import FixingConfig
from derand.error import InvalidArgument, RegimeError
from derand.integral_rounding import even_granularity
from derand.matrix import ConstraintMatrix
from derand.partial_fixing import partial_fix

logger = logging.getLogger(__name__)

#: Share of every set that must end up in each of YES and NO
PARTITION_TARGET = 1 / 5
#: Relative slack of the window checks
WINDOW_TOLERANCE = 1e-9

@dc.dataclass
class SetSystem:
    """
    Sets over the ground set ``[0, n)``.
    """
    n: int = dc.field()
    "Ground set size"
    sets: list[list[int]] = dc.field(default_factory=list)
    "Sorted member lists"

    def __post_init__ (self):
        if self.n < 0:
            raise InvalidArgument(f"Ground set size must be nonnegative, got {self.n}")

        normalized = []
        for index, members in enumerate(self.sets):
            members = sorted(int(j) for j in members)
            if any(j < 0 or j >= self.n for j in members):
                raise InvalidArgument(f"Set {index} has an element outside [0, {self.n})")

            if len(set(members)) != len(members):
                raise InvalidArgument(f"Set {index} repeats an element")

            normalized.append(members)

        self.sets = normalized

    @property
    def m (self) -> int:
        return len(self.sets)

    @property
    def sizes (self) -> np.ndarray:
        return np.array([len(members) for members in self.sets], dtype=np.int64)

    def to_matrix (self) -> ConstraintMatrix:
        return ConstraintMatrix.from_rows(self.n, self.sets)

@dc.dataclass
class Graph:
    """
    Undirected simple graph on ``[0, vertex_count)``.
    """
    vertex_count: int = dc.field()
    edges: list[tuple[int, int]] = dc.field(default_factory=list)
    adjacency: list[list[int]] = dc.field(init=False, repr=False)

    def __post_init__ (self):
        neighbors = [set() for _ in range(self.vertex_count)]

        for u, v in self.edges:
            if not (0 <= u < self.vertex_count and 0 <= v < self.vertex_count):
                raise InvalidArgument(f"Edge ({u}, {v}) has an endpoint outside the graph")

            if u == v:
                raise InvalidArgument(f"Self-loop at vertex {u}")

            neighbors[u].add(v)
            neighbors[v].add(u)

        self.adjacency = [sorted(group) for group in neighbors]

    @property
    def degrees (self) -> np.ndarray:
        return np.array([len(group) for group in self.adjacency], dtype=np.int64)

    def neighborhoods (self, min_degree: int = 0) -> tuple[list[int], SetSystem]:
        """
        Vertices of degree at least ``min_degree`` and their neighborhoods as sets.
        """
        vertices = [v for v, group in enumerate(self.adjacency) if len(group) >= min_degree]
        return vertices, SetSystem(self.vertex_count, [self.adjacency[v] for v in vertices])

@dataclass_json
@dc.dataclass
class SampleReport:
    p: float = dc.field()
    epsilon: float = dc.field()
    sizes: list[int] = dc.field(default_factory=list)
    counts: list[int] = dc.field(default_factory=list)
    "|S_i cap T| counted directly from T"
    lower: list[float] = dc.field(default_factory=list)
    upper: list[float] = dc.field(default_factory=list)
    in_window: list[bool] = dc.field(default_factory=list)
    bad: list[int] = dc.field(default_factory=list)
    threshold: float = dc.field(default=0.0)
    "Set size from which the sampling guarantee applies"
    below_threshold: list[int] = dc.field(default_factory=list)
    vertices: list[int] | None = dc.field(default=None)
    "Constrained vertices when sampling neighborhoods"
    bounds: ExponentReport | None = dc.field(default=None)

    @property
    def outside_window (self) -> list[int]:
        return [i for i, inside in enumerate(self.in_window) if not inside]

def sample_threshold (n: int, p: float, epsilon: float) -> float:
    return math.log(max(n, 2)) / (p * epsilon ** 2)

def _check_sampling (p: float, epsilon: float):
    if not 0 < p <= 1:
        raise InvalidArgument(f"Sampling probability must lie in (0, 1], got {p}")

    if not 0 < epsilon <= 1:
        raise InvalidArgument(f"epsilon must lie in (0, 1], got {epsilon}")

def sample_sets (
    system: SetSystem, p: float, epsilon: float, k: int, config: FixingConfig | None = None
) -> tuple[np.ndarray, SampleReport]:
    """
    Deterministically picks ``T`` so that every set meets it in ``(1 +- epsilon) p |S_i|``
    elements.

    :param system: Sets to keep balanced
    :param p: Sampling rate
    :param epsilon: Relative window half-width
    :param k: Walk granularity
    :param config: Constants, paper profile when omitted
    :raises InvalidArgument: On empty sets or parameters out of range
    :return: Sorted members of ``T`` and the per-set report
    """
    _check_sampling(p, epsilon)
    sizes = system.sizes
    if np.any(sizes == 0):
        raise InvalidArgument(f"Set {int(np.argmin(sizes))} is empty")

    threshold = sample_threshold(system.n, p, epsilon)
    below = np.flatnonzero(sizes < threshold)
    if len(below):
        logger.warning(
            f"{len(below)} sets are smaller than log(n) / (p eps^2) = {threshold:.1f}; "
            "the window is not guaranteed for them"
        )

    A = system.to_matrix()
    expected = p * sizes.astype(np.float64)
    q, bad, bounds = fix_chernoff(A, np.full(system.n, p), epsilon * expected, k, config)

    sample = np.flatnonzero(q)
    indicator = np.zeros(system.n)
    indicator[sample] = 1
    counts = A.dot(indicator)

    lower, upper = (1 - epsilon) * expected, (1 + epsilon) * expected
    slack = WINDOW_TOLERANCE * np.maximum(expected, 1)
    in_window = (counts >= lower - slack) & (counts <= upper + slack)

    report = SampleReport(
        p=p, epsilon=epsilon, sizes=sizes.tolist(), counts=np.rint(counts).astype(int).tolist(),
        lower=lower.tolist(), upper=upper.tolist(), in_window=in_window.tolist(),
        bad=bad.tolist(), threshold=threshold, below_threshold=below.tolist(), bounds=bounds,
    )
    logger.info(
        f"Sample of {len(sample)} elements, {len(report.outside_window)} of {system.m} sets "
        "outside their window"
    )

    return sample, report

def sample_graph_neighbors (
    graph: Graph, p: float, epsilon: float, k: int, config: FixingConfig | None = None,
    threshold: int | None = None
) -> tuple[np.ndarray, SampleReport]:
    """
    Picks vertices so that every vertex of large degree has ``(1 +- epsilon) d_v p`` sampled
    neighbors.

    :param threshold: Minimum constrained degree, ``ceil(log n / (p eps^2))`` by default
    """
    _check_sampling(p, epsilon)
    if threshold is None:
        threshold = math.ceil(sample_threshold(graph.vertex_count, p, epsilon))

    vertices, system = graph.neighborhoods(max(threshold, 1))
    if not vertices:
        logger.info(f"No vertex has degree {threshold} or more, sampling is unconstrained")

    sample, report = sample_sets(system, p, epsilon, k, config)
    report.threshold = float(threshold)
    report.vertices = vertices

    return sample, report

class Label (str, Enum):
    YES: str = "yes"
    NO: str = "no"
    MAYBE: str = "maybe"

@dataclass_json
@dc.dataclass
class PartitionReport:
    sizes: list[int] = dc.field(default_factory=list)
    yes: list[int] = dc.field(default_factory=list)
    no: list[int] = dc.field(default_factory=list)
    maybe: list[int] = dc.field(default_factory=list)
    bad: list[int] = dc.field(default_factory=list)
    "Sets failing a walk check or the 1/5 targets"
    minimum_size: float = dc.field(default=0.0)
    steps: int = dc.field(default=0)
    work: int = dc.field(default=0)

def partition_yes_no (
    system: SetSystem, k: int, config: FixingConfig | None = None
) -> tuple[list[Label], PartitionReport]:
    """
    Splits the ground set into YES, NO and MAYBE so that every set has at least a fifth of
    its elements in YES and a fifth in NO.

    :raises RegimeError: If some set is smaller than ``partition_min_factor * ln(n)``
    :return: One label per element and the per-set counts
    """
    config = config or FixingConfig()
    k = even_granularity(k)
    sizes = system.sizes
    minimum = config.partition_min_factor * math.log(max(system.n, 2))

    small = np.flatnonzero(sizes < minimum)
    if len(small):
        logger.warning(f"Sets {small.tolist()[:10]} are smaller than {minimum:.1f}")
        raise RegimeError(
            f"{len(small)} sets are below the minimum partition size {minimum:.1f}"
        )

    A = system.to_matrix()
    result = partial_fix(A, np.full(system.n, 0.5), sizes / 6, k, config)

    yes = result.numerators == k
    no = result.numerators == 0
    labels = [Label.YES if y else Label.NO if z else Label.MAYBE for y, z in zip(yes, no)]

    yes_counts = np.rint(A.dot(yes.astype(np.float64))).astype(np.int64)
    no_counts = np.rint(A.dot(no.astype(np.float64))).astype(np.int64)
    target = PARTITION_TARGET * sizes
    failing = (yes_counts < target) | (no_counts < target)
    failing[result.bad] = True

    report = PartitionReport(
        sizes=sizes.tolist(), yes=yes_counts.tolist(), no=no_counts.tolist(),
        maybe=(sizes - yes_counts - no_counts).tolist(), bad=np.flatnonzero(failing).tolist(),
        minimum_size=minimum, steps=result.steps, work=result.work,
    )
    logger.info(
        f"Partition: {int(yes.sum())} YES, {int(no.sum())} NO, "
        f"{system.n - int(yes.sum() + no.sum())} MAYBE, {len(report.bad)} bad sets"
    )

    return labels, report
