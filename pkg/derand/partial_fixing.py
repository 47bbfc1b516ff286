"""
The derandomized walk that freezes a constant fraction of the coordinates at 0/1
while keeping every weighted deviation small.
"""
import dataclasses as dc
import logging
from collections.abc import Callable

import numpy as np

from derand.buckets import (BucketDecomposition, classify_rows,
                            compute_prob_bad_partial)
from derand.config import FixingConfig
from derand.error import ShapeMismatch
from derand.matrix import ConstraintMatrix
from derand.pairwise_space import PairwiseSpace, WorkCounter, build_space
from derand.potentials import (StepRecord, WalkState, build_ledger,
                               init_state, step)

__all__ = [
    "PartialFixResult", "check_partial_conditions", "classify_rows",
    "compute_prob_bad_partial", "init_state", "partial_fix", "step",
]

logger = logging.getLogger(__name__)

#: Share of a row's weight (and squared weight) allowed to stay nonintegral
NONINTEGRAL_SHARE = 0.99

@dc.dataclass(eq=False)
class PartialFixResult:
    k: int = dc.field()
    q: np.ndarray = dc.field(repr=False)
    "Final grid values numerators / k"
    numerators: np.ndarray = dc.field(repr=False)
    decomposition: BucketDecomposition = dc.field(repr=False)
    "Buckets and ignore sets of every row"
    bad: np.ndarray = dc.field()
    "Sorted ids of the rows failing a direct check"
    deviations: np.ndarray = dc.field(repr=False)
    "|sum_j a_ij (p_j - q_j)| per row"
    prob_bad: np.ndarray = dc.field(repr=False)
    "Per-row failure bound, zero for rows that can never fail"
    records: list[StepRecord] = dc.field(default_factory=list, repr=False)
    history: list[tuple[np.ndarray, np.ndarray]] | None = dc.field(default=None, repr=False)
    "(moving columns, signs) of every step when requested"
    initial_potential: float = dc.field(default=0.0)

    @property
    def nonintegral (self) -> np.ndarray:
        return (self.numerators != 0) & (self.numerators != self.k)

    @property
    def steps (self) -> int:
        return len(self.records)

    @property
    def work (self) -> int:
        return sum(record.work for record in self.records)

    @property
    def potentials (self) -> list[float]:
        return [self.initial_potential] + [record.potential for record in self.records]

def check_partial_conditions (
    A: ConstraintMatrix, p: np.ndarray, q: np.ndarray, nonintegral: np.ndarray,
    decomposition: BucketDecomposition, deviation_fraction: float
) -> tuple[np.ndarray, np.ndarray]:
    """
    Directly checks the three output conditions of a partial fixing run.

    A row fails when the weight of its tracked nonintegral columns exceeds 0.99 of its
    total weight, when the same holds for squared weights, or when its deviation exceeds
    ``deviation_fraction * Delta_i``. Rows with ``Delta_i >= sum_j a_ij`` never fail.

    :return: Mask of failing rows and the per-row deviations
    """
    deviations = A.deviations(p, q)
    tracked = nonintegral[decomposition.entry_cols] & ~decomposition.ignore_entries
    weights = decomposition.entry_weights * tracked

    mass = np.bincount(decomposition.entry_rows, weights=weights, minlength=A.m)
    square = np.bincount(
        decomposition.entry_rows, weights=weights * decomposition.entry_weights, minlength=A.m
    )

    failing = (
        (mass > NONINTEGRAL_SHARE * decomposition.row_sums)
        | (square > NONINTEGRAL_SHARE * decomposition.row_square_sums)
        | (deviations > deviation_fraction * decomposition.delta)
    )

    return failing & ~decomposition.boring_large, deviations

def partial_fix (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int,
    config: FixingConfig | None = None, steps: int | None = None, keep_history: bool = False,
    trace: Callable[[StepRecord], None] | None = None
) -> PartialFixResult:
    """
    Runs the derandomized walk on probabilities lying on the 1/k grid.

    :param A: Constraint matrix
    :param p: Probabilities, multiples of 1/k
    :param delta: Positive deviation bound per row
    :param k: Even granularity
    :param config: Constants, paper profile when omitted
    :param steps: Step budget override
    :param keep_history: Keep the moving columns and signs of every step
    :param trace: Called with the record of every step
    :raises InvalidArgument: On off-grid probabilities, odd ``k`` or nonpositive bounds
    :return: The walk's outcome with its directly checked bad rows
    """
    config = config or FixingConfig()
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (A.n, ):
        raise ShapeMismatch(f"Expected {A.n} probabilities, got shape {p.shape}")

    state: WalkState = init_state(p, k, steps, config)
    decomposition = classify_rows(A, delta, k)
    ledger, tracker = build_ledger(A, state, decomposition, config)
    counter = WorkCounter()

    result = PartialFixResult(
        k=k, q=p, numerators=state.numerators, decomposition=decomposition,
        bad=np.zeros(0, dtype=np.int64), deviations=np.zeros(A.m), prob_bad=np.zeros(A.m),
        history=[] if keep_history else None, initial_potential=ledger.potential(),
    )
    logger.info(
        f"Walk over {A.n} columns and {A.m} rows, k={k}, T={state.steps}, "
        f"{int(state.moving.sum())} moving"
    )

    space: PairwiseSpace | None = None
    while state.t < state.steps:
        moving_count = int(state.moving.sum())
        if not moving_count and config.early_exit:
            logger.debug(f"Nothing moves after {state.t} steps, stopping early")
            break

        if moving_count and (space is None or space.n != moving_count):
            space = build_space(moving_count)

        record, columns, signs = step(
            state, decomposition, ledger, tracker, space, config.threads, counter
        )
        result.records.append(record)
        if result.history is not None:
            result.history.append((columns, signs.astype(np.int64)))

        if trace is not None:
            trace(record)

    nonintegral = state.moving
    result.q = state.probabilities
    result.numerators = state.numerators.copy()

    failing, result.deviations = check_partial_conditions(
        A, p, result.q, nonintegral, decomposition, config.deviation_fraction
    )
    result.bad = np.flatnonzero(failing)
    result.prob_bad = np.where(
        decomposition.boring_large, 0.0,
        compute_prob_bad_partial(A, decomposition.delta, k, config.failure_constant)
    )

    logger.info(
        f"Walk done after {state.t} steps: {int(nonintegral.sum())} nonintegral columns, "
        f"{len(result.bad)} bad rows, work {counter.operations}"
    )

    return result
