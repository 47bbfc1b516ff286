import dataclasses as dc
import logging
import math
from collections.abc import Sequence

import numpy as np
from dataclasses_json import dataclass_json
from scipy.special import logsumexp

from derand.buckets import BucketDecomposition, classify_rows, partial_exponent
from derand.config import FixingConfig
from derand.error import InvalidArgument, ShapeMismatch
from derand.matrix import ConstraintMatrix
from derand.pairwise_space import (ObjectiveBuilder, PairwiseSpace,
                                   QuadraticObjective, WorkCounter,
                                   build_space, derandomize)

logger = logging.getLogger(__name__)

GRID_TOLERANCE = 1e-9

@dc.dataclass(eq=False)
class WalkState:
    """
    Exact walk positions ``p_{j,t} = numerators[j] / k``.
    """
    k: int = dc.field()
    "Granularity"
    steps: int = dc.field()
    "Step budget T"
    numerators: np.ndarray = dc.field(repr=False)
    "Integer position of every column in [0, k]"
    t: int = dc.field(default=0)
    "Steps taken"

    @property
    def moving (self) -> np.ndarray:
        return (self.numerators != 0) & (self.numerators != self.k)

    @property
    def probabilities (self) -> np.ndarray:
        return self.numerators / self.k

def check_granularity (k: int):
    if k < 2 or k % 2:
        raise InvalidArgument(f"The walk needs an even granularity k >= 2, got {k}")

def grid_numerators (p: np.ndarray, k: int) -> np.ndarray:
    """
    Integer numerators of a vector on the 1/k grid.

    :raises InvalidArgument: If some entry is outside [0, 1] or off the grid
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ShapeMismatch("Probabilities must be a vector")

    if len(p) and (p.min() < 0 or p.max() > 1):
        raise InvalidArgument("Probabilities must lie in [0, 1]")

    scaled = p * k
    numerators = np.rint(scaled).astype(np.int64)
    if not np.all(np.abs(scaled - numerators) <= GRID_TOLERANCE * max(k, 1)):
        raise InvalidArgument(f"Probabilities must be multiples of 1/{k}; round them first")

    return numerators

def init_state (
    p: np.ndarray, k: int, steps: int | None = None, config: FixingConfig | None = None
) -> WalkState:
    """
    Walk state at time 0.

    :param p: Probabilities on the 1/k grid
    :param k: Even granularity
    :param steps: Step budget override, default ``config.horizon * k^2``
    :param config: Constants, paper profile when omitted
    """
    check_granularity(k)
    config = config or FixingConfig()

    return WalkState(
        k=k, steps=config.steps(k) if steps is None else int(steps),
        numerators=grid_numerators(p, k)
    )

def pair_spread (numerators: np.ndarray, size: np.ndarray, bucket: np.ndarray,
                 count: int, k: int) -> np.ndarray:
    """
    ``sum_{(j1, j2) in B^2} (p_j1 - p_j2)^2`` per bucket, from integer sums.
    """
    total = np.bincount(bucket, weights=numerators, minlength=count)
    square = np.bincount(bucket, weights=numerators.astype(np.float64) ** 2, minlength=count)

    return (2 * size * square - 2 * total ** 2) / (k * k)

@dc.dataclass(eq=False)
class BucketTracker:
    """
    Spread trackers ``y_{B,t}`` of the representative buckets and their members
    """
    size: np.ndarray = dc.field(repr=False)
    member_bucket: np.ndarray = dc.field(repr=False)
    member_col: np.ndarray = dc.field(repr=False)
    y: np.ndarray = dc.field(repr=False)
    additive: np.ndarray = dc.field(repr=False)
    "Buckets that switched to the additive rule"

    @property
    def count (self) -> int:
        return len(self.size)

    def moving_counts (self, moving: np.ndarray) -> np.ndarray:
        return np.bincount(
            self.member_bucket, weights=moving[self.member_col], minlength=self.count
        ).astype(np.int64)

    def additive_mode (self, moving: np.ndarray) -> np.ndarray:
        """
        Buckets using the additive rule this step: at most |B|/10 members moving.
        """
        return self.additive | (10 * self.moving_counts(moving) <= self.size)

    def spread (self, numerators: np.ndarray, k: int) -> np.ndarray:
        return pair_spread(
            numerators[self.member_col], self.size, self.member_bucket, self.count, k
        )

@dc.dataclass(eq=False)
class PotentialLedger:
    """
    Log-space potentials of the nonboring rows and their representative buckets.

    ``log_phi1[r]`` is ``log(Phi1_t / Phi1_0)`` of row ``rows[r]``; ``log_psi[b]`` is
    ``log(Psi_t / Psi_0)`` of bucket ``b``.
    """
    k: int = dc.field()
    rows: np.ndarray = dc.field(repr=False)
    "Nonboring row ids"
    log_prob: np.ndarray = dc.field(repr=False)
    "log prob_i^bad per nonboring row"
    lam: np.ndarray = dc.field(repr=False)
    log_phi_comp: np.ndarray = dc.field(repr=False)
    "log(1 + lam^2 sum a^2 / k^2)"
    log_phi1: np.ndarray = dc.field(repr=False)
    log_phi2: np.ndarray = dc.field(repr=False)
    entry_pos: np.ndarray = dc.field(repr=False)
    "Position in ``rows`` of each nonboring entry"
    entry_col: np.ndarray = dc.field(repr=False)
    entry_weight: np.ndarray = dc.field(repr=False)
    bucket_pos: np.ndarray = dc.field(repr=False)
    "Position in ``rows`` of each representative bucket"
    bucket_lam: np.ndarray = dc.field(repr=False)
    log_psi_comp: np.ndarray = dc.field(repr=False)
    log_psi_weight: np.ndarray = dc.field(repr=False)
    "-min(|B|, k) / divisor"
    log_psi: np.ndarray = dc.field(repr=False)

    def log_terms (self) -> np.ndarray:
        return np.concatenate((
            self.log_prob + self.log_phi1,
            self.log_prob + self.log_phi2,
            self.log_prob[self.bucket_pos] + self.log_psi_weight + self.log_psi,
        ))

    def log_potential (self) -> float:
        terms = self.log_terms()
        if not len(terms) or np.all(np.isneginf(terms)):
            return -math.inf

        return float(logsumexp(terms))

    def potential (self) -> float:
        return math.exp(self.log_potential())

def build_ledger (
    A: ConstraintMatrix, state: WalkState, decomposition: BucketDecomposition,
    config: FixingConfig
) -> tuple[PotentialLedger, BucketTracker]:
    """
    Multipliers, compensators and trackers at time 0.
    """
    k = state.k
    nonboring = decomposition.nonboring
    rows = np.flatnonzero(nonboring)
    position = np.full(A.m, -1, dtype=np.int64)
    position[rows] = np.arange(len(rows))

    delta = decomposition.delta[rows]
    sums = decomposition.row_sums[rows]
    squares = decomposition.row_square_sums[rows]
    c = config.failure_constant

    lam = np.minimum(delta / squares, k / sums) / config.lambda_divisor
    log_phi_comp = np.log1p(lam ** 2 * squares / k ** 2)
    log_prob = math.log(c) - partial_exponent(A, decomposition.delta, k)[rows] / c

    entries = nonboring[decomposition.entry_rows]

    buckets = np.flatnonzero(decomposition.representative)
    local = np.full(decomposition.bucket_count, -1, dtype=np.int64)
    local[buckets] = np.arange(len(buckets))
    members = np.flatnonzero(decomposition.representative[decomposition.entry_bucket])

    size = decomposition.bucket_size[buckets].astype(np.float64)
    bucket_lam = k / (config.bucket_lambda_divisor * size * (size + k))
    log_psi_comp = np.log(
        1 - bucket_lam * size ** 2 / (100 * k ** 2)
        + bucket_lam ** 2 * 100 * size ** 3 / k ** 2 * (1 + size / k)
    )

    ledger = PotentialLedger(
        k=k, rows=rows, log_prob=log_prob, lam=lam, log_phi_comp=log_phi_comp,
        log_phi1=np.zeros(len(rows)), log_phi2=np.zeros(len(rows)),
        entry_pos=position[decomposition.entry_rows[entries]],
        entry_col=decomposition.entry_cols[entries],
        entry_weight=decomposition.entry_weights[entries],
        bucket_pos=position[decomposition.bucket_row[buckets]],
        bucket_lam=bucket_lam, log_psi_comp=log_psi_comp,
        log_psi_weight=-np.minimum(size, k) / config.psi_weight_divisor,
        log_psi=np.zeros(len(buckets)),
    )

    tracker = BucketTracker(
        size=decomposition.bucket_size[buckets].astype(np.int64),
        member_bucket=local[decomposition.entry_bucket[members]],
        member_col=decomposition.entry_cols[members],
        y=np.zeros(len(buckets)), additive=np.zeros(len(buckets), dtype=bool),
    )
    tracker.y = tracker.spread(state.numerators, k)

    return ledger, tracker

@dc.dataclass
class _StepWeights:
    phi1: np.ndarray
    phi2: np.ndarray
    psi: np.ndarray
    shift: float

def _step_weights (ledger: PotentialLedger) -> _StepWeights:
    log_phi1 = ledger.log_prob + ledger.log_phi1 - ledger.log_phi_comp
    log_phi2 = ledger.log_prob + ledger.log_phi2 - ledger.log_phi_comp
    log_psi = (
        ledger.log_prob[ledger.bucket_pos] + ledger.log_psi_weight + ledger.log_psi
        - ledger.log_psi_comp
    )
    finite = np.concatenate((log_phi1, log_phi2, log_psi))
    finite = finite[np.isfinite(finite)]
    shift = float(finite.max()) if len(finite) else 0.0

    return _StepWeights(
        phi1=np.exp(log_phi1 - shift), phi2=np.exp(log_phi2 - shift),
        psi=np.exp(log_psi - shift), shift=shift
    )

def _bucket_gradients (
    state: WalkState, tracker: BucketTracker
) -> tuple[np.ndarray, np.ndarray]:
    """
    ``c_j = 2|B| p_j - 2 sum_B p`` per member and the bucket's moving count.
    """
    k = state.k
    p = state.numerators[tracker.member_col] / k
    total = np.bincount(tracker.member_bucket, weights=p, minlength=tracker.count)
    gradient = 2 * tracker.size[tracker.member_bucket] * p - 2 * total[tracker.member_bucket]

    return gradient, tracker.moving_counts(state.moving)

def assemble_step_objective (
    state: WalkState, decomposition: BucketDecomposition, ledger: PotentialLedger,
    tracker: BucketTracker
) -> QuadraticObjective:
    """
    ``Pot_t`` as a quadratic function of the step signs of the moving columns.

    Variable ``v`` of the objective is the sign of the ``v``-th moving column; the step of
    that column is ``sign / k``. The objective times ``exp(log_scale)`` equals ``Pot_t``.
    """
    moving = state.moving
    columns = np.flatnonzero(moving)
    builder = ObjectiveBuilder(len(columns))
    k = float(state.k)

    weights = _step_weights(ledger)
    local = np.full(len(moving), -1, dtype=np.int64)
    local[columns] = np.arange(len(columns))

    # rows: (w1 + w2) + (w1 - w2) s lam / k + (w1 + w2) (lam / k)^2 s s
    row_terms = builder.new_terms(len(ledger.rows))
    active = moving[ledger.entry_col]
    pos = ledger.entry_pos[active]
    var = local[ledger.entry_col[active]]
    weight = ledger.entry_weight[active]
    scale = ledger.lam / k

    builder.add_constant(np.sum(weights.phi1 + weights.phi2))
    builder.add_linear(var, (weights.phi1 - weights.phi2)[pos] * scale[pos] * weight)
    builder.add_left(
        row_terms[pos], var, (weights.phi1 + weights.phi2)[pos] * scale[pos] ** 2 * weight
    )
    builder.add_right(row_terms[pos], var, weight)

    if tracker.count:
        gradient, moving_count = _bucket_gradients(state, tracker)
        additive = tracker.additive_mode(moving)
        size = tracker.size.astype(np.float64)
        lam = ledger.bucket_lam
        w = weights.psi

        builder.add_constant(np.sum(w * (1 + lam ** 2 * 100 * size ** 4 / k ** 3)))
        builder.add_constant(np.sum(np.where(
            additive, -w * lam * size ** 2 / (100 * k ** 2),
            -w * lam * 2 * size * moving_count / k ** 2
        )))

        member = moving[tracker.member_col]
        bucket = tracker.member_bucket[member]
        member_var = local[tracker.member_col[member]]
        member_gradient = gradient[member]

        # (4 lam'^2 / k^2) (sum c eps)^2 in every bucket
        surrogate_terms = builder.new_terms(tracker.count)
        builder.add_left(
            surrogate_terms[bucket], member_var,
            w[bucket] * 4 * lam[bucket] ** 2 / k ** 2 * member_gradient
        )
        builder.add_right(surrogate_terms[bucket], member_var, member_gradient)

        # -lam' dy while more than a tenth of the bucket moves
        spread = ~additive[bucket]
        spread_terms = builder.new_terms(tracker.count)
        builder.add_left(
            spread_terms[bucket[spread]], member_var[spread],
            w[bucket[spread]] * 2 * lam[bucket[spread]] / k ** 2
        )
        builder.add_right(
            spread_terms[bucket[spread]], member_var[spread], np.ones(int(spread.sum()))
        )
        builder.add_linear(
            member_var[spread],
            -w[bucket[spread]] * lam[bucket[spread]] * 2 * member_gradient[spread] / k
        )

    return builder.build(log_scale=weights.shift)

def free_directions (columns: np.ndarray) -> np.ndarray:
    """
    Fixed direction of columns no potential term depends on: +1 when the column index has
    an even number of set bits, -1 otherwise.
    """
    parity = np.bitwise_count(np.asarray(columns, dtype=np.uint64)) & 1
    return (1 - 2 * parity.astype(np.int8)).astype(np.int8)

def bucket_surrogate (p: np.ndarray, x: np.ndarray, k: int) -> tuple[float, float]:
    """
    Exact spread increment and its degree-2 upper bound for one bucket.

    :param p: Member positions before the step
    :param x: Member steps (in {-1/k, 0, 1/k})
    :return: ``(y_t - y_{t-1}, surrogate)``
    """
    p = np.asarray(p, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    size = len(p)

    step = x[:, None] - x[None, :]
    gap = p[:, None] - p[None, :]
    increment = float(np.sum((gap + step) ** 2) - np.sum(gap ** 2))
    surrogate = 4 * float(np.sum(step * gap)) ** 2 + 100 * size ** 4 / k ** 3

    return increment, surrogate

@dc.dataclass
class _Realized:
    phi1: np.ndarray
    phi2: np.ndarray
    psi: np.ndarray

def _realized_factors (
    state: WalkState, ledger: PotentialLedger, tracker: BucketTracker, signs: np.ndarray
) -> _Realized:
    k = float(state.k)
    moving = state.moving
    step = np.zeros(len(moving))
    step[moving] = signs

    row_step = np.bincount(
        ledger.entry_pos, weights=ledger.entry_weight * step[ledger.entry_col],
        minlength=len(ledger.rows)
    ) / k
    s = ledger.lam * row_step

    psi = np.zeros(tracker.count)
    if tracker.count:
        gradient, moving_count = _bucket_gradients(state, tracker)
        additive = tracker.additive_mode(moving)
        size = tracker.size.astype(np.float64)
        member_step = step[tracker.member_col]

        signed = np.bincount(
            tracker.member_bucket, weights=gradient * member_step, minlength=tracker.count
        )
        total = np.bincount(tracker.member_bucket, weights=member_step, minlength=tracker.count)
        spread = (2 * size * moving_count - 2 * total ** 2) / k ** 2 + 2 * signed / k
        increment = np.where(additive, size ** 2 / (100 * k ** 2), spread)
        surrogate = 4 * signed ** 2 / k ** 2 + 100 * size ** 4 / k ** 3
        psi = 1 - ledger.bucket_lam * increment + ledger.bucket_lam ** 2 * surrogate

    return _Realized(phi1=1 + s + s ** 2, phi2=1 - s + s ** 2, psi=psi)

def apply_step (
    state: WalkState, ledger: PotentialLedger, tracker: BucketTracker, signs: np.ndarray
):
    """
    Commits one step: moves the columns, multiplies in the realized factors and updates
    the spread trackers.

    :param signs: +-1 per moving column, in column order
    """
    moving = state.moving
    signs = np.asarray(signs, dtype=np.int64)
    if signs.shape != (int(moving.sum()), ):
        raise ShapeMismatch("One sign per moving column is required")

    realized = _realized_factors(state, ledger, tracker, signs)
    if np.any(realized.psi <= 0):
        logger.warning("Nonpositive spread factor; the step signs are not a valid walk step")

    ledger.log_phi1 += np.log(realized.phi1) - ledger.log_phi_comp
    ledger.log_phi2 += np.log(realized.phi2) - ledger.log_phi_comp
    ledger.log_psi += np.log(realized.psi) - ledger.log_psi_comp

    additive = tracker.additive_mode(moving)
    state.numerators[moving] += signs
    state.t += 1

    size = tracker.size.astype(np.float64)
    tracker.y = np.where(
        additive, tracker.y + size ** 2 / (100 * state.k ** 2),
        tracker.spread(state.numerators, state.k)
    )
    tracker.additive = additive

@dataclass_json
@dc.dataclass
class StepRecord:
    step: int = dc.field()
    "Step index t"
    potential: float = dc.field()
    "Pot_t after the step"
    moving: int = dc.field()
    "Columns moving during the step"
    complexity: int = dc.field(default=0)
    "Total complexity of the step objective"
    work: int = dc.field(default=0)
    "Seed search operations spent on the step"

def step (
    state: WalkState, decomposition: BucketDecomposition, ledger: PotentialLedger,
    tracker: BucketTracker, space: PairwiseSpace | None = None, threads: int = 1,
    counter: WorkCounter | None = None
) -> tuple[StepRecord, np.ndarray, np.ndarray]:
    """
    One derandomized walk step.

    :param space: Pairwise space over the moving columns, built when missing or mismatched
    :return: The step record, the moved columns and their signs
    """
    if state.t >= state.steps:
        raise InvalidArgument(f"Step budget of {state.steps} steps already used")

    moving = state.moving
    columns = np.flatnonzero(moving)

    if not len(columns):
        state.t += 1
        record = StepRecord(step=state.t, potential=ledger.potential(), moving=0)

        return record, columns, np.zeros(0, dtype=np.int8)

    objective = assemble_step_objective(state, decomposition, ledger, tracker)
    if space is None or space.n != len(columns):
        space = build_space(len(columns))

    local = WorkCounter()
    signs = derandomize(space, objective, threads=threads, counter=local)
    free = ~objective.active
    if free.any():
        signs[free] = free_directions(columns[free])

    apply_step(state, ledger, tracker, signs)

    if counter is not None:
        counter.operations += local.operations
        counter.evaluations += local.evaluations

    record = StepRecord(
        step=state.t, potential=ledger.potential(), moving=len(columns),
        complexity=objective.complexity, work=local.operations
    )
    logger.debug(f"step {record.step}: Pot={record.potential:.6g}, moving={record.moving}")

    return record, columns, signs

def replay_potential (
    A: ConstraintMatrix, p: np.ndarray, delta: np.ndarray, k: int, config: FixingConfig,
    history: Sequence[tuple[np.ndarray, np.ndarray]]
) -> list[float]:
    """
    Recomputes ``Pot_0, ..., Pot_t`` directly from the definitions and a step history.

    :param history: ``(columns, signs)`` of every step; empty steps leave Pot unchanged
    :return: Potential after every prefix of the history
    """
    decomposition = classify_rows(A, delta, k)
    numerators = grid_numerators(p, k).astype(np.int64)
    current = numerators / k
    c = config.failure_constant

    rows = [i for i in range(A.m) if decomposition.nonboring[i]]
    lam, comp, log_prob = {}, {}, {}
    for i in rows:
        cols, weights = A.row(i)
        total, square = float(np.sum(weights)), float(np.sum(weights ** 2))
        lam[i] = min(delta[i] / square, k / total) / config.lambda_divisor
        comp[i] = 1 + lam[i] ** 2 * square / k ** 2
        log_prob[i] = math.log(c) - min(delta[i] ** 2 / square, delta[i] * k / total) / c

    buckets = []
    for b in np.flatnonzero(decomposition.representative):
        members = decomposition.entry_cols[decomposition.entry_bucket == b]
        size = len(members)
        lam_b = k / (config.bucket_lambda_divisor * size * (size + k))
        buckets.append({
            "row": int(decomposition.bucket_row[b]), "members": members, "lam": lam_b,
            "comp": 1 - lam_b * size ** 2 / (100 * k ** 2)
            + lam_b ** 2 * 100 * size ** 3 / k ** 2 * (1 + size / k),
            "weight": -min(size, k) / config.psi_weight_divisor,
            "y": float(np.sum((current[members][:, None] - current[members][None, :]) ** 2)),
            "additive": False, "log": 0.0,
        })

    log1 = dict.fromkeys(rows, 0.0)
    log2 = dict.fromkeys(rows, 0.0)

    def total () -> float:
        values = [math.exp(log_prob[i] + log1[i]) + math.exp(log_prob[i] + log2[i]) for i in rows]
        values += [math.exp(log_prob[b["row"]] + b["weight"] + b["log"]) for b in buckets]
        return math.fsum(values)

    potentials = [total()]
    for columns, signs in history:
        columns = np.asarray(columns, dtype=np.int64)
        if not len(columns):
            potentials.append(potentials[-1])
            continue

        steps = np.zeros(A.n, dtype=np.int64)
        steps[columns] = np.asarray(signs, dtype=np.int64)
        x = steps / k

        for i in rows:
            cols, weights = A.row(i)
            s = lam[i] * float(np.sum(weights * x[cols]))
            log1[i] += math.log(1 + s + s * s) - math.log(comp[i])
            log2[i] += math.log(1 - s + s * s) - math.log(comp[i])

        moving_before = (current > 0) & (current < 1)
        for b in buckets:
            members = b["members"]
            size = len(members)
            b["additive"] = b["additive"] or 10 * int(moving_before[members].sum()) <= size
            increment, surrogate = bucket_surrogate(current[members], x[members], k)
            if b["additive"]:
                increment = size ** 2 / (100 * k ** 2)

            factor = 1 - b["lam"] * increment + b["lam"] ** 2 * surrogate
            b["log"] += math.log(factor) - math.log(b["comp"])

        numerators = numerators + steps
        current = numerators / k
        potentials.append(total())

    return potentials
