import dataclasses as dc
import logging
import math
import threading
from collections.abc import Sequence
from concurrent import futures

import numpy as np

from derand.error import InvalidArgument

logger = logging.getLogger(__name__)

@dc.dataclass
class WorkCounter:
    """
    Operations of the seed search: variables signed and grouped, objective entries read
    and coefficient groups combined, summed over every conditional expectation
    """
    operations: int = dc.field(default=0)
    "Accumulated operation count"
    evaluations: int = dc.field(default=0)
    "Number of conditional expectations computed"
    _lock: threading.Lock = dc.field(default_factory=threading.Lock, repr=False, compare=False)

    def add (self, operations: int):
        with self._lock:
            self.operations += int(operations)

    def finish (self):
        with self._lock:
            self.evaluations += 1

@dc.dataclass(frozen=True, eq=False)
class PairwiseSpace:
    """
    GF(2) dot-product space over ``n`` variables. Variable ``j`` reads the parity of
    ``index_codes[j] & z`` for a seed ``z`` of ``seed_bits`` bits.
    """
    n: int = dc.field()
    "Variable count"
    seed_bits: int = dc.field()
    "Seed length L"
    index_codes: np.ndarray = dc.field(repr=False)
    "Per-variable code, binary index followed by a constant 1"

    @property
    def seed_count (self) -> int:
        return 1 << self.seed_bits

    def code_bits (self, j: int) -> tuple[int, ...]:
        """
        Code of variable ``j`` as bits, most significant first.
        """
        code = int(self.index_codes[j])
        return tuple((code >> shift) & 1 for shift in range(self.seed_bits - 1, -1, -1))

@dc.dataclass(frozen=True)
class SeedPrefix:
    """
    Values of the first ``len(bits)`` seed bits, most significant first
    """
    bits: tuple[int, ...] = dc.field(default=())

    def __post_init__ (self):
        if any(bit not in (0, 1) for bit in self.bits):
            raise InvalidArgument(f"Seed bits must be 0 or 1, got {self.bits}")

    @property
    def length (self) -> int:
        return len(self.bits)

    @property
    def value (self) -> int:
        value = 0
        for bit in self.bits:
            value = (value << 1) | bit

        return value

    def extend (self, bit: int) -> "SeedPrefix":
        return SeedPrefix(self.bits + (bit, ))

@dc.dataclass(frozen=True)
class NiceQuadraticTerm:
    """
    ``(sum alpha_i x_i) * (sum beta_j x_j) + sum gamma_i x_i + delta`` over +-1 variables
    """
    left: tuple[tuple[int, float], ...] = dc.field(default=())
    "Pairs (i, alpha_i)"
    right: tuple[tuple[int, float], ...] = dc.field(default=())
    "Pairs (j, beta_j)"
    linear: tuple[tuple[int, float], ...] = dc.field(default=())
    "Pairs (i, gamma_i)"
    constant: float = dc.field(default=0.0)
    "delta"

    def __post_init__ (self):
        for name in ("left", "right", "linear"):
            object.__setattr__(
                self, name, tuple((int(index), float(coef)) for index, coef in getattr(self, name))
            )

        if not math.isfinite(self.constant) or any(
            not math.isfinite(coef) for _, coef in self.left + self.right + self.linear
        ):
            raise InvalidArgument("Quadratic term coefficients must be finite")

    @property
    def complexity (self) -> int:
        return len(self.left) + len(self.right) + len(self.linear) + 1

    def evaluate (self, x: Sequence[float]) -> float:
        left = sum(coef * x[index] for index, coef in self.left)
        right = sum(coef * x[index] for index, coef in self.right)
        linear = sum(coef * x[index] for index, coef in self.linear)

        return left * right + linear + self.constant

@dc.dataclass(frozen=True, eq=False)
class QuadraticObjective:
    """
    Sum of nice quadratic terms stored as flat arrays. Entry ``e`` of the left part
    contributes ``left_coef[e] * x[left_var[e]]`` to the left factor of term ``left_term[e]``.
    The represented function times ``exp(log_scale)`` is the caller's quantity.
    """
    n: int = dc.field()
    "Variable domain size"
    term_count: int = dc.field()
    left_term: np.ndarray = dc.field(repr=False)
    left_var: np.ndarray = dc.field(repr=False)
    left_coef: np.ndarray = dc.field(repr=False)
    right_term: np.ndarray = dc.field(repr=False)
    right_var: np.ndarray = dc.field(repr=False)
    right_coef: np.ndarray = dc.field(repr=False)
    linear_var: np.ndarray = dc.field(repr=False)
    linear_coef: np.ndarray = dc.field(repr=False)
    constant: float = dc.field(default=0.0)
    "Sum of the terms' constants"
    complexity: int = dc.field(default=0)
    "Total complexity, sum of the member term complexities"
    log_scale: float = dc.field(default=0.0)

    @classmethod
    def from_terms (
        cls, terms: Sequence[NiceQuadraticTerm], n: int, log_scale: float = 0.0
    ) -> "QuadraticObjective":
        builder = ObjectiveBuilder(n)
        for term in terms:
            builder.add_term(term)

        return builder.build(log_scale)

    @property
    def entries (self) -> int:
        return len(self.left_var) + len(self.right_var) + len(self.linear_var)

    @property
    def active (self) -> np.ndarray:
        """
        Mask of the variables appearing in some term
        """
        mask = np.zeros(self.n, dtype=bool)
        mask[self.left_var] = True
        mask[self.right_var] = True
        mask[self.linear_var] = True

        return mask

    def evaluate (self, x: np.ndarray) -> float:
        """
        Value at a concrete assignment (not rescaled by ``log_scale``).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n, ):
            raise InvalidArgument(f"Assignment must have length {self.n}, got {x.shape}")

        left = np.bincount(
            self.left_term, weights=self.left_coef * x[self.left_var], minlength=self.term_count
        )
        right = np.bincount(
            self.right_term, weights=self.right_coef * x[self.right_var],
            minlength=self.term_count
        )
        linear = np.sum(self.linear_coef * x[self.linear_var])

        return float(np.sum(left * right) + linear + self.constant)

class ObjectiveBuilder:
    """
    Collects nice quadratic terms block by block.
    """
    def __init__ (self, n: int):
        self.n = n
        self.term_count = 0
        self.constant = 0.0
        self._left: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._right: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._linear: list[tuple[np.ndarray, np.ndarray]] = []

    def new_terms (self, count: int) -> np.ndarray:
        """
        Reserves ``count`` term ids.
        """
        ids = np.arange(self.term_count, self.term_count + count, dtype=np.int64)
        self.term_count += count

        return ids

    def add_left (self, term: np.ndarray, var: np.ndarray, coef: np.ndarray):
        self._left.append(self._block(term, var, coef))

    def add_right (self, term: np.ndarray, var: np.ndarray, coef: np.ndarray):
        self._right.append(self._block(term, var, coef))

    def add_linear (self, var: np.ndarray, coef: np.ndarray):
        _, var, coef = self._block(np.zeros(len(var), dtype=np.int64), var, coef)
        self._linear.append((var, coef))

    def add_constant (self, value: float):
        self.constant += float(value)

    def add_term (self, term: NiceQuadraticTerm) -> int:
        (term_id, ) = self.new_terms(1)
        for side, add in ((term.left, self.add_left), (term.right, self.add_right)):
            if side:
                var, coef = zip(*side)
                add(np.full(len(var), term_id), np.array(var), np.array(coef))

        if term.linear:
            var, coef = zip(*term.linear)
            self.add_linear(np.array(var), np.array(coef))

        self.add_constant(term.constant)

        return int(term_id)

    def build (self, log_scale: float = 0.0) -> QuadraticObjective:
        left_term, left_var, left_coef = self._concat(self._left)
        right_term, right_var, right_coef = self._concat(self._right)
        _, linear_var, linear_coef = self._concat([
            (np.zeros(len(var), dtype=np.int64), var, coef) for var, coef in self._linear
        ])

        return QuadraticObjective(
            n=self.n, term_count=self.term_count,
            left_term=left_term, left_var=left_var, left_coef=left_coef,
            right_term=right_term, right_var=right_var, right_coef=right_coef,
            linear_var=linear_var, linear_coef=linear_coef,
            constant=self.constant,
            complexity=len(left_var) + len(right_var) + len(linear_var) + self.term_count,
            log_scale=float(log_scale),
        )

    def _block (self, term, var, coef) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        term = np.asarray(term, dtype=np.int64)
        var = np.asarray(var, dtype=np.int64)
        coef = np.asarray(coef, dtype=np.float64)

        if not term.shape == var.shape == coef.shape:
            raise InvalidArgument("Term, variable and coefficient blocks must align")

        if len(var) and (var.min() < 0 or var.max() >= self.n):
            raise InvalidArgument(f"Variable index outside [0, {self.n})")

        if not np.all(np.isfinite(coef)):
            raise InvalidArgument("Quadratic term coefficients must be finite")

        return term, var, coef

    @staticmethod
    def _concat (blocks) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not blocks:
            return (
                np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.float64)
            )

        return tuple(np.concatenate(parts) for parts in zip(*blocks))

def build_space (n: int) -> PairwiseSpace:
    """
    Builds the pairwise independent space over ``n`` +-1 variables.

    :param n: Variable count, at least 1
    :raises InvalidArgument: If ``n`` is not positive
    :return: The space, with ``2 ** seed_bits <= 4n`` seeds
    """
    if n < 1:
        raise InvalidArgument(f"A pairwise space needs at least one variable, got {n}")

    seed_bits = (n - 1).bit_length() + 1
    codes = (np.arange(n, dtype=np.uint64) << np.uint64(1)) | np.uint64(1)

    return PairwiseSpace(n=n, seed_bits=seed_bits, index_codes=codes)

def _parity (values: np.ndarray) -> np.ndarray:
    return np.bitwise_count(values) & 1

def evaluate_seed (space: PairwiseSpace, seed: int) -> np.ndarray:
    """
    Assignment produced by the seed given as an integer.
    """
    if not 0 <= seed < space.seed_count:
        raise InvalidArgument(f"Seed must lie in [0, {space.seed_count}), got {seed}")

    return 2 * _parity(space.index_codes & np.uint64(seed)).astype(np.int8) - 1

def evaluate_assignment (space: PairwiseSpace, seed: Sequence[int]) -> np.ndarray:
    """
    Evaluates every variable under a full seed.

    :param space: The pairwise space
    :param seed: Seed bits, most significant first
    :raises InvalidArgument: If the seed length differs from the space's
    :return: Vector of +-1 values
    """
    if len(seed) != space.seed_bits:
        raise InvalidArgument(
            f"Seed must have {space.seed_bits} bits, got {len(seed)}"
        )

    return evaluate_seed(space, SeedPrefix(tuple(int(bit) for bit in seed)).value)

def conditional_expectation (
    space: PairwiseSpace, objective: QuadraticObjective, prefix: SeedPrefix,
    counter: WorkCounter | None = None
) -> float:
    """
    Expectation of the objective over all seeds extending ``prefix``.

    Variables are grouped by the unfixed low bits of their codes. Writing
    ``x_j = sigma_j * chi(c_j)`` with ``sigma_j`` the sign contributed by the fixed bits,
    ``E[x_i x_j]`` is ``sigma_i sigma_j`` when the low codes agree and 0 otherwise, and
    ``E[x_j]`` is ``sigma_j`` only when the low code is zero.
    """
    if prefix.length > space.seed_bits:
        raise InvalidArgument(
            f"Prefix of length {prefix.length} exceeds the seed length {space.seed_bits}"
        )

    if objective.n != space.n:
        raise InvalidArgument(
            f"Objective over {objective.n} variables does not match a space of {space.n}"
        )

    free = space.seed_bits - prefix.length
    fixed = np.uint64(prefix.value << free)
    codes = space.index_codes

    sigma = np.where(_parity(codes & fixed) == 1, 1.0, -1.0)
    groups = (codes & np.uint64((1 << free) - 1)).astype(np.int64)
    if counter is not None:
        counter.add(len(codes))

    value = objective.constant

    if len(objective.linear_var):
        hit = groups[objective.linear_var] == 0
        value += float(np.sum(
            objective.linear_coef[hit] * sigma[objective.linear_var[hit]]
        ))
        if counter is not None:
            counter.add(len(objective.linear_var))

    if len(objective.left_var) and len(objective.right_var):
        radix = 1 << free
        keys = np.concatenate((
            objective.left_term * radix + groups[objective.left_var],
            objective.right_term * radix + groups[objective.right_var],
        ))
        unique, inverse = np.unique(keys, return_inverse=True)
        split = len(objective.left_var)

        left = np.bincount(
            inverse[:split], weights=objective.left_coef * sigma[objective.left_var],
            minlength=len(unique)
        )
        right = np.bincount(
            inverse[split:], weights=objective.right_coef * sigma[objective.right_var],
            minlength=len(unique)
        )
        value += float(np.sum(left * right))
        if counter is not None:
            counter.add(len(keys) + len(unique))

    if counter is not None:
        counter.finish()

    return value

def search_seed (
    space: PairwiseSpace, objective: QuadraticObjective, threads: int = 1,
    counter: WorkCounter | None = None
) -> SeedPrefix:
    """
    Fixes seed bits one at a time, keeping the smaller conditional expectation.
    Ties go to bit 0.
    """
    prefix = SeedPrefix()

    def expectation (candidate: SeedPrefix) -> float:
        return conditional_expectation(space, objective, candidate, counter)

    pool = futures.ThreadPoolExecutor(max_workers=2) if threads > 1 else None
    try:
        for _ in range(space.seed_bits):
            candidates = (prefix.extend(0), prefix.extend(1))

            if pool is not None:
                zero, one = pool.map(expectation, candidates)

            else:
                zero, one = map(expectation, candidates)

            prefix = candidates[1] if one < zero else candidates[0]

    finally:
        if pool is not None:
            pool.shutdown()

    return prefix

def derandomize (
    space: PairwiseSpace, objective: QuadraticObjective, threads: int = 1,
    counter: WorkCounter | None = None
) -> np.ndarray:
    """
    Finds an assignment whose objective value is at most its expectation over the space.

    :param space: The pairwise space
    :param objective: Quadratic objective over the space's variables
    :param threads: Evaluate the two candidate bits concurrently when above 1
    :param counter: Optional work accumulator
    :return: Vector of +-1 values
    """
    seed = search_seed(space, objective, threads, counter)
    logger.debug(f"Seed {seed.value} fixed over {space.seed_bits} bits")

    return evaluate_seed(space, seed.value)

def enumerate_expectation (space: PairwiseSpace, objective: QuadraticObjective) -> float:
    """
    Exact average over every seed of the space.
    """
    values = [
        objective.evaluate(evaluate_seed(space, seed)) for seed in range(space.seed_count)
    ]

    return math.fsum(values) / space.seed_count
