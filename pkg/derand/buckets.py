import dataclasses as dc
import logging
from enum import IntEnum

import numpy as np

from derand.error import InvalidArgument, ShapeMismatch
from derand.matrix import ConstraintMatrix

logger = logging.getLogger(__name__)

class BucketKind (IntEnum):
    SIZE_ONE = 0
    SMALL = 1
    LARGE = 2

@dc.dataclass(eq=False)
class BucketDecomposition:
    """
    Per-row dyadic buckets of the weights, their classification and the ignore sets.

    Arrays prefixed ``entry_`` follow the CSR storage order of the matrix, arrays prefixed
    ``bucket_`` are indexed by bucket id.
    """
    m: int = dc.field()
    delta: np.ndarray = dc.field(repr=False)
    row_sums: np.ndarray = dc.field(repr=False)
    row_square_sums: np.ndarray = dc.field(repr=False)
    boring_large: np.ndarray = dc.field(repr=False)
    "Rows with Delta_i >= sum_j a_ij"
    boring_small: np.ndarray = dc.field(repr=False)
    "Rows with Delta_i^2 < sum_j a_ij^2 (and not boringly large)"
    entry_rows: np.ndarray = dc.field(repr=False)
    entry_cols: np.ndarray = dc.field(repr=False)
    entry_weights: np.ndarray = dc.field(repr=False)
    entry_bucket: np.ndarray = dc.field(repr=False)
    bucket_row: np.ndarray = dc.field(repr=False)
    bucket_exponent: np.ndarray = dc.field(repr=False)
    bucket_size: np.ndarray = dc.field(repr=False)
    bucket_kind: np.ndarray = dc.field(repr=False)
    representative: np.ndarray = dc.field(repr=False)
    "Large buckets of nonboring rows that carry a spread potential"
    ignore_entries: np.ndarray = dc.field(repr=False)
    "Entries whose column belongs to the row's ignore set"

    @property
    def nonboring (self) -> np.ndarray:
        return ~(self.boring_large | self.boring_small)

    @property
    def bucket_count (self) -> int:
        return len(self.bucket_row)

    def ignore_set (self, i: int) -> np.ndarray | None:
        """
        Ignored columns of row ``i``. ``None`` stands for every column ([n]).
        """
        if self.boring_large[i]:
            return None

        mask = (self.entry_rows == i) & self.ignore_entries
        return self.entry_cols[mask]

    def ignore_mass (self) -> np.ndarray:
        """
        Per-row ``sum_{j in I_i^ignore} a_ij`` over stored entries.
        """
        return np.bincount(
            self.entry_rows, weights=self.entry_weights * self.ignore_entries, minlength=self.m
        )

    def buckets_of (self, i: int) -> np.ndarray:
        return np.flatnonzero(self.bucket_row == i)

def weight_exponents (weights: np.ndarray) -> np.ndarray:
    """
    ``iota`` with ``2 ** iota <= a < 2 ** (iota + 1)``.
    """
    _, exponent = np.frexp(np.asarray(weights, dtype=np.float64))
    return exponent.astype(np.int64) - 1

def check_delta (delta: np.ndarray, m: int) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (m, ):
        raise ShapeMismatch(f"Expected {m} deviation bounds, got shape {delta.shape}")

    if m and not np.all(delta > 0):
        raise InvalidArgument("Every deviation bound Delta_i must be positive")

    return delta

def classify_rows (A: ConstraintMatrix, delta: np.ndarray, k: int) -> BucketDecomposition:
    """
    Splits every row into dyadic weight buckets and classifies rows and buckets.

    :param A: Constraint matrix
    :param delta: Positive deviation bound per row
    :param k: Walk granularity
    :raises InvalidArgument: If some ``Delta_i`` is not positive
    :return: The decomposition
    """
    if k < 1:
        raise InvalidArgument(f"Granularity must be positive, got {k}")

    delta = check_delta(delta, A.m)
    row_sums = A.row_sums()
    row_square_sums = A.row_square_sums()

    boring_large = delta >= row_sums
    boring_small = ~boring_large & (delta ** 2 < row_square_sums)
    nonboring = ~(boring_large | boring_small)

    rows = A.entry_rows
    weights = A.weights
    exponents = weight_exponents(weights)

    if A.nnz:
        low = exponents.min()
        span = int(exponents.max() - low + 1)
        keys = rows * span + (exponents - low)
        unique, entry_bucket, bucket_size = np.unique(
            keys, return_inverse=True, return_counts=True
        )
        bucket_row = unique // span
        bucket_exponent = unique % span + low

    else:
        entry_bucket = np.zeros(0, dtype=np.int64)
        bucket_row = bucket_exponent = bucket_size = np.zeros(0, dtype=np.int64)

    small_limit = np.divide(
        delta ** 2, row_square_sums, out=np.full(A.m, np.inf), where=row_square_sums > 0
    )
    bucket_kind = np.full(len(bucket_row), BucketKind.LARGE, dtype=np.int8)
    bucket_kind[bucket_size < small_limit[bucket_row]] = BucketKind.SMALL
    bucket_kind[bucket_size == 1] = BucketKind.SIZE_ONE

    representative = np.zeros(len(bucket_row), dtype=bool)
    large = np.flatnonzero((bucket_kind == BucketKind.LARGE) & nonboring[bucket_row])
    if len(large):
        order = large[np.lexsort((
            bucket_exponent[large], bucket_size[large], bucket_row[large]
        ))]
        # last bucket of every (row, size) run has the largest exponent
        row_sorted, size_sorted = bucket_row[order], bucket_size[order]
        last = np.ones(len(order), dtype=bool)
        last[:-1] = (row_sorted[1:] != row_sorted[:-1]) | (size_sorted[1:] != size_sorted[:-1])
        representative[order[last]] = True

    ignored_kind = np.isin(bucket_kind[entry_bucket], (BucketKind.SIZE_ONE, BucketKind.SMALL))
    ignore_entries = np.where(
        boring_large[rows], True, np.where(boring_small[rows], False, ignored_kind)
    )

    logger.debug(
        f"{A.m} rows: {int(boring_large.sum())} boringly large, "
        f"{int(boring_small.sum())} boringly small, {int(representative.sum())} "
        "representative buckets"
    )

    return BucketDecomposition(
        m=A.m, delta=delta, row_sums=row_sums, row_square_sums=row_square_sums,
        boring_large=boring_large, boring_small=boring_small,
        entry_rows=rows, entry_cols=A.entry_cols, entry_weights=weights,
        entry_bucket=entry_bucket.astype(np.int64),
        bucket_row=bucket_row.astype(np.int64), bucket_exponent=bucket_exponent.astype(np.int64),
        bucket_size=bucket_size.astype(np.int64), bucket_kind=bucket_kind,
        representative=representative, ignore_entries=ignore_entries.astype(bool),
    )

def partial_exponent (A: ConstraintMatrix, delta: np.ndarray, k: int) -> np.ndarray:
    """
    ``min(Delta_i^2 / sum a_ij^2, Delta_i k / sum a_ij)``, infinite for empty rows.
    """
    delta = check_delta(delta, A.m)
    sums, squares = A.row_sums(), A.row_square_sums()

    with np.errstate(divide="ignore", invalid="ignore"):
        exponent = np.minimum(delta ** 2 / squares, delta * k / sums)

    return np.where(sums > 0, exponent, np.inf)

def compute_prob_bad_partial (
    A: ConstraintMatrix, delta: np.ndarray, k: int, c: float
) -> np.ndarray:
    """
    Per-row failure bound ``c * exp(-(1/c) * min(...))`` of one partial fixing run.

    :raises InvalidArgument: If ``c`` is not positive
    """
    if c <= 0:
        raise InvalidArgument(f"The failure constant must be positive, got {c}")

    return c * np.exp(-partial_exponent(A, delta, k) / c)
