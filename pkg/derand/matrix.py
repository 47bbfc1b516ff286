import dataclasses as dc
import logging
from collections.abc import Iterator

import numpy as np
import scipy.sparse

from derand.error import InvalidArgument, ShapeMismatch

logger = logging.getLogger(__name__)

@dc.dataclass(eq=False)
class ConstraintMatrix:
    """
    Sparse nonnegative ``m x n`` weight matrix stored in CSR form. Stored weights are
    strictly positive and the columns of each row strictly increasing.
    """
    csr: scipy.sparse.csr_matrix = dc.field(repr=False)
    "Underlying CSR storage"

    def __post_init__ (self):
        csr = scipy.sparse.csr_matrix(self.csr, dtype=np.float64)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()

        if csr.nnz and not np.all(np.isfinite(csr.data)):
            raise InvalidArgument("Constraint weights must be finite")

        if csr.nnz and csr.data.min() < 0:
            raise InvalidArgument("Constraint weights must be nonnegative")

        self.csr = csr

    @classmethod
    def from_entries (
        cls, m: int, n: int, rows, cols, weights, allow_duplicates: bool = False
    ) -> "ConstraintMatrix":
        """
        Builds a matrix from coordinate triplets.

        :raises InvalidArgument: On out-of-range indices, nonpositive weights or duplicates
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)

        if not rows.shape == cols.shape == weights.shape:
            raise ShapeMismatch("Row, column and weight arrays must have equal length")

        if m < 0 or n < 0:
            raise InvalidArgument(f"Matrix shape must be nonnegative, got {m}x{n}")

        if len(rows) and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
            raise InvalidArgument("Entry index outside the matrix shape")

        if len(weights) and weights.min() <= 0:
            raise InvalidArgument("Stored weights must be strictly positive")

        if not allow_duplicates and len(rows):
            keys = rows * max(n, 1) + cols
            if len(np.unique(keys)) != len(keys):
                raise InvalidArgument("Duplicate (row, column) entry")

        return cls(scipy.sparse.csr_matrix((weights, (rows, cols)), shape=(m, n)))

    @classmethod
    def from_rows (cls, n: int, rows: list[list[int]], weight: float = 1.0) -> "ConstraintMatrix":
        """
        Matrix with a constant weight on the given column lists.
        """
        sizes = np.array([len(row) for row in rows], dtype=np.int64)
        row_ids = np.repeat(np.arange(len(rows)), sizes)
        cols = np.concatenate([np.asarray(row, dtype=np.int64) for row in rows] or [sizes])

        return cls.from_entries(len(rows), n, row_ids, cols, np.full(len(row_ids), weight))

    @property
    def m (self) -> int:
        return self.csr.shape[0]

    @property
    def n (self) -> int:
        return self.csr.shape[1]

    @property
    def nnz (self) -> int:
        return self.csr.nnz

    @property
    def entry_rows (self) -> np.ndarray:
        """
        Row index of every stored entry, in storage order.
        """
        return np.repeat(np.arange(self.m), np.diff(self.csr.indptr))

    @property
    def entry_cols (self) -> np.ndarray:
        return self.csr.indices.astype(np.int64)

    @property
    def weights (self) -> np.ndarray:
        return self.csr.data

    def row (self, i: int) -> tuple[np.ndarray, np.ndarray]:
        start, end = self.csr.indptr[i], self.csr.indptr[i + 1]
        return self.csr.indices[start:end], self.csr.data[start:end]

    def rows (self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for i in range(self.m):
            yield self.row(i)

    def row_sums (self) -> np.ndarray:
        return np.asarray(self.csr.sum(axis=1)).ravel()

    def row_square_sums (self) -> np.ndarray:
        return np.asarray(self.csr.multiply(self.csr).sum(axis=1)).ravel()

    def row_max (self) -> np.ndarray:
        if self.nnz == 0:
            return np.zeros(self.m)

        return self.csr.max(axis=1).toarray().ravel()

    def dot (self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n, ):
            raise ShapeMismatch(f"Vector of length {x.shape} does not match {self.n} columns")

        return self.csr @ x

    def deviations (self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """
        Per-row ``|sum_j a_ij (p_j - q_j)|``.
        """
        return np.abs(self.dot(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)))

    def with_entries (self, keep: np.ndarray) -> "ConstraintMatrix":
        """
        Copy keeping only the stored entries selected by the mask.
        """
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.nnz, ):
            raise ShapeMismatch("Entry mask must have one flag per stored entry")

        return ConstraintMatrix(scipy.sparse.csr_matrix(
            (self.weights[keep], (self.entry_rows[keep], self.entry_cols[keep])),
            shape=(self.m, self.n)
        ))

    def select_rows (self, rows: np.ndarray) -> "ConstraintMatrix":
        return ConstraintMatrix(self.csr[np.asarray(rows, dtype=np.int64)])

    def scale_columns (self, factors: np.ndarray) -> "ConstraintMatrix":
        """
        Copy with column ``j`` multiplied by ``factors[j]`` (zero factors drop the column).
        """
        return ConstraintMatrix(self.csr @ scipy.sparse.diags(np.asarray(factors, dtype=float)))
