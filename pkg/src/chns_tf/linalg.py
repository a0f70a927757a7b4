"""Sparse direct solves with an optional mean-zero Lagrange multiplier."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RESIDUAL_TOL = 1e-10


class SingularSystemError(RuntimeError):
    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class AccuracyError(RuntimeError):
    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    residual_norm: float
    relative_residual: float
    factor_time: float
    solve_time: float
    iterations: int = 0


@dataclass
class SparseSystem:
    """Square CSR matrix, optionally augmented by a constraint ``c.x = 0``.

    ``constraint`` holds the dense row ``c`` (length ``n``); when present the
    effective system is ``[[A, c], [c^T, 0]]`` of size ``n + 1``.
    """

    matrix: sp.csr_matrix
    constraint: Optional[np.ndarray] = None
    _augmented: Optional[sp.csc_matrix] = field(default=None, repr=False)

    def __post_init__(self):
        A = sp.csr_matrix(self.matrix)
        A.sum_duplicates()
        A.sort_indices()
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.matrix = A
        if self.constraint is not None:
            c = np.asarray(self.constraint, dtype=float).ravel()
            if c.size != A.shape[0]:
                raise ValueError(f"constraint length {c.size} does not match n={A.shape[0]}")
            self.constraint = c

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def size(self) -> int:
        return self.n + (1 if self.constraint is not None else 0)

    def augmented(self) -> sp.csc_matrix:
        if self._augmented is None:
            if self.constraint is None:
                self._augmented = self.matrix.tocsc()
            else:
                c = sp.csr_matrix(self.constraint.reshape(-1, 1))
                self._augmented = sp.bmat([[self.matrix, c], [c.T, None]], format="csc")
        return self._augmented

    def dump(self, path) -> Path:
        """Write the (augmented) matrix in MatrixMarket coordinate format."""
        path = Path(path)
        scipy.io.mmwrite(str(path), sp.coo_matrix(self.augmented()))
        return path


def attach_mean_zero(sys: SparseSystem, weights, offset: int = 0) -> SparseSystem:
    """Augment ``sys`` with a multiplier enforcing ``sum(w * x[offset:offset+len(w)]) = 0``."""
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 0 or offset < 0 or offset + w.size > sys.n:
        raise ValueError(f"weights of length {w.size} at offset {offset} do not fit n={sys.n}")
    c = np.zeros(sys.n)
    c[offset:offset + w.size] = w
    return SparseSystem(sys.matrix, c)


def factor_solve(sys: SparseSystem, rhs, tol: float = RESIDUAL_TOL):
    """Sparse LU solve. Returns ``(x, report)``; ``x`` has length ``sys.n``.

    The residual is recomputed from the augmented matrix; for constrained
    systems the constraint violation is checked too.
    """
    b = np.asarray(rhs, dtype=float).ravel()
    if b.size != sys.n:
        raise ValueError(f"rhs length {b.size} does not match n={sys.n}")
    K = sys.augmented()
    full_b = np.r_[b, 0.0] if sys.constraint is not None else b
    t0 = time.perf_counter()
    try:
        lu = spla.splu(K, permc_spec="COLAMD")
    except RuntimeError as exc:
        row = _zero_pivot_row(K)
        where = f" (zero pivot at row {row})" if row is not None else ""
        raise SingularSystemError(f"singular matrix{where}: {exc}", row) from exc
    t1 = time.perf_counter()
    diagU = lu.U.diagonal()
    bad = np.flatnonzero(np.abs(diagU) <= 1e-14 * max(np.abs(diagU).max(), 1.0))
    if bad.size:
        row = int(np.argsort(lu.perm_r)[bad[0]])
        raise SingularSystemError(f"numerically singular: zero pivot at row {row}", row)
    y = lu.solve(full_b)
    t2 = time.perf_counter()
    if not np.all(np.isfinite(y)):
        raise SingularSystemError("solution is not finite", None)
    res = float(np.linalg.norm(K @ y - full_b))
    scale = max(float(np.linalg.norm(full_b)), 1e-300)
    rel = res / scale if np.linalg.norm(full_b) > 0 else res
    report = SolveReport(res, rel, t1 - t0, t2 - t1)
    x = y[: sys.n]
    if rel > tol:
        raise AccuracyError(f"relative residual {rel:.3e} exceeds {tol:.1e}", report)
    if sys.constraint is not None:
        viol = abs(float(sys.constraint @ x))
        if viol > tol * max(float(np.linalg.norm(x)), 1.0):
            raise AccuracyError(f"constraint violated by {viol:.3e}", report)
    return x, report


def _zero_pivot_row(K, dense_limit: int = 4000) -> Optional[int]:
    """Locate the row where elimination breaks down.

    A structurally empty row is reported directly; small systems fall back
    to a dense partial-pivoting LU and report the first vanishing pivot.
    """
    counts = np.diff(sp.csr_matrix(K).indptr)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        return int(empty[0])
    if K.shape[0] > dense_limit:
        return None
    import scipy.linalg

    P, _, U = scipy.linalg.lu(K.toarray())
    d = np.abs(np.diag(U))
    bad = np.flatnonzero(d <= 1e-13 * max(d.max(), 1.0))
    if not bad.size:
        return None
    # row of the original matrix that landed in the failing pivot position
    return int(np.argmax(P[:, bad[0]]))
