"""CSR sparse matrices and the linear solvers behind Gauss-Newton.

The direct path is a banded Cholesky factorization after a reverse
Cuthill-McKee reordering (profile kept small by the reordering, dense BLAS
doing the numeric work block by block); the iterative path is conjugate
gradients with an optional Jacobi preconditioner. Both target symmetric
positive definite systems only.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

__all__ = [
    "CsrMatrix",
    "SingularMatrixError",
    "rcm_ordering",
    "BandCholesky",
    "solve_direct",
    "solve_cg",
    "save_matrix_market",
]


class SingularMatrixError(RuntimeError):
    pass


class CsrMatrix:
    """Compressed sparse row matrix with sorted, unique column indices."""

    def __init__(self, n_rows: int, n_cols: int, row_ptr, col_idx, vals):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(col_idx, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=np.float64)
        if self.row_ptr.shape != (self.n_rows + 1,):
            raise ValueError("row_ptr must have length n_rows + 1")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if self.col_idx.shape != self.vals.shape:
            raise ValueError("col_idx and vals must be parallel")
        if self.col_idx.size and (self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols):
            raise ValueError("column index out of range")
        # row id per stored entry, for vectorized matvec
        self._row_ids = np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))

    @property
    def nnz(self) -> int:
        return self.vals.size

    @classmethod
    def from_triplets(cls, n_rows, n_cols, rows, cols, vals) -> "CsrMatrix":
        """Build from possibly unsorted, duplicated triplets; duplicates sum."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("rows, cols, vals must be parallel")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise ValueError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError("column index out of range")
        key = rows * np.int64(n_cols) + cols
        uniq, inverse = np.unique(key, return_inverse=True)
        summed = np.bincount(inverse, weights=vals, minlength=uniq.size)
        urows = uniq // n_cols
        ucols = uniq % n_cols
        row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(urows, minlength=n_rows), out=row_ptr[1:])
        return cls(n_rows, n_cols, row_ptr, ucols, summed)

    @classmethod
    def from_dense(cls, dense) -> "CsrMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_triplets(dense.shape[0], dense.shape[1], rows, cols, dense[rows, cols])

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_cols,):
            raise ValueError(f"matvec: expected vector of length {self.n_cols}, got {x.shape}")
        prod = self.vals * x[self.col_idx]
        return np.bincount(self._row_ids, weights=prod, minlength=self.n_rows)

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.n_rows, self.n_cols))
        on_diag = self.col_idx == self._row_ids
        np.add.at(d, self.col_idx[on_diag], self.vals[on_diag])
        return d

    def triplets(self):
        return self._row_ids.copy(), self.col_idx.copy(), self.vals.copy()

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_triplets(self.n_cols, self.n_rows, self.col_idx, self._row_ids, self.vals)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        out[self._row_ids, self.col_idx] = self.vals
        return out


def rcm_ordering(A: CsrMatrix) -> np.ndarray:
    """Reverse Cuthill-McKee permutation (perm[k] = original index placed k-th).

    Works on the symmetrized pattern; each connected component is seeded at
    a pseudo-peripheral node found by repeated BFS.
    """
    n = A.n_rows
    if A.n_cols != n:
        raise ValueError("rcm_ordering needs a square matrix")
    rows, cols, _ = A.triplets()
    # symmetrize pattern, drop self loops
    ar = np.concatenate([rows, cols])
    ac = np.concatenate([cols, rows])
    off = ar != ac
    ar, ac = ar[off], ac[off]
    order = np.lexsort((ac, ar))
    ar, ac = ar[order], ac[order]
    if ar.size:
        uniq = np.ones(ar.size, dtype=bool)
        uniq[1:] = (ar[1:] != ar[:-1]) | (ac[1:] != ac[:-1])
        ar, ac = ar[uniq], ac[uniq]
    adj_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(ar, minlength=n), out=adj_ptr[1:])
    degree = np.diff(adj_ptr)

    def bfs_levels(start, unvisited):
        levels = [np.array([start], dtype=np.int64)]
        seen = np.zeros(n, dtype=bool)
        seen[start] = True
        frontier = levels[0]
        while True:
            nbrs = np.concatenate([ac[adj_ptr[v]:adj_ptr[v + 1]] for v in frontier]) if frontier.size else np.empty(0, np.int64)
            nbrs = np.unique(nbrs)
            nbrs = nbrs[unvisited[nbrs] & ~seen[nbrs]]
            if nbrs.size == 0:
                return levels
            seen[nbrs] = True
            levels.append(nbrs)
            frontier = nbrs

    def pseudo_peripheral(start, unvisited):
        node = start
        depth = -1
        for _ in range(8):
            levels = bfs_levels(node, unvisited)
            if len(levels) - 1 <= depth:
                return node
            depth = len(levels) - 1
            last = levels[-1]
            node = last[np.argmin(degree[last])]
        return node

    unvisited = np.ones(n, dtype=bool)
    cm = np.empty(n, dtype=np.int64)
    pos = 0
    while pos < n:
        candidates = np.flatnonzero(unvisited)
        start = candidates[np.argmin(degree[candidates])]
        start = pseudo_peripheral(start, unvisited)
        # Cuthill-McKee BFS: visit neighbors in increasing-degree order
        queue = [int(start)]
        unvisited[start] = False
        while queue:
            v = queue.pop(0)
            cm[pos] = v
            pos += 1
            nbrs = ac[adj_ptr[v]:adj_ptr[v + 1]]
            nbrs = nbrs[unvisited[nbrs]]
            if nbrs.size:
                nbrs = nbrs[np.argsort(degree[nbrs], kind="stable")]
                unvisited[nbrs] = False
                queue.extend(int(u) for u in nbrs)
    return cm[::-1].copy()


def _band_from_csr(A: CsrMatrix, perm: np.ndarray):
    """Lower band storage of P A P^T: Ab[d, j] = A_perm[j + d, j]."""
    n = A.n_rows
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    rows, cols, vals = A.triplets()
    pr = inv[rows]
    pc = inv[cols]
    lower = pr >= pc
    pr, pc, v = pr[lower], pc[lower], vals[lower]
    m = int((pr - pc).max()) if pr.size else 0
    Ab = np.zeros((m + 1, n))
    Ab[pr - pc, pc] = v
    return Ab, m


class BandCholesky:
    """Cholesky factorization of an SPD CSR matrix via RCM + band storage.

    The reordering, band extraction, refinement, and singularity handling
    are ours; the dense-band numeric kernel is LAPACK (pbtrf/pbtrs). The
    permutation depends only on the sparsity pattern, so callers
    re-factorizing a fixed pattern with new values should pass ``perm``
    back in to skip the ordering.
    """

    def __init__(self, A: CsrMatrix, perm: np.ndarray | None = None):
        if A.n_rows != A.n_cols:
            raise ValueError("factorization needs a square matrix")
        self.n = A.n_rows
        self.A = A
        self.perm = rcm_ordering(A) if perm is None else np.asarray(perm, dtype=np.int64)
        Ab, m = _band_from_csr(A, self.perm)
        self.bandwidth = m
        try:
            self.Lb = cholesky_banded(Ab, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise SingularMatrixError(
                "non-positive pivot in sparse Cholesky; matrix not positive "
                "definite - increase damping"
            ) from None

    def solve_permuted_only(self, b: np.ndarray) -> np.ndarray:
        """One forward + backward band substitution, no refinement."""
        xp = cho_solve_banded((self.Lb, True), b[self.perm], check_finite=False)
        out = np.empty(self.n)
        out[self.perm] = xp
        return out

    def solve(self, b: np.ndarray, refine: bool = True, target: float = 1e-12) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        x = self.solve_permuted_only(b)
        if not refine:
            return x
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        for _ in range(3):
            r = b - self.A.matvec(x)
            if np.linalg.norm(r) <= target * bnorm:
                break
            x = x + self.solve_permuted_only(r)
        return x


def solve_direct(A: CsrMatrix, b: np.ndarray, perm: np.ndarray | None = None) -> np.ndarray:
    """Solve an SPD system with sparse Cholesky (RCM-ordered, refined)."""
    return BandCholesky(A, perm=perm).solve(b)


def solve_cg(
    A: CsrMatrix,
    b: np.ndarray,
    tol: float = 1e-8,
    max_iter: int | None = None,
    precond: str | None = "jacobi",
) -> tuple[np.ndarray, int]:
    """Preconditioned conjugate gradients for SPD systems.

    Stops when the relative 2-norm residual drops to ``tol`` or after
    ``max_iter`` iterations, whichever first; returns (x, iterations).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=np.float64)
    n = A.n_rows
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    if precond == "jacobi":
        d = A.diagonal()
        if np.any(d == 0.0):
            raise SingularMatrixError("jacobi preconditioner: zero diagonal entry")
        apply_m = lambda r: r / d  # noqa: E731
    elif precond is None or precond == "none":
        apply_m = lambda r: r  # noqa: E731
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")

    x = np.zeros(n)
    r = b.copy()
    z = apply_m(r)
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < max_iter:
        Ap = A.matvec(p)
        denom = float(p @ Ap)
        if denom <= 0.0:
            raise SingularMatrixError("conjugate gradients: matrix not positive definite")
        alpha = rz / denom
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if np.linalg.norm(r) <= tol * bnorm:
            break
        z = apply_m(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it


def save_matrix_market(A: CsrMatrix, path: str | Path) -> None:
    """Write the matrix in MatrixMarket coordinate format (1-based)."""
    rows, cols, vals = A.triplets()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.n_rows} {A.n_cols} {A.nnz}\n")
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r + 1} {c + 1} {v:.17g}\n")
