"""Compose residual blocks into a least-squares problem.

A :class:`Problem` owns the unknown fields, scalar parameters, known
(constant) fields, and an ordered block list. It evaluates the total loss
sum(r^2), the gradient 2 J^T r, and the Gauss-Newton normal system
(J^T J + lambda I) d = -J^T r.

The sparsity pattern of the normal system is fixed by the stencils, so the
expensive parts (triplet pattern, coalescing map, diagonal positions) are
computed once and reused every epoch; per-epoch assembly reduces to
vectorized products and bincounts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .grid import Field, Grid
from .sparse import CsrMatrix
from .stencil import ResidualBlock

__all__ = ["DofLayout", "NormalSystem", "NonFiniteResidualError", "Problem"]


class NonFiniteResidualError(RuntimeError):
    def __init__(self, block: str, index):
        self.block = block
        self.index = tuple(int(i) for i in np.atleast_1d(index))
        super().__init__(f"non-finite residual in block {block!r} at index {self.index}")


class DofLayout:
    """Bijection between (field, flat index) / parameter names and 0..total."""

    def __init__(self, fields: Mapping[str, Grid], params: Sequence[str] = ()):
        self.field_slices: dict[str, slice] = {}
        off = 0
        for name, grid in fields.items():
            self.field_slices[name] = slice(off, off + grid.size)
            off += grid.size
        self.param_indices: dict[str, int] = {}
        for name in params:
            self.param_indices[name] = off
            off += 1
        self.total = off

    def field_offset(self, name: str) -> int:
        return self.field_slices[name].start

    def index_of(self, name: str, flat: int | None = None) -> int:
        if flat is None:
            return self.param_indices[name]
        return self.field_slices[name].start + flat


@dataclass
class NormalSystem:
    A: CsrMatrix
    b: np.ndarray
    effective_damping: float = 0.0


class Problem:
    """Unknown fields + parameters + residual blocks as one least-squares loss."""

    def __init__(
        self,
        fields: Mapping[str, Grid],
        blocks: Sequence[ResidualBlock],
        params: Mapping[str, float] | None = None,
        knowns: Mapping[str, Field] | None = None,
        refreeze: Callable[["Problem", np.ndarray], None] | None = None,
    ):
        self.fields = dict(fields)
        self.params = dict(params or {})
        self.knowns = dict(knowns or {})
        self.blocks = list(blocks)
        self.refreeze = refreeze
        self.layout = DofLayout(self.fields, list(self.params))

        for b in self.blocks:
            for s in b.slots:
                if s.known:
                    if s.name not in self.knowns:
                        raise KeyError(
                            f"block {b.name!r} references undeclared known field {s.name!r}"
                        )
                elif s.name not in self.fields:
                    raise KeyError(
                        f"block {b.name!r} references undeclared unknown field {s.name!r}"
                    )
            for p in b.param_names:
                if p not in self.params:
                    raise KeyError(
                        f"block {b.name!r} references undeclared parameter {p!r}"
                    )

        self._plan = None
        self._cols_cache: dict[int, dict] = {}

    @property
    def total_dofs(self) -> int:
        return self.layout.total

    @property
    def n_residuals(self) -> int:
        return sum(b.n_rows for b in self.blocks)

    def initial_vector(self) -> np.ndarray:
        x = np.zeros(self.total_dofs)
        for name, value in self.params.items():
            x[self.layout.param_indices[name]] = value
        return x

    def split(self, x: np.ndarray) -> tuple[dict[str, Field], dict[str, float]]:
        """Views of the global vector as per-name fields plus parameter values."""
        x = np.asarray(x)
        if x.shape != (self.total_dofs,):
            raise ValueError(f"expected vector of length {self.total_dofs}, got {x.shape}")
        fields = {
            name: Field(self.fields[name], x[sl])
            for name, sl in self.layout.field_slices.items()
        }
        params = {name: float(x[i]) for name, i in self.layout.param_indices.items()}
        return fields, params

    def field_from(self, x: np.ndarray, name: str) -> Field:
        return Field(self.fields[name], x[self.layout.field_slices[name]].copy())

    def _bindings(self, x):
        fields, params = self.split(x)
        fields.update(self.knowns)
        return fields, params

    def _block_residual(self, block: ResidualBlock, fields, params) -> np.ndarray:
        r = block.eval_residuals(fields, params)
        if not np.all(np.isfinite(r)):
            bad = int(np.flatnonzero(~np.isfinite(r))[0])
            raise NonFiniteResidualError(block.name, block.indices[bad])
        return r

    def loss(self, x: np.ndarray) -> float:
        fields, params = self._bindings(x)
        total = 0.0
        for b in self.blocks:
            r = self._block_residual(b, fields, params)
            total += float(r @ r)
        return total

    def loss_terms(self, x: np.ndarray) -> dict[str, float]:
        """Per-block contribution to the loss, keyed by block name."""
        fields, params = self._bindings(x)
        out: dict[str, float] = {}
        for b in self.blocks:
            r = self._block_residual(b, fields, params)
            out[b.name] = out.get(b.name, 0.0) + float(r @ r)
        return out

    def residual_vector(self, x: np.ndarray) -> np.ndarray:
        fields, params = self._bindings(x)
        return np.concatenate(
            [self._block_residual(b, fields, params) for b in self.blocks]
        ) if self.blocks else np.zeros(0)

    def _block_cols(self, block: ResidualBlock):
        """Global column array per derivative key of one block, fixed per problem."""
        cols = {}
        for sid in block.unknown_slot_ids:
            s = block.slots[sid]
            cols[("f", sid)] = self.layout.field_offset(s.name) + block.slot_gather(sid)
        for p in block.param_names:
            cols[("p", p)] = np.full(block.n_rows, self.layout.param_indices[p], dtype=np.int64)
        return cols

    def _eval_block_derivs(self, block, fields, params):
        r, derivs = block._eval(fields, params, diff_fields=True, diff_params=tuple(block.param_names))
        if not np.all(np.isfinite(r)):
            bad = int(np.flatnonzero(~np.isfinite(r))[0])
            raise NonFiniteResidualError(block.name, block.indices[bad])
        return r, derivs

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the loss, 2 sum J^T r, length total_dofs."""
        fields, params = self._bindings(x)
        g = np.zeros(self.total_dofs)
        for b in self.blocks:
            r, derivs = self._eval_block_derivs(b, fields, params)
            cols = self._plan_cols(b)
            for key, d in derivs.items():
                g += np.bincount(cols[key], weights=2.0 * r * d, minlength=self.total_dofs)
        return g

    # --- normal-system assembly plan -----------------------------------

    def _plan_cols(self, block):
        got = self._cols_cache.get(id(block))
        if got is None:
            got = self._block_cols(block)
            self._cols_cache[id(block)] = got
        return got

    def _ensure_plan(self):
        if self._plan is not None:
            return
        n = self.total_dofs
        cols_by_block = {id(b): self._plan_cols(b) for b in self.blocks}
        pat_rows = []
        pat_cols = []
        pair_lists = []  # (block, key_i, key_j) in emission order
        for b in self.blocks:
            cols = cols_by_block[id(b)]
            keys = sorted(cols.keys(), key=_key_order)
            for ki in keys:
                for kj in keys:
                    pat_rows.append(cols[ki])
                    pat_cols.append(cols[kj])
                    pair_lists.append((b, ki, kj))
        # damping slots: full diagonal, also guarantees every dof has a diagonal entry
        diag = np.arange(n, dtype=np.int64)
        pat_rows.append(diag)
        pat_cols.append(diag)
        rows_all = np.concatenate(pat_rows) if pat_rows else np.zeros(0, dtype=np.int64)
        cols_all = np.concatenate(pat_cols) if pat_cols else np.zeros(0, dtype=np.int64)
        key = rows_all * np.int64(n) + cols_all
        uniq, inverse = np.unique(key, return_inverse=True)
        urows = (uniq // n).astype(np.int64)
        ucols = (uniq % n).astype(np.int64)
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(urows, minlength=n), out=row_ptr[1:])
        diag_pos = np.flatnonzero(urows == ucols)
        self._plan = {
            "cols": cols_by_block,
            "pairs": pair_lists,
            "inverse": inverse,
            "nnz": uniq.size,
            "row_ptr": row_ptr,
            "col_idx": ucols,
            "diag_pos": diag_pos,
        }

    def normal_system(
        self, x: np.ndarray, damping: float = 0.0, damping_mode: str = "absolute"
    ) -> NormalSystem:
        """Assemble A = sum J^T J (+ damping on the diagonal) and b = -sum J^T r.

        ``damping_mode='diag-mean'`` scales ``damping`` by the mean diagonal
        of the undamped A, which makes the setting grid-size independent.
        """
        if damping < 0:
            raise ValueError("damping must be nonnegative")
        self._ensure_plan()
        plan = self._plan
        n = self.total_dofs
        fields, params = self._bindings(x)

        block_evals = {id(b): self._eval_block_derivs(b, fields, params) for b in self.blocks}
        vals_parts = []
        b_vec = np.zeros(n)
        for b, ki, kj in plan["pairs"]:
            r, derivs = block_evals[id(b)]
            di = derivs.get(ki)
            dj = derivs.get(kj)
            m = b.n_rows
            zi = np.zeros(m) if di is None else di
            zj = np.zeros(m) if dj is None else dj
            vals_parts.append(zi * zj)
        for b in self.blocks:
            r, derivs = block_evals[id(b)]
            cols = plan["cols"][id(b)]
            for key, d in derivs.items():
                b_vec -= np.bincount(cols[key], weights=r * d, minlength=n)
        vals_parts.append(np.zeros(n))  # damping slots, filled below
        raw = np.concatenate(vals_parts) if vals_parts else np.zeros(0)
        vals = np.bincount(plan["inverse"], weights=raw, minlength=plan["nnz"])
        A = CsrMatrix(n, n, plan["row_ptr"], plan["col_idx"], vals)
        lam = float(damping)
        if damping_mode == "diag-mean":
            lam *= float(np.mean(A.vals[plan["diag_pos"]]))
        elif damping_mode != "absolute":
            raise ValueError(f"unknown damping_mode {damping_mode!r}")
        if lam > 0.0:
            A.vals[plan["diag_pos"]] += lam
        return NormalSystem(A=A, b=b_vec, effective_damping=lam)

    def diag_positions(self) -> np.ndarray:
        self._ensure_plan()
        return self._plan["diag_pos"]


def _key_order(key):
    kind, v = key
    if kind == "f":
        return (0, int(v), "")
    return (1, 0, str(v))
