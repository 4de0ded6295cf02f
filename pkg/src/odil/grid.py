"""Uniform Cartesian grids, discrete fields, index sets, and norms.

Conventions fixed here and relied on everywhere else:

* flat storage is row-major with the last axis fastest,
* L1/L2 norms are mean-based so errors are comparable across refinements,
* node-centered grids place dofs on the lattice including endpoints,
  cell-centered grids place them at cell midpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "IndexSet",
    "norm",
    "eval_on_grid",
    "save_field",
    "load_field",
]


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian lattice in 1 to 3 axes.

    ``dims`` counts points per axis. Node-centered grids need at least two
    points per axis (spacing spans dims-1 intervals); cell-centered grids
    need at least one cell.
    """

    dims: tuple[int, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    centering: str = "node"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if self.centering not in ("node", "cell"):
            raise ValueError(f"centering must be 'node' or 'cell', got {self.centering!r}")
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"grids support 1-3 axes, got {len(dims)}")
        if not (len(lo) == len(hi) == len(dims)):
            raise ValueError("dims, lo, hi must have matching lengths")
        min_pts = 2 if self.centering == "node" else 1
        for a, (d, l, h) in enumerate(zip(dims, lo, hi)):
            if d < min_pts:
                raise ValueError(f"axis {a}: need at least {min_pts} points, got {d}")
            if not h > l:
                raise ValueError(f"axis {a}: hi must exceed lo, got [{l}, {h}]")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def spacing(self) -> tuple[float, ...]:
        if self.centering == "node":
            return tuple((h - l) / (d - 1) for d, l, h in zip(self.dims, self.lo, self.hi))
        return tuple((h - l) / d for d, l, h in zip(self.dims, self.lo, self.hi))

    def axis_coords(self, axis: int) -> np.ndarray:
        """Physical coordinates of the dof positions along one axis."""
        d, l, h = self.dims[axis], self.lo[axis], self.hi[axis]
        if self.centering == "node":
            return np.linspace(l, h, d)
        step = (h - l) / d
        return l + step * (np.arange(d) + 0.5)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of every dof, each flat of length ``size``."""
        axes = [self.axis_coords(a) for a in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return tuple(m.ravel() for m in mesh)

    def flat_index(self, idx: Sequence[int]) -> int:
        """Row-major offset of a multi-index, last axis fastest."""
        if len(idx) != self.ndim:
            raise IndexError(f"expected {self.ndim} indices, got {len(idx)}")
        flat = 0
        for a, (i, d) in enumerate(zip(idx, self.dims)):
            if not 0 <= i < d:
                raise IndexError(f"axis {a}: index {i} out of range [0, {d})")
            flat = flat * d + int(i)
        return flat

    def unflatten(self, flat: int) -> tuple[int, ...]:
        if not 0 <= flat < self.size:
            raise IndexError(f"flat index {flat} out of range [0, {self.size})")
        idx = []
        for d in reversed(self.dims):
            idx.append(flat % d)
            flat //= d
        return tuple(reversed(idx))

    def flat_indices(self, multi: np.ndarray) -> np.ndarray:
        """Vectorized ``flat_index`` for an (m, ndim) array of multi-indices."""
        multi = np.asarray(multi, dtype=np.int64)
        if multi.ndim == 1:
            multi = multi[None, :]
        for a in range(self.ndim):
            col = multi[:, a]
            if col.size and (col.min() < 0 or col.max() >= self.dims[a]):
                bad = int(col[(col < 0) | (col >= self.dims[a])][0])
                raise IndexError(f"axis {a}: index {bad} out of range [0, {self.dims[a]})")
        flat = np.zeros(multi.shape[0], dtype=np.int64)
        for a in range(self.ndim):
            flat = flat * self.dims[a] + multi[:, a]
        return flat


@dataclass
class Field:
    """Flat float64 dof array bound to a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if self.values.size != self.grid.size:
            raise ValueError(
                f"values length {self.values.size} != grid size {self.grid.size}"
            )

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def full(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.size, float(value)))

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def reshaped(self) -> np.ndarray:
        """View of the values shaped to the grid dims."""
        return self.values.reshape(self.grid.dims)

    def check_finite(self, context: str = "field") -> "Field":
        if not np.all(np.isfinite(self.values)):
            bad = int(np.flatnonzero(~np.isfinite(self.values))[0])
            raise ValueError(f"{context}: non-finite value at flat index {bad}")
        return self


class IndexSet:
    """Set of multi-indices a residual block is evaluated over.

    ``kind`` is one of ``interior``, ``boundary-face``, or ``explicit``;
    all kinds are materialized to an explicit (m, ndim) index array so hot
    loops stay branch-free.
    """

    def __init__(self, grid: Grid, indices: np.ndarray, kind: str = "explicit"):
        self.grid = grid
        self.kind = kind
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim == 1:
            indices = indices[:, None]
        if indices.shape[1] != grid.ndim:
            raise ValueError(f"indices must have {grid.ndim} columns")
        for a in range(grid.ndim):
            col = indices[:, a]
            if col.size and (col.min() < 0 or col.max() >= grid.dims[a]):
                raise ValueError(f"axis {a}: multi-index outside grid dims")
        self.indices = indices

    def __len__(self) -> int:
        return self.indices.shape[0]

    @classmethod
    def box(cls, grid: Grid, lo: Sequence[int], hi: Sequence[int]) -> "IndexSet":
        """All multi-indices with lo[a] <= i_a <= hi[a] (inclusive bounds)."""
        ranges = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
        if any(r.size == 0 for r in ranges):
            return cls(grid, np.empty((0, grid.ndim), dtype=np.int64))
        mesh = np.meshgrid(*ranges, indexing="ij")
        idx = np.stack([m.ravel() for m in mesh], axis=1)
        return cls(grid, idx)

    @classmethod
    def interior(cls, grid: Grid, margin: int = 1) -> "IndexSet":
        s = cls.box(grid, [margin] * grid.ndim, [d - 1 - margin for d in grid.dims])
        s.kind = "interior"
        return s

    @classmethod
    def boundary_face(cls, grid: Grid, axis: int, side: int) -> "IndexSet":
        """All indices on one face: axis pinned to 0 (side=0) or dims-1 (side=1)."""
        lo = [0] * grid.ndim
        hi = [d - 1 for d in grid.dims]
        pin = 0 if side == 0 else grid.dims[axis] - 1
        lo[axis] = hi[axis] = pin
        s = cls.box(grid, lo, hi)
        s.kind = f"boundary-face(axis={axis}, side={side})"
        return s

    @classmethod
    def explicit(cls, grid: Grid, indices: Iterable[Sequence[int]]) -> "IndexSet":
        return cls(grid, np.asarray(list(indices), dtype=np.int64))

    def flat(self) -> np.ndarray:
        return self.grid.flat_indices(self.indices)


def norm(field: Field, which: str = "L2", relative_to: Field | None = None) -> float:
    """Mean-based L1/L2 or max Linf norm; optionally relative to a reference.

    With ``relative_to`` the norm of the difference is divided by the norm
    of the reference; a zero reference norm falls back to the absolute norm.
    """
    if relative_to is not None:
        if relative_to.grid != field.grid:
            raise ValueError("norm: fields live on different grids")
        diff = Field(field.grid, field.values - relative_to.values)
        num = norm(diff, which)
        den = norm(relative_to, which)
        return num / den if den != 0.0 else num
    v = field.values
    if which == "L1":
        return float(np.mean(np.abs(v)))
    if which == "L2":
        return float(np.sqrt(np.mean(v * v)))
    if which == "Linf":
        return float(np.max(np.abs(v))) if v.size else 0.0
    raise ValueError(f"unknown norm {which!r}; expected L1, L2, or Linf")


def eval_on_grid(grid: Grid, f: Callable[..., np.ndarray | float]) -> Field:
    """Sample a pointwise function of the coordinates onto a field.

    ``f`` receives one coordinate array per axis (node positions or cell
    midpoints per the grid centering) and must broadcast over them.
    """
    coords = grid.coords()
    values = np.broadcast_to(np.asarray(f(*coords), dtype=np.float64), (grid.size,))
    return Field(grid, values.copy())


def save_field(field: Field, basename: str | Path) -> None:
    """Write the .json/.raw pair: metadata sidecar plus little-endian f64 dofs."""
    base = Path(basename)
    field.check_finite(f"save_field({base.name})")
    meta = {
        "dims": list(field.grid.dims),
        "lo": list(field.grid.lo),
        "hi": list(field.grid.hi),
        "centering": field.grid.centering,
        "dtype": "f64",
    }
    base.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")
    field.values.astype("<f8").tofile(base.with_suffix(".raw"))


def load_field(basename: str | Path) -> Field:
    base = Path(basename)
    meta = json.loads(base.with_suffix(".json").read_text())
    if meta.get("dtype", "f64") != "f64":
        raise ValueError(f"unsupported dtype {meta['dtype']!r} in {base}.json")
    grid = Grid(
        dims=tuple(meta["dims"]),
        lo=tuple(meta["lo"]),
        hi=tuple(meta["hi"]),
        centering=meta.get("centering", "node"),
    )
    values = np.fromfile(base.with_suffix(".raw"), dtype="<f8")
    field = Field(grid, values.astype(np.float64))
    return field.check_finite(f"load_field({base.name})")
