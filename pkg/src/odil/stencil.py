"""Differentiable compact-stencil expressions.

An expression tree references unknown or known fields at fixed integer
offsets from the current index, scalar parameters, and constants. A
:class:`ResidualBlock` binds one expression to an index set and evaluates
the residual vector, its sparse Jacobian, and parameter gradients with
forward-mode differentiation at stencil granularity: one derivative slot
per (field, offset) pair, so a residual row costs O(footprint).

Non-smooth operators (abs, select-by-sign) take the derivative from the
positive side at the switch point, which keeps upwind Jacobians
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .grid import Field, Grid, IndexSet

__all__ = [
    "Expr",
    "FieldHandle",
    "unknown",
    "known",
    "param",
    "const",
    "sin",
    "cos",
    "exp",
    "sqrt",
    "absval",
    "maximum",
    "minimum",
    "select_by_sign",
    "Slot",
    "JacobianTriplets",
    "ResidualBlock",
]


def _sign_pos(x):
    """Sign with the tie at 0 broken toward +1 (positive-side derivative)."""
    return np.where(np.asarray(x) >= 0.0, 1.0, -1.0)


class Expr:
    """Base expression node; supports arithmetic operator overloading."""

    def __add__(self, other):
        return Binary("+", self, _wrap(other))

    def __radd__(self, other):
        return Binary("+", _wrap(other), self)

    def __sub__(self, other):
        return Binary("-", self, _wrap(other))

    def __rsub__(self, other):
        return Binary("-", _wrap(other), self)

    def __mul__(self, other):
        return Binary("*", self, _wrap(other))

    def __rmul__(self, other):
        return Binary("*", _wrap(other), self)

    def __truediv__(self, other):
        return Binary("/", self, _wrap(other))

    def __rtruediv__(self, other):
        return Binary("/", _wrap(other), self)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("power supports numeric exponents only")
        return Power(self, float(exponent))

    def __neg__(self):
        return Binary("*", Const(-1.0), self)


def _wrap(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.floating, np.integer)):
        return Const(float(v))
    raise TypeError(f"cannot use {type(v).__name__} in a stencil expression")


class Const(Expr):
    def __init__(self, value: float):
        self.value = float(value)


class Param(Expr):
    def __init__(self, name: str):
        self.name = name


class FieldRef(Expr):
    """Reference to a field at an integer offset from the current index.

    ``axes`` maps each field axis to an index-set axis; fields of lower
    dimension than the index set (e.g. a steady 2D velocity inside a
    space-time residual) pick the axes they vary along.
    """

    def __init__(self, name: str, offsets: tuple[int, ...], known: bool, axes=None):
        self.name = name
        self.offsets = tuple(int(o) for o in offsets)
        self.known = known
        self.axes = tuple(axes) if axes is not None else tuple(range(len(self.offsets)))
        if len(self.axes) != len(self.offsets):
            raise ValueError("axes and offsets must have equal length")


class Unary(Expr):
    def __init__(self, op: str, a: Expr):
        self.op = op
        self.a = a


class Binary(Expr):
    def __init__(self, op: str, a: Expr, b: Expr):
        self.op = op
        self.a = a
        self.b = b


class Power(Expr):
    def __init__(self, a: Expr, exponent: float):
        self.a = a
        self.exponent = exponent


class Extremum(Expr):
    def __init__(self, op: str, a: Expr, b: Expr):
        self.op = op
        self.a = a
        self.b = b


class SelectBySign(Expr):
    """``pos`` where the switch is >= 0, else ``neg``; switch not differentiated."""

    def __init__(self, switch: Expr, pos: Expr, neg: Expr):
        self.switch = switch
        self.pos = pos
        self.neg = neg


class FieldHandle:
    """Builder for field references: ``u = unknown("u"); u(1, 0) - u(0, 0)``."""

    def __init__(self, name: str, known: bool, axes=None):
        self.name = name
        self.known = known
        self.axes = axes

    def __call__(self, *offsets: int) -> FieldRef:
        return FieldRef(self.name, offsets, self.known, self.axes)


def unknown(name: str, axes=None) -> FieldHandle:
    return FieldHandle(name, known=False, axes=axes)


def known(name: str, axes=None) -> FieldHandle:
    return FieldHandle(name, known=True, axes=axes)


def param(name: str) -> Param:
    return Param(name)


def const(value: float) -> Const:
    return Const(value)


def sin(a) -> Expr:
    return Unary("sin", _wrap(a))


def cos(a) -> Expr:
    return Unary("cos", _wrap(a))


def exp(a) -> Expr:
    return Unary("exp", _wrap(a))


def sqrt(a) -> Expr:
    return Unary("sqrt", _wrap(a))


def absval(a) -> Expr:
    return Unary("abs", _wrap(a))


def maximum(a, b) -> Expr:
    return Extremum("max", _wrap(a), _wrap(b))


def minimum(a, b) -> Expr:
    return Extremum("min", _wrap(a), _wrap(b))


def select_by_sign(switch, pos, neg) -> Expr:
    return SelectBySign(_wrap(switch), _wrap(pos), _wrap(neg))


@dataclass(frozen=True)
class Slot:
    """One (field, offset) gather position inside a block's footprint."""

    name: str
    offsets: tuple[int, ...]
    axes: tuple[int, ...]
    known: bool


@dataclass
class JacobianTriplets:
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray


class UnboundNameError(KeyError):
    pass


class ResidualBlock:
    """A stencil expression over an index set with a scalar weight.

    The index set is clipped at construction so that every slot offset
    stays in-grid; evaluation is then gather-based and branch-free. The
    weight multiplies the residual (not its square).
    """

    def __init__(
        self,
        expr: Expr,
        index_set: IndexSet,
        grids: Mapping[str, Grid],
        weight: float = 1.0,
        name: str = "block",
    ):
        if weight < 0:
            raise ValueError(f"block {name!r}: weight must be nonnegative")
        self.expr = expr
        self.weight = float(weight)
        self.name = name
        self.grids = dict(grids)

        slots: list[Slot] = []
        slot_ids: dict[Slot, int] = {}
        params: list[str] = []

        def visit(node: Expr):
            if isinstance(node, FieldRef):
                if node.name not in self.grids:
                    raise UnboundNameError(
                        f"block {name!r}: no grid declared for field {node.name!r}"
                    )
                s = Slot(node.name, node.offsets, node.axes, node.known)
                if s not in slot_ids:
                    slot_ids[s] = len(slots)
                    slots.append(s)
            elif isinstance(node, Param):
                if node.name not in params:
                    params.append(node.name)
            elif isinstance(node, Unary):
                visit(node.a)
            elif isinstance(node, (Binary, Extremum)):
                visit(node.a)
                visit(node.b)
            elif isinstance(node, Power):
                visit(node.a)
            elif isinstance(node, SelectBySign):
                visit(node.switch)
                visit(node.pos)
                visit(node.neg)
            elif isinstance(node, Const):
                pass
            else:
                raise TypeError(f"unknown expression node {type(node).__name__}")

        visit(expr)
        self.slots = slots
        self._slot_ids = slot_ids
        self.param_names = params

        # Clip: keep only index rows where every slot lands in-grid.
        idx = index_set.indices
        keep = np.ones(idx.shape[0], dtype=bool)
        for s in slots:
            g = self.grids[s.name]
            if len(s.offsets) != g.ndim:
                raise ValueError(
                    f"block {name!r}: field {s.name!r} has {g.ndim} axes, "
                    f"reference uses {len(s.offsets)} offsets"
                )
            for fa, (ba, off) in enumerate(zip(s.axes, s.offsets)):
                tgt = idx[:, ba] + off
                keep &= (tgt >= 0) & (tgt < g.dims[fa])
        self.indices = idx[keep]
        self._gathers: list[np.ndarray] = []
        for s in slots:
            g = self.grids[s.name]
            tgt = np.zeros(self.indices.shape[0], dtype=np.int64)
            for fa in range(g.ndim):
                tgt = tgt * g.dims[fa] + (self.indices[:, s.axes[fa]] + s.offsets[fa])
            self._gathers.append(tgt)

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def n_rows(self) -> int:
        return self.indices.shape[0]

    @property
    def unknown_slot_ids(self) -> list[int]:
        return [i for i, s in enumerate(self.slots) if not s.known]

    def slot_gather(self, slot_id: int) -> np.ndarray:
        return self._gathers[slot_id]

    def _gather_values(self, fields: Mapping[str, Field]) -> list[np.ndarray]:
        out = []
        for s, gath in zip(self.slots, self._gathers):
            if s.name not in fields:
                raise UnboundNameError(f"block {self.name!r}: field {s.name!r} not bound")
            f = fields[s.name]
            if f.grid != self.grids[s.name]:
                raise ValueError(
                    f"block {self.name!r}: field {s.name!r} bound on a different grid"
                )
            out.append(f.values[gath])
        return out

    def _eval(self, fields, params, diff_fields: bool, diff_params=()):
        """Forward-mode pass; returns (weighted values, {key: weighted derivs}).

        Derivative keys are ("f", slot_id) for unknown-field slots when
        ``diff_fields`` and ("p", name) for each name in ``diff_params``.
        """
        params = params or {}
        slot_vals = self._gather_values(fields)
        want_p = set(diff_params)

        def rec(node):
            if isinstance(node, Const):
                return node.value, {}
            if isinstance(node, Param):
                if node.name not in params:
                    raise UnboundNameError(
                        f"block {self.name!r}: parameter {node.name!r} not bound"
                    )
                d = {}
                if node.name in want_p:
                    d[("p", node.name)] = 1.0
                return float(params[node.name]), d
            if isinstance(node, FieldRef):
                sid = self._slot_ids[Slot(node.name, node.offsets, node.axes, node.known)]
                d = {}
                if diff_fields and not node.known:
                    d[("f", sid)] = 1.0
                return slot_vals[sid], d
            if isinstance(node, Unary):
                v, dv = rec(node.a)
                if node.op == "sin":
                    f, g = np.sin(v), np.cos(v)
                elif node.op == "cos":
                    f, g = np.cos(v), -np.sin(v)
                elif node.op == "exp":
                    f = np.exp(v)
                    g = f
                elif node.op == "sqrt":
                    f = np.sqrt(v)
                    g = 0.5 / f
                elif node.op == "abs":
                    f, g = np.abs(v), _sign_pos(v)
                else:
                    raise ValueError(f"unknown unary op {node.op!r}")
                return f, {k: g * d for k, d in dv.items()}
            if isinstance(node, Power):
                v, dv = rec(node.a)
                p = node.exponent
                f = v**p
                g = p * v ** (p - 1.0)
                return f, {k: g * d for k, d in dv.items()}
            if isinstance(node, Binary):
                va, da = rec(node.a)
                vb, db = rec(node.b)
                if node.op == "+":
                    return va + vb, _merge(da, db, 1.0, 1.0)
                if node.op == "-":
                    return va - vb, _merge(da, db, 1.0, -1.0)
                if node.op == "*":
                    return va * vb, _merge(da, db, vb, va)
                if node.op == "/":
                    inv = 1.0 / vb
                    return va * inv, _merge(da, db, inv, -va * inv * inv)
                raise ValueError(f"unknown binary op {node.op!r}")
            if isinstance(node, Extremum):
                va, da = rec(node.a)
                vb, db = rec(node.b)
                if node.op == "max":
                    pick_a = np.asarray(va) >= np.asarray(vb)
                    f = np.maximum(va, vb)
                else:
                    pick_a = np.asarray(va) <= np.asarray(vb)
                    f = np.minimum(va, vb)
                return f, _merge(da, db, np.where(pick_a, 1.0, 0.0), np.where(pick_a, 0.0, 1.0))
            if isinstance(node, SelectBySign):
                vs, _ = rec(node.switch)
                vp, dp = rec(node.pos)
                vn, dn = rec(node.neg)
                take_pos = np.asarray(vs) >= 0.0
                f = np.where(take_pos, vp, vn)
                return f, _merge(dp, dn, np.where(take_pos, 1.0, 0.0), np.where(take_pos, 0.0, 1.0))
            raise TypeError(f"unknown expression node {type(node).__name__}")

        val, derivs = rec(self.expr)
        m = self.n_rows
        w = self.weight
        r = np.broadcast_to(np.asarray(w * val, dtype=np.float64), (m,))
        out = {
            k: np.ascontiguousarray(
                np.broadcast_to(np.asarray(w * d, dtype=np.float64), (m,))
            )
            for k, d in derivs.items()
        }
        return np.ascontiguousarray(r), out

    def eval_residuals(self, fields: Mapping[str, Field], params=None) -> np.ndarray:
        """Weighted residual per index, in index-set iteration order."""
        r, _ = self._eval(fields, params, diff_fields=False)
        return r

    def eval_jacobian(self, fields, params=None, dof_index=None) -> JacobianTriplets:
        """Sparse triplets of d(residual)/d(unknown dof).

        ``dof_index(name, flat_indices)`` maps per-field flat indices to
        global columns; omitted, it requires a single unknown field and
        uses its flat indices directly.
        """
        r, derivs = self._eval(fields, params, diff_fields=True)
        unknown_names = {self.slots[sid].name for (_, sid) in derivs.keys()}
        if dof_index is None:
            if len(unknown_names) > 1:
                raise ValueError(
                    f"block {self.name!r}: multiple unknown fields, pass dof_index"
                )
            dof_index = lambda name, flat: flat  # noqa: E731
        m = self.n_rows
        rows, cols, vals = [], [], []
        row_ids = np.arange(m, dtype=np.int64)
        for (_, sid), d in sorted(derivs.items(), key=lambda kv: kv[0][1]):
            s = self.slots[sid]
            rows.append(row_ids)
            cols.append(dof_index(s.name, self._gathers[sid]))
            vals.append(d)
        if rows:
            return JacobianTriplets(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
        return JacobianTriplets(
            np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0)
        )

    def eval_param_gradient(self, fields, params, param_name: str) -> np.ndarray:
        """d(residual)/d(param) per residual row."""
        if param_name not in (params or {}):
            raise UnboundNameError(
                f"block {self.name!r}: parameter {param_name!r} not bound"
            )
        r, derivs = self._eval(fields, params, diff_fields=False, diff_params=(param_name,))
        key = ("p", param_name)
        if key in derivs:
            return derivs[key]
        return np.zeros(self.n_rows)


def _merge(da: dict, db: dict, ca, cb) -> dict:
    """Combine two derivative maps: out[k] = ca*da[k] + cb*db[k]."""
    out = {}
    for k, d in da.items():
        out[k] = ca * d
    for k, d in db.items():
        if k in out:
            out[k] = out[k] + cb * d
        else:
            out[k] = cb * d
    return out
