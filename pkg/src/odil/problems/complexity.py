"""Flow-complexity measure: fewest velocity samples that reconstruct a flow.

E(K) is estimated by reconstructing the reference flow from ``n_samples``
random K-point sets (uniform over cell centers, nested across K for a
shared seed) and taking the smallest L1 velocity error; K_min(eps) is the
first K whose estimate drops below eps.

Reference flows: uniform, couette (linear profile), poiseuille (parabolic
profile), all at a fixed 30-degree orientation with unit maximum speed,
plus the driven-cavity solution. Reconstructions impose the flow equations
everywhere, second-order extrapolation of the boundary velocities from the
interior, and the curvature regularizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..grid import Field
from ..optimize import NewtonConfig, OptConfig, StopRules, minimize_newton
from .cavity import (
    CavitySpec,
    _grid,
    build_cavity_forward,
    build_cavity_reconstruct,
)

__all__ = [
    "ComplexitySpec",
    "KminResult",
    "reference_flow",
    "complexity_E",
    "complexity_Kmin",
]


@dataclass
class ComplexitySpec:
    flow: str = "cavity"  # uniform | couette | poiseuille | cavity
    n: int = 64
    k_reg: float = 1e-3
    n_samples: int = 64
    eps: float = 0.05
    seed: int = 0
    Re: float = 100.0
    angle_deg: float = 30.0
    newton_epochs: int = 12

    def validate(self):
        if self.flow not in ("uniform", "couette", "poiseuille", "cavity"):
            raise ValueError(f"unknown flow {self.flow!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class KminResult:
    k: int
    capped: bool
    estimates: dict[int, float]

    def __int__(self):
        return self.k


def reference_flow(spec: ComplexitySpec) -> tuple[Field, Field]:
    """Reference (u, v) fields on the cell-centered grid, max speed one."""
    spec.validate()
    grid = _grid(spec.n)
    xs, ys = grid.coords()
    th = np.deg2rad(spec.angle_deg)
    if spec.flow == "cavity":
        fwd = CavitySpec(n=spec.n, Re=spec.Re)
        problem = build_cavity_forward(fwd)
        cfg = OptConfig(
            method="newton",
            max_epochs=40,
            newton=NewtonConfig(damping=0.0),
            stop=StopRules(grad_inf_tol=1e-10),
        )
        report = minimize_newton(problem, problem.initial_vector(), cfg)
        fields, _ = problem.split(report.x)
        return fields["u"].copy(), fields["v"].copy()
    # transverse coordinate normalized to [0, 1] across the unit square
    s = (-xs * np.sin(th) + ys * np.cos(th) + np.sin(th)) / (np.sin(th) + np.cos(th))
    if spec.flow == "uniform":
        speed = np.ones_like(s)
    elif spec.flow == "couette":
        speed = s
    else:  # poiseuille
        speed = 4.0 * s * (1.0 - s)
    return (
        Field(grid, speed * np.cos(th)),
        Field(grid, speed * np.sin(th)),
    )


def _nested_points(grid, u_ref: Field, v_ref: Field, k: int, seed: int, sample: int):
    rng = np.random.default_rng([seed, sample])
    chosen = rng.permutation(grid.size)[:k]
    xs, ys = grid.coords()
    return [
        (float(xs[c]), float(ys[c]), float(u_ref.values[c]), float(v_ref.values[c]))
        for c in chosen
    ]


def _reconstruct_error(spec: ComplexitySpec, points, u_ref: Field, v_ref: Field) -> float:
    cav = CavitySpec(
        n=spec.n,
        Re=spec.Re,
        mode="reconstruct",
        data_points=points,
        k_reg=spec.k_reg,
        bc="extrapolate2",
    )
    problem = build_cavity_reconstruct(cav)
    cfg = OptConfig(
        method="newton",
        max_epochs=spec.newton_epochs,
        newton=NewtonConfig(damping=1e-12, damping_mode="diag-mean"),
        stop=StopRules(grad_inf_tol=1e-10),
    )
    report = minimize_newton(problem, problem.initial_vector(), cfg)
    fields, _ = problem.split(report.x)
    err = np.concatenate(
        [fields["u"].values - u_ref.values, fields["v"].values - v_ref.values]
    )
    return float(np.mean(np.abs(err)))


def complexity_E(
    spec: ComplexitySpec, k: int, reference: tuple[Field, Field] | None = None
) -> tuple[float, list[float]]:
    """Best L1 reconstruction error over random K-point sets.

    Returns (estimate, per-sample errors); the estimate is the minimum, a
    lower-bounding search over point placements.
    """
    spec.validate()
    if k < 1:
        raise ValueError("K must be >= 1")
    u_ref, v_ref = reference if reference is not None else reference_flow(spec)
    grid = u_ref.grid
    errors = []
    for sample in range(spec.n_samples):
        points = _nested_points(grid, u_ref, v_ref, k, spec.seed, sample)
        errors.append(_reconstruct_error(spec, points, u_ref, v_ref))
    return min(errors), errors


def best_reconstruction(
    spec: ComplexitySpec, k: int, reference: tuple[Field, Field] | None = None
):
    """Re-solve the best K-point sample; returns (problem, x, errors)."""
    spec.validate()
    u_ref, v_ref = reference if reference is not None else reference_flow(spec)
    grid = u_ref.grid
    _, errors = complexity_E(spec, k, reference=(u_ref, v_ref))
    best = int(np.argmin(errors))
    points = _nested_points(grid, u_ref, v_ref, k, spec.seed, best)
    cav = CavitySpec(
        n=spec.n,
        Re=spec.Re,
        mode="reconstruct",
        data_points=points,
        k_reg=spec.k_reg,
        bc="extrapolate2",
    )
    problem = build_cavity_reconstruct(cav)
    cfg = OptConfig(
        method="newton",
        max_epochs=spec.newton_epochs,
        newton=NewtonConfig(damping=1e-12, damping_mode="diag-mean"),
        stop=StopRules(grad_inf_tol=1e-10),
    )
    report = minimize_newton(problem, problem.initial_vector(), cfg)
    return problem, report.x, errors


def complexity_Kmin(
    spec: ComplexitySpec,
    eps: float | None = None,
    k_cap: int = 64,
    reference: tuple[Field, Field] | None = None,
) -> KminResult:
    """Smallest K with E(K) below eps, scanning K = 1, 2, 3, ..."""
    spec.validate()
    eps = spec.eps if eps is None else float(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if reference is None:
        reference = reference_flow(spec)
    estimates: dict[int, float] = {}
    for k in range(1, k_cap + 1):
        e, _ = complexity_E(spec, k, reference=reference)
        estimates[k] = e
        if e < eps:
            return KminResult(k=k, capped=False, estimates=estimates)
    return KminResult(k=k_cap, capped=True, estimates=estimates)
