"""Initial-value wave equation u_tt = u_xx on a space-time grid.

The unknown is the whole space-time field. Interior points carry the
centered second-order stencil residual; the boundary columns and the
initial row carry Dirichlet data from a closed-form standing-wave
solution; the second time layer is pinned through a one-sided velocity
constraint with the rate sampled at the half layer, which keeps the whole
scheme second-order accurate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..assembly import Problem
from ..grid import Field, Grid, IndexSet, eval_on_grid
from ..stencil import ResidualBlock, known, unknown

__all__ = ["WaveSpec", "build_wave", "wave_exact_solution", "wave_exact_rate"]

X_RANGE = (-1.0, 1.0)
T_RANGE = (0.0, 1.0)


@dataclass
class WaveSpec:
    nx: int = 25
    nt: int = 25

    def validate(self):
        if self.nx < 3 or self.nt < 3:
            raise ValueError("wave grid needs nx, nt >= 3")


def wave_exact_solution(x, t):
    """Superposition of five left/right traveling cosine modes."""
    u = 0.0
    for k in range(1, 6):
        u = u + np.cos((x - t + 0.5) * np.pi * k) + np.cos((x + t + 0.5) * np.pi * k)
    return u / 10.0


def wave_exact_rate(x, t):
    """Time derivative of :func:`wave_exact_solution`."""
    u = 0.0
    for k in range(1, 6):
        u = u + np.pi * k * (
            np.sin((x - t + 0.5) * np.pi * k) - np.sin((x + t + 0.5) * np.pi * k)
        )
    return u / 10.0


def build_wave(spec: WaveSpec) -> tuple[Problem, Field]:
    """Assemble the space-time problem; returns it with the sampled reference."""
    spec.validate()
    grid = Grid(dims=(spec.nx, spec.nt), lo=(X_RANGE[0], T_RANGE[0]), hi=(X_RANGE[1], T_RANGE[1]))
    hx, ht = grid.spacing
    u = unknown("u")
    g = known("g")
    gt = known("gt")

    interior = ResidualBlock(
        (u(0, 1) - 2 * u(0, 0) + u(0, -1)) / ht**2
        - (u(1, 0) - 2 * u(0, 0) + u(-1, 0)) / hx**2,
        IndexSet.interior(grid),
        {"u": grid},
        name="equation",
    )
    edge_rows = np.concatenate(
        [
            IndexSet.boundary_face(grid, 0, 0).indices,
            IndexSet.boundary_face(grid, 0, 1).indices,
            IndexSet.box(grid, [1, 0], [spec.nx - 2, 0]).indices,
        ]
    )
    dirichlet = ResidualBlock(
        u(0, 0) - g(0, 0), IndexSet(grid, edge_rows), {"u": grid, "g": grid}, name="data"
    )
    rate = ResidualBlock(
        (u(0, 1) - u(0, 0)) / ht - gt(0, 0),
        IndexSet.box(grid, [1, 0], [spec.nx - 2, 0]),
        {"u": grid, "gt": grid},
        name="initial-rate",
    )

    reference = eval_on_grid(grid, wave_exact_solution)
    knowns = {
        "g": reference.copy(),
        "gt": eval_on_grid(grid, lambda x, t: wave_exact_rate(x, ht / 2.0)),
    }
    problem = Problem(
        fields={"u": grid}, blocks=[interior, dirichlet, rate], knowns=knowns
    )
    return problem, reference
