"""Discrete-residual least-squares toolkit for PDE forward and inverse problems.

Discretized equations, boundary data, measurements, and regularizers are
expressed as residual blocks over grid fields; the summed squares form a
loss minimized by Adam, L-BFGS, or sparse Gauss-Newton.
"""

import os as _os

# ODIL_THREADS caps BLAS-level parallelism; must be set before numpy loads
if "ODIL_THREADS" in _os.environ:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["ODIL_THREADS"])

from .grid import Field, Grid, IndexSet, eval_on_grid, load_field, norm, save_field
from .stencil import (
    JacobianTriplets,
    ResidualBlock,
    absval,
    const,
    cos,
    exp,
    known,
    maximum,
    minimum,
    param,
    select_by_sign,
    sin,
    sqrt,
    unknown,
)
from .assembly import DofLayout, NonFiniteResidualError, NormalSystem, Problem
from .sparse import (
    BandCholesky,
    CsrMatrix,
    SingularMatrixError,
    rcm_ordering,
    save_matrix_market,
    solve_cg,
    solve_direct,
)
from .optimize import (
    AdamConfig,
    LbfgsConfig,
    NewtonConfig,
    OptConfig,
    RunReport,
    StopRules,
    minimize,
    minimize_adam,
    minimize_lbfgs,
    minimize_newton,
)

__version__ = "0.1.0"
