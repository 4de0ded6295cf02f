"""Adam, L-BFGS, and damped Gauss-Newton over a Problem, with uniform reporting.

Every method records one row per completed epoch: loss and gradient norm at
the post-step iterate, optional relative L2 error against a reference
vector, and cumulative wall time. Reports serialize to CSV with the header
``epoch,loss,grad_inf,error,time_s``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import NonFiniteResidualError, Problem
from .sparse import BandCholesky, SingularMatrixError, solve_cg

__all__ = [
    "AdamConfig",
    "LbfgsConfig",
    "NewtonConfig",
    "StopRules",
    "OptConfig",
    "EpochRecord",
    "RunReport",
    "minimize",
    "minimize_adam",
    "minimize_lbfgs",
    "minimize_newton",
]


@dataclass
class AdamConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.lr <= 0:
            raise ValueError("adam: lr must be positive")
        if not 0 < self.beta1 < self.beta2 < 1:
            raise ValueError("adam: need 0 < beta1 < beta2 < 1")


@dataclass
class LbfgsConfig:
    history: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_linesearch: int = 20

    def validate(self):
        if self.history < 1:
            raise ValueError("lbfgs: history must be >= 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("lbfgs: need 0 < c1 < c2 < 1")


@dataclass
class NewtonConfig:
    damping: float = 0.0
    damping_mode: str = "absolute"  # or "diag-mean"
    inner: str = "direct"  # or "cg"
    inner_tol: float = 1e-8
    inner_max_iter: int | None = None
    step_control: str = "backtracking"  # or "full"

    def validate(self):
        if self.damping < 0:
            raise ValueError("newton: damping must be nonnegative")
        if self.inner not in ("direct", "cg"):
            raise ValueError("newton: inner solver must be 'direct' or 'cg'")
        if self.step_control not in ("backtracking", "full"):
            raise ValueError("newton: step_control must be 'backtracking' or 'full'")


@dataclass
class StopRules:
    grad_inf_tol: float | None = None
    loss_tol: float | None = None
    error_tol: float | None = None


@dataclass
class OptConfig:
    method: str = "newton"
    max_epochs: int = 100
    adam: AdamConfig = field(default_factory=AdamConfig)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    stop: StopRules = field(default_factory=StopRules)

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(
                f"unknown optimizer {self.method!r}; valid options: {', '.join(sorted(METHODS))}"
            )
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        self.adam.validate()
        self.lbfgs.validate()
        self.newton.validate()


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    grad_inf: float
    error: float
    time_s: float


@dataclass
class RunReport:
    records: list[EpochRecord]
    x: np.ndarray
    termination: str

    @property
    def epochs(self) -> int:
        return len(self.records)

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else math.nan

    @property
    def final_error(self) -> float:
        return self.records[-1].error if self.records else math.nan

    @property
    def wall_time_s(self) -> float:
        return self.records[-1].time_s if self.records else 0.0

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,loss,grad_inf,error,time_s\n")
            for r in self.records:
                fh.write(
                    f"{r.epoch},{r.loss:.17g},{r.grad_inf:.17g},{r.error:.17g},{r.time_s:.6f}\n"
                )


class _Recorder:
    """Shared per-epoch bookkeeping: error metric, stop rules, timing."""

    def __init__(self, problem: Problem, stop: StopRules, reference, error_indices):
        self.stop = stop
        self.reference = None if reference is None else np.asarray(reference, dtype=np.float64)
        self.error_indices = error_indices
        if self.reference is not None:
            sel = self.reference if error_indices is None else self.reference[error_indices]
            self.ref_norm = float(np.linalg.norm(sel))
        self.t0 = time.perf_counter()
        self.records: list[EpochRecord] = []

    def error_of(self, x) -> float:
        if self.reference is None:
            return math.nan
        d = x - self.reference
        if self.error_indices is not None:
            d = d[self.error_indices]
        num = float(np.linalg.norm(d))
        return num / self.ref_norm if self.ref_norm else num

    def record(self, epoch: int, loss: float, grad_inf: float, x) -> EpochRecord:
        rec = EpochRecord(
            epoch=epoch,
            loss=float(loss),
            grad_inf=float(grad_inf),
            error=self.error_of(x),
            time_s=time.perf_counter() - self.t0,
        )
        self.records.append(rec)
        return rec

    def should_stop(self, rec: EpochRecord) -> str | None:
        s = self.stop
        if s.grad_inf_tol is not None and rec.grad_inf < s.grad_inf_tol:
            return "grad_tol"
        if s.loss_tol is not None and rec.loss < s.loss_tol:
            return "loss_tol"
        if s.error_tol is not None and not math.isnan(rec.error) and rec.error < s.error_tol:
            return "error_tol"
        return None


def _ginf(g) -> float:
    return float(np.max(np.abs(g))) if g.size else 0.0


def minimize_adam(problem: Problem, x0, config: OptConfig, reference=None, error_indices=None, callback=None) -> RunReport:
    """Full-batch Adam with bias correction; one epoch = one gradient step."""
    config.validate()
    c = config.adam
    rec = _Recorder(problem, config.stop, reference, error_indices)
    x = np.array(x0, dtype=np.float64, copy=True)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    termination = "max_epochs"
    try:
        g = problem.gradient(x)
        for epoch in range(1, config.max_epochs + 1):
            m = c.beta1 * m + (1 - c.beta1) * g
            v = c.beta2 * v + (1 - c.beta2) * g * g
            mhat = m / (1 - c.beta1**epoch)
            vhat = v / (1 - c.beta2**epoch)
            x = x - c.lr * mhat / (np.sqrt(vhat) + c.eps)
            loss = problem.loss(x)
            g = problem.gradient(x)
            r = rec.record(epoch, loss, _ginf(g), x)
            if callback is not None:
                callback(epoch, x)
            why = rec.should_stop(r)
            if why:
                termination = why
                break
    except NonFiniteResidualError:
        termination = "non_finite_loss"
    return RunReport(rec.records, x, termination)


def _strong_wolfe(problem, x, d, f0, g0, c1, c2, max_evals):
    """Strong-Wolfe line search; returns (alpha, f, g) or None on failure.

    Bracketing with doubling, then bisection zoom; gradient evaluated at
    every trial point (needed for the curvature test and reused by the
    caller at the accepted point).
    """
    dphi0 = float(g0 @ d)
    if dphi0 >= 0:
        return None

    def phi(alpha):
        xt = x + alpha * d
        f = problem.loss(xt)
        g = problem.gradient(xt)
        return f, g, float(g @ d)

    evals = 0

    def zoom(alo, flo, ahi, fhi):
        nonlocal evals
        while evals < max_evals:
            a = 0.5 * (alo + ahi)
            f, g, dphi = phi(a)
            evals += 1
            if f > f0 + c1 * a * dphi0 or f >= flo:
                ahi, fhi = a, f
            else:
                if abs(dphi) <= -c2 * dphi0:
                    return a, f, g
                if dphi * (ahi - alo) >= 0:
                    ahi, fhi = alo, flo
                alo, flo = a, f
        return None

    a_prev, f_prev = 0.0, f0
    a = 1.0
    while evals < max_evals:
        f, g, dphi = phi(a)
        evals += 1
        if f > f0 + c1 * a * dphi0 or (evals > 1 and f >= f_prev):
            return zoom(a_prev, f_prev, a, f)
        if abs(dphi) <= -c2 * dphi0:
            return a, f, g
        if dphi >= 0:
            return zoom(a, f, a_prev, f_prev)
        a_prev, f_prev = a, f
        a = 2.0 * a
    return None


def minimize_lbfgs(problem: Problem, x0, config: OptConfig, reference=None, error_indices=None, callback=None) -> RunReport:
    """Limited-memory BFGS with two-loop recursion and strong-Wolfe search."""
    config.validate()
    c = config.lbfgs
    rec = _Recorder(problem, config.stop, reference, error_indices)
    x = np.array(x0, dtype=np.float64, copy=True)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    termination = "max_epochs"
    try:
        f = problem.loss(x)
        g = problem.gradient(x)
        for epoch in range(1, config.max_epochs + 1):
            q = g.copy()
            alphas = []
            for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
                a = rho * float(s @ q)
                alphas.append(a)
                q -= a * y
            if y_hist:
                s, y = s_hist[-1], y_hist[-1]
                gamma = float(s @ y) / float(y @ y)
                q *= gamma
            for (s, y, rho), a in zip(
                zip(s_hist, y_hist, rho_hist), reversed(alphas)
            ):
                beta = rho * float(y @ q)
                q += (a - beta) * s
            d = -q

            result = _strong_wolfe(problem, x, d, f, g, c.c1, c.c2, c.max_linesearch)
            if result is None:
                # fall back to steepest descent with simple backtracking
                d = -g
                alpha = 1.0 / max(1.0, _ginf(g))
                ok = False
                for _ in range(40):
                    xt = x + alpha * d
                    ft = problem.loss(xt)
                    if ft < f:
                        gt = problem.gradient(xt)
                        result = (alpha, ft, gt)
                        ok = True
                        break
                    alpha *= 0.5
                if not ok:
                    termination = "line_search_failed"
                    break
            alpha, f_new, g_new = result
            s = alpha * d
            y = g_new - g
            sy = float(s @ y)
            if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
                s_hist.append(s)
                y_hist.append(y)
                rho_hist.append(1.0 / sy)
                if len(s_hist) > c.history:
                    s_hist.pop(0)
                    y_hist.pop(0)
                    rho_hist.pop(0)
            x = x + s
            f, g = f_new, g_new
            r = rec.record(epoch, f, _ginf(g), x)
            if callback is not None:
                callback(epoch, x)
            why = rec.should_stop(r)
            if why:
                termination = why
                break
    except NonFiniteResidualError:
        termination = "non_finite_loss"
    return RunReport(rec.records, x, termination)


def minimize_newton(problem: Problem, x0, config: OptConfig, reference=None, error_indices=None, callback=None) -> RunReport:
    """Damped Gauss-Newton: solve the normal system, backtrack on the loss.

    The RCM ordering of the direct inner solver is computed once (the
    pattern is fixed across epochs). A singular factorization is retried
    once with the damping increased tenfold.
    """
    config.validate()
    c = config.newton
    rec = _Recorder(problem, config.stop, reference, error_indices)
    x = np.array(x0, dtype=np.float64, copy=True)
    termination = "max_epochs"
    perm_cache: dict[str, np.ndarray] = {}

    def assemble(xv):
        if problem.refreeze is not None:
            problem.refreeze(problem, xv)
        return problem.normal_system(xv, damping=c.damping, damping_mode=c.damping_mode)

    def solve(system):
        if c.inner == "direct":
            chol = BandCholesky(system.A, perm=perm_cache.get("perm"))
            perm_cache["perm"] = chol.perm
            return chol.solve(system.b)
        max_it = c.inner_max_iter or 10 * system.A.n_rows
        delta, _ = solve_cg(system.A, system.b, tol=c.inner_tol, max_iter=max_it)
        return delta

    try:
        sys_cur = assemble(x)
        loss_cur = problem.loss(x)
        for epoch in range(1, config.max_epochs + 1):
            try:
                delta = solve(sys_cur)
            except SingularMatrixError:
                diag_mean = float(np.mean(sys_cur.A.diagonal()))
                bump = max(sys_cur.effective_damping, 1e-8 * max(diag_mean, 1.0)) * 10.0
                retry = problem.normal_system(x, damping=bump, damping_mode="absolute")
                try:
                    delta = solve(retry)
                except SingularMatrixError:
                    termination = "singular_system"
                    break
            if c.step_control == "full":
                x = x + delta
                loss_cur = problem.loss(x)
            else:
                alpha = 1.0
                accepted = False
                while alpha >= 2.0**-20:
                    xt = x + alpha * delta
                    lt = problem.loss(xt)
                    if lt <= loss_cur:
                        x, loss_cur = xt, lt
                        accepted = True
                        break
                    alpha *= 0.5
                if not accepted:
                    termination = "backtracking_failed"
                    break
            sys_cur = assemble(x)
            if problem.refreeze is not None:
                loss_cur = problem.loss(x)
            grad_inf = 2.0 * _ginf(sys_cur.b)
            r = rec.record(epoch, loss_cur, grad_inf, x)
            if callback is not None:
                callback(epoch, x)
            why = rec.should_stop(r)
            if why:
                termination = why
                break
    except NonFiniteResidualError:
        termination = "non_finite_loss"
    return RunReport(rec.records, x, termination)


METHODS = {
    "adam": minimize_adam,
    "lbfgs": minimize_lbfgs,
    "newton": minimize_newton,
}


def minimize(problem: Problem, x0, config: OptConfig, reference=None, error_indices=None, callback=None) -> RunReport:
    config.validate()
    return METHODS[config.method](problem, x0, config, reference, error_indices, callback)
