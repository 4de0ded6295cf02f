"""JSON experiment configuration: problem spec + optimizer + run settings.

The schema is one flat object: a required ``problem`` tag
(wave | cavity | cavity_reconstruct | complexity | tracer), the spec fields
of that problem, and optional ``optimizer``, ``output_dir``, ``seed``,
``reference``, ``dump_every`` keys. Unknown keys are rejected by name so
typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .grid import load_field
from .optimize import AdamConfig, LbfgsConfig, NewtonConfig, OptConfig, StopRules
from .problems import CavitySpec, ComplexitySpec, TracerSpec, WaveSpec
from .problems.tracer import advect_upwind, blob_field, spatial_grid

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]

PROBLEMS = ("wave", "cavity", "cavity_reconstruct", "complexity", "tracer")

RUN_KEYS = {"problem", "optimizer", "output_dir", "seed", "reference", "dump_every"}
SPEC_KEYS = {
    "wave": {"nx", "nt"},
    "cavity": {"n", "Re", "lid_velocity", "deferred_correction"},
    "cavity_reconstruct": {
        "n",
        "Re",
        "k_reg",
        "lid_velocity",
        "data_points",
        "n_data_from_forward",
        "bc",
    },
    "complexity": {"flow", "n", "Re", "k_reg", "n_samples", "eps", "k_cap", "newton_epochs"},
    "tracer": {
        "nx",
        "ny",
        "nt",
        "smooth_coef",
        "unsteady_velocity",
        "c0",
        "c1",
        "synthetic",
        "warm_start",
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str
    spec: Any
    optimizer: OptConfig
    output_dir: Path = Path("out")
    seed: int = 0
    reference: Path | None = None
    dump_every: int = 0
    extras: dict = field(default_factory=dict)  # problem keys outside the spec dataclass
    raw: dict = field(default_factory=dict)


def _take(d: dict, key: str, default):
    return d[key] if key in d else default


def _parse_optimizer(obj: dict, defaults: OptConfig) -> OptConfig:
    if not isinstance(obj, dict):
        raise ConfigError("optimizer: expected an object")
    known = {"method", "max_epochs", "adam", "lbfgs", "newton", "stop"}
    for k in obj:
        if k not in known:
            raise ConfigError(f"optimizer: unknown key {k!r}")
    cfg = OptConfig(
        method=_take(obj, "method", defaults.method),
        max_epochs=int(_take(obj, "max_epochs", defaults.max_epochs)),
        adam=AdamConfig(**{**defaults.adam.__dict__, **obj.get("adam", {})}),
        lbfgs=LbfgsConfig(**{**defaults.lbfgs.__dict__, **obj.get("lbfgs", {})}),
        newton=NewtonConfig(**{**defaults.newton.__dict__, **obj.get("newton", {})}),
        stop=StopRules(**{**defaults.stop.__dict__, **obj.get("stop", {})}),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def default_optimizer(problem: str) -> OptConfig:
    """Per-problem optimizer defaults; all overridable from the config."""
    if problem == "wave":
        return OptConfig(
            method="newton",
            max_epochs=4,
            newton=NewtonConfig(damping=0.0),
            stop=StopRules(grad_inf_tol=1e-8),
        )
    if problem == "cavity":
        return OptConfig(
            method="newton",
            max_epochs=40,
            newton=NewtonConfig(damping=0.0),
            stop=StopRules(grad_inf_tol=1e-10),
        )
    if problem == "cavity_reconstruct":
        return OptConfig(
            method="newton",
            max_epochs=25,
            newton=NewtonConfig(damping=1e-12, damping_mode="diag-mean"),
            stop=StopRules(grad_inf_tol=1e-10),
        )
    if problem == "complexity":
        return OptConfig(method="newton", max_epochs=12)
    return OptConfig(
        method="newton",
        max_epochs=15,
        newton=NewtonConfig(
            damping=1e-10, damping_mode="diag-mean", inner="cg", inner_tol=1e-4,
            inner_max_iter=20000,
        ),
        stop=StopRules(loss_tol=1e-9),
    )


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    if "problem" not in raw:
        raise ConfigError("missing required key 'problem'")
    problem = raw["problem"]
    if problem not in PROBLEMS:
        raise ConfigError(
            f"unknown problem {problem!r}; valid options: {', '.join(PROBLEMS)}"
        )
    allowed = RUN_KEYS | SPEC_KEYS[problem]
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} for problem {problem!r}")

    base = base_dir or Path(".")
    extras: dict = {}
    if problem == "wave":
        spec = WaveSpec(nx=int(_take(raw, "nx", 25)), nt=int(_take(raw, "nt", 25)))
    elif problem == "cavity":
        spec = CavitySpec(
            n=int(_take(raw, "n", 64)),
            Re=float(_take(raw, "Re", 100.0)),
            mode="forward",
            lid_velocity=float(_take(raw, "lid_velocity", 1.0)),
            deferred_correction=bool(_take(raw, "deferred_correction", False)),
        )
    elif problem == "cavity_reconstruct":
        spec = CavitySpec(
            n=int(_take(raw, "n", 64)),
            Re=float(_take(raw, "Re", 100.0)),
            mode="reconstruct",
            k_reg=float(_take(raw, "k_reg", 1e-4)),
            lid_velocity=float(_take(raw, "lid_velocity", 1.0)),
            data_points=[tuple(p) for p in _take(raw, "data_points", [])],
            bc=_take(raw, "bc", None),
        )
        extras["n_data_from_forward"] = raw.get("n_data_from_forward")
        if not spec.data_points and not extras["n_data_from_forward"]:
            raise ConfigError(
                "cavity_reconstruct needs 'data_points' or 'n_data_from_forward'"
            )
    elif problem == "complexity":
        spec = ComplexitySpec(
            flow=_take(raw, "flow", "uniform"),
            n=int(_take(raw, "n", 64)),
            Re=float(_take(raw, "Re", 100.0)),
            k_reg=float(_take(raw, "k_reg", 1e-3)),
            n_samples=int(_take(raw, "n_samples", 16)),
            eps=float(_take(raw, "eps", 0.05)),
            seed=int(_take(raw, "seed", 0)),
            newton_epochs=int(_take(raw, "newton_epochs", 12)),
        )
        extras["k_cap"] = int(_take(raw, "k_cap", 64))
    else:  # tracer
        nx = int(_take(raw, "nx", 64))
        ny = int(_take(raw, "ny", 64))
        nt = int(_take(raw, "nt", 64))
        if "synthetic" in raw:
            syn = raw["synthetic"]
            for k in syn:
                if k not in ("velocity", "blob"):
                    raise ConfigError(f"tracer synthetic: unknown key {k!r}")
            grid = spatial_grid(nx, ny)
            blob = syn.get("blob", {})
            c0 = blob_field(
                grid,
                tuple(blob.get("center", (0.35, 0.5))),
                float(blob.get("radius", 0.2)),
                float(blob.get("amplitude", 1.0)),
            )
            c1 = advect_upwind(c0, tuple(syn.get("velocity", (0.2, 0.0))), nt)
            extras["synthetic_velocity"] = tuple(syn.get("velocity", (0.2, 0.0)))
        elif "c0" in raw and "c1" in raw:
            c0 = load_field(base / raw["c0"])
            c1 = load_field(base / raw["c1"])
        else:
            raise ConfigError("tracer needs either 'synthetic' or 'c0' and 'c1' paths")
        spec = TracerSpec(
            nx=nx,
            ny=ny,
            nt=nt,
            c0=c0,
            c1=c1,
            smooth_coef=float(_take(raw, "smooth_coef", 1e-3)),
            unsteady_velocity=bool(_take(raw, "unsteady_velocity", False)),
        )
        extras["warm_start"] = bool(_take(raw, "warm_start", True))

    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    optimizer = _parse_optimizer(raw.get("optimizer", {}), default_optimizer(problem))
    reference = raw.get("reference")
    return ExperimentConfig(
        problem=problem,
        spec=spec,
        optimizer=optimizer,
        output_dir=Path(_take(raw, "output_dir", "out")),
        seed=int(_take(raw, "seed", 0)),
        reference=None if reference is None else base / reference,
        dump_every=int(_take(raw, "dump_every", 0)),
        extras=extras,
        raw=dict(raw),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    return parse_config(raw, base_dir=path.parent)
