from .wave import WaveSpec, build_wave, wave_exact_solution, wave_exact_rate
from .cavity import (
    CavitySpec,
    build_cavity_forward,
    build_cavity_reconstruct,
    cavity_velocity_error,
    divergence_inf_norm,
    sample_data_points,
    velocity_dof_indices,
)
from .complexity import (
    ComplexitySpec,
    KminResult,
    complexity_E,
    complexity_Kmin,
    reference_flow,
)
from .tracer import (
    TracerSpec,
    advect_upwind,
    blob_field,
    build_tracer,
    estimate_translation,
    march_trajectory,
    tracer_warm_start,
)

__all__ = [
    "WaveSpec",
    "build_wave",
    "wave_exact_solution",
    "wave_exact_rate",
    "CavitySpec",
    "build_cavity_forward",
    "build_cavity_reconstruct",
    "cavity_velocity_error",
    "divergence_inf_norm",
    "sample_data_points",
    "velocity_dof_indices",
    "ComplexitySpec",
    "KminResult",
    "complexity_E",
    "complexity_Kmin",
    "reference_flow",
    "TracerSpec",
    "advect_upwind",
    "blob_field",
    "build_tracer",
    "estimate_translation",
    "march_trajectory",
    "tracer_warm_start",
]
