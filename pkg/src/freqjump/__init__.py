"""Frequency-jump state expansion of a levitated particle in a hybrid optical/Paul trap."""

from .analytic import ThermalInit, compression_variance, coherent_variance, heating_variance
from .config import ExperimentConfig
from .dsp import PipelineConfig
from .dynamics import ProtocolSchedule, run_ensemble, run_protocol
from .floquet import FloquetSolution, characteristic_exponent, floquet_coefficients, solution_for_trap
from .phys import OpticalTrap, ParticleParams, PaulTrap, reported_params

__all__ = [
    "OpticalTrap",
    "ParticleParams",
    "PaulTrap",
    "reported_params",
    "ThermalInit",
    "coherent_variance",
    "heating_variance",
    "compression_variance",
    "FloquetSolution",
    "characteristic_exponent",
    "floquet_coefficients",
    "solution_for_trap",
    "ProtocolSchedule",
    "run_protocol",
    "run_ensemble",
    "PipelineConfig",
    "ExperimentConfig",
]
