"""Halting times of QR, power and inverse power iterations on random sample covariance matrices."""
from .algorithms import (
    HaltingRecord,
    DeflationRecord,
    deflation_times,
    epsilon_from_alpha,
    run_inverse_power,
    run_power,
    run_qr_halting,
)
from .ensembles import EnsembleSpec, RngStream, mp_quantiles, sample_scm, sample_unit_vector
from .estimators import GapLawReference, HaltingTimeRescaler, HaltingTimeTransformer
from .harness import ConfigError, ExperimentConfig, ResultBundle, emit, load_config, run_experiment
from .limit_law import EmpiricalDistribution, GapSample, RescaleConvention, ks_distance
from .linalg import SpectralData, hermitian_eig, qr_factor
from .spectral import (
    SpectralCoefficients,
    check_conditions,
    coefficients_for_projection,
    coefficients_for_qr,
    error_function,
    halting_time_continuous,
)

__version__ = "0.1.0"

__all__ = [
    "HaltingRecord",
    "DeflationRecord",
    "deflation_times",
    "epsilon_from_alpha",
    "run_inverse_power",
    "run_power",
    "run_qr_halting",
    "EnsembleSpec",
    "RngStream",
    "mp_quantiles",
    "sample_scm",
    "sample_unit_vector",
    "GapLawReference",
    "HaltingTimeRescaler",
    "HaltingTimeTransformer",
    "ConfigError",
    "ExperimentConfig",
    "ResultBundle",
    "emit",
    "load_config",
    "run_experiment",
    "EmpiricalDistribution",
    "GapSample",
    "RescaleConvention",
    "ks_distance",
    "SpectralData",
    "hermitian_eig",
    "qr_factor",
    "SpectralCoefficients",
    "check_conditions",
    "coefficients_for_projection",
    "coefficients_for_qr",
    "error_function",
    "halting_time_continuous",
]
