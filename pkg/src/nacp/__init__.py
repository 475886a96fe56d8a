"""Conformal prediction calibration that is robust to noisy calibration labels."""

from .core import (
    ConformalError,
    CoverageSpec,
    GeneralNoise,
    LabeledSet,
    NoiseModel,
    ProbabilityMatrix,
    UniformNoise,
    uniform_noise_as_matrix,
    validate_probability_matrix,
)
from .scores import ScoreParams, prediction_mask, prediction_set, score, score_all
from .calibrate import (
    CalibrationCurve,
    InvertedNoise,
    ThresholdResult,
    build_curve,
    empirical_quantile,
    invert_noise_matrix,
    nacp_general,
    nacp_uniform,
    search_bounds,
    standard_cp,
)
from .guarantees import (
    AdjustedLevel,
    ClassMarginals,
    CorrectionTerm,
    apply_correction,
    c_n_estimate,
    delta_acnl,
    delta_crcp,
    delta_nacp,
)
from .synth import SynthConfig, generate, inject_noise
from .harness import ExperimentConfig, TrialReport, coverage_and_size, run_experiment
from .estimators import NoiseAwareConformalClassifier, SplitConformalClassifier

__version__ = "0.1.0"

__all__ = [
    "AdjustedLevel",
    "CalibrationCurve",
    "ClassMarginals",
    "ConformalError",
    "CorrectionTerm",
    "CoverageSpec",
    "ExperimentConfig",
    "GeneralNoise",
    "InvertedNoise",
    "LabeledSet",
    "NoiseAwareConformalClassifier",
    "NoiseModel",
    "ProbabilityMatrix",
    "ScoreParams",
    "SplitConformalClassifier",
    "SynthConfig",
    "ThresholdResult",
    "TrialReport",
    "UniformNoise",
    "apply_correction",
    "build_curve",
    "c_n_estimate",
    "coverage_and_size",
    "delta_acnl",
    "delta_crcp",
    "delta_nacp",
    "empirical_quantile",
    "generate",
    "inject_noise",
    "invert_noise_matrix",
    "nacp_general",
    "nacp_uniform",
    "prediction_mask",
    "prediction_set",
    "run_experiment",
    "score",
    "score_all",
    "search_bounds",
    "standard_cp",
    "uniform_noise_as_matrix",
    "validate_probability_matrix",
]
