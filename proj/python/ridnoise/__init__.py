"""Noise-robust inverse design with weighted conditional normalizing flows."""

from ._ridnoise import (
    DataError,
    Flow,
    NumericalError,
    ShapeError,
    default_config,
    derive_seed,
    generate,
    resimulation_error,
    robust_weights,
    run_cli,
    sample_robustness,
    simulate,
    test_targets,
    weights_from_robustness,
    welch_t_test,
)

__all__ = [
    "DataError",
    "Flow",
    "NumericalError",
    "ShapeError",
    "default_config",
    "derive_seed",
    "generate",
    "resimulation_error",
    "robust_weights",
    "run_cli",
    "sample_robustness",
    "simulate",
    "test_targets",
    "weights_from_robustness",
    "welch_t_test",
]
