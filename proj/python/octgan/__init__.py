"""Wavelet style GAN toolkit for anterior-segment OCT B-scans."""

from ._octgan import (
    ConfigError,
    Error,
    Generator,
    IoError,
    ParameterError,
    ShapeError,
    binomial_test,
    dwt2,
    fid,
    fleiss_kappa,
    frechet_distance,
    iwt2,
    perceptual_distance,
    phantoms,
    run_cli,
    score_rater,
    sr_upscale,
    upsample,
)

__all__ = [
    "ConfigError",
    "Error",
    "Generator",
    "IoError",
    "ParameterError",
    "ShapeError",
    "binomial_test",
    "dwt2",
    "fid",
    "fleiss_kappa",
    "frechet_distance",
    "iwt2",
    "perceptual_distance",
    "phantoms",
    "run_cli",
    "score_rater",
    "sr_upscale",
    "upsample",
]
