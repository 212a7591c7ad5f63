"""Deterministic simulator and analysis toolkit for asynchronous federated learning."""

from .core import ModelVector, RngStream, l2_norm_sq, rng_derive, weighted_mean

__all__ = [
    "ModelVector",
    "RngStream",
    "l2_norm_sq",
    "rng_derive",
    "weighted_mean",
]

__version__ = "0.1.0"
