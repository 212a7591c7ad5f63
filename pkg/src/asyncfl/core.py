"""Shared numeric primitives: model vectors, deterministic RNG streams."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


class EmptyInput(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class NonPositiveWeight(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


@dataclass(frozen=True)
class ModelVector:
    """Dense weight vector plus a monotone aggregation counter."""

    weights: np.ndarray
    version: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise NonFiniteInput("model weights must be finite")
        if self.version < 0:
            raise ValueError("version must be non-negative")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def advanced(self, new_weights: np.ndarray) -> "ModelVector":
        """Next model iterate: weights replaced, version bumped by one."""
        if new_weights.shape != self.weights.shape:
            raise DimensionMismatch("weight dimension changed across versions")
        return ModelVector(new_weights, self.version + 1)


@dataclass(frozen=True)
class RngStream:
    """Deterministic, platform-independent random stream.

    The underlying generator is counter-based (numpy Philox) keyed by
    SHA-256 of ``(seed, stream_id)``, so identical descriptors always
    reproduce identical draw sequences and distinct stream ids are
    statistically independent.
    """

    seed: int
    stream_id: str = "root"

    def _key(self) -> int:
        digest = hashlib.sha256(
            f"{self.seed}:{self.stream_id}".encode("utf-8")
        ).digest()
        return int.from_bytes(digest[:16], "little")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=self._key()))


def rng_derive(parent: RngStream, label: str) -> RngStream:
    """Child stream that is a pure function of the parent descriptor and label."""
    return RngStream(parent.seed, f"{parent.stream_id}/{label}")


def weighted_mean(vectors, weights) -> np.ndarray:
    """Weighted mean of equal-dimension vectors, accumulated in ascending index order."""
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    weights = [float(w) for w in weights]
    if not vectors:
        raise EmptyInput("no vectors to average")
    if len(vectors) != len(weights):
        raise DimensionMismatch(
            f"{len(vectors)} vectors vs {len(weights)} weights"
        )
    dim = vectors[0].shape
    acc = np.zeros(dim, dtype=np.float64)
    total = 0.0
    for v, w in zip(vectors, weights):
        if v.shape != dim:
            raise DimensionMismatch(f"vector shape {v.shape} != {dim}")
        if w <= 0:
            raise NonPositiveWeight(f"weight {w} is not positive")
        acc += w * v
        total += w
    return acc / total


def l2_norm_sq(v) -> float:
    """Squared Euclidean norm."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFiniteInput("vector has non-finite entries")
    return float(np.dot(v, v))
