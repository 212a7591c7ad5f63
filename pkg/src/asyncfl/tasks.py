"""Synthetic learning tasks, non-IID partitioning, and the local trainer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ModelVector, RngStream
from . import kernels

LINEAR = "linear-regression"
SOFTMAX = "softmax-classification"


class EmptyLabels(ValueError):
    pass


class InvalidConcentration(ValueError):
    pass


class InvalidShape(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class NonPositiveLearningRate(ValueError):
    pass


class EmptyLossSet(ValueError):
    pass


@dataclass
class Dataset:
    """Feature matrix plus targets for one of the two synthetic task kinds."""

    X: np.ndarray                  # (n, dim) float64
    y: np.ndarray                  # (n,) float64 targets or int64 class ids
    kind: str = LINEAR
    n_classes: int = 0

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.kind, self.n_classes)


@dataclass
class PartitionSpec:
    n_clients: int
    concentration: np.ndarray      # per-class Dirichlet concentration
    seed: RngStream = field(default_factory=lambda: RngStream(0))


@dataclass
class TrainResult:
    delta: np.ndarray
    per_sample_losses: np.ndarray  # evaluated at the received base model
    sample_count: int
    q_steps: int


def model_dim(kind: str, dim: int, n_classes: int) -> int:
    return dim if kind == LINEAR else n_classes * dim


def make_synthetic_task(kind, n_classes, dim, n_samples, noise, seed: RngStream):
    """Generate a dataset with known structure.

    Linear regression: ``y = X w* + noise`` with ``w* ~ N(0, 1)``; returns
    the generating weights. Softmax classification: Gaussian clusters around
    per-class means; returns the flattened class-means matrix (the
    generating parameters, not a trained optimum).
    """
    if dim < 1 or n_samples < 1:
        raise InvalidShape("dim and n_samples must be >= 1")
    rng = seed.generator()
    if kind == LINEAR:
        X = rng.standard_normal((n_samples, dim))
        w_star = rng.standard_normal(dim)
        y = X @ w_star + noise * rng.standard_normal(n_samples)
        return Dataset(X, y, LINEAR, 0), w_star
    if kind == SOFTMAX:
        if n_classes < 2:
            raise InvalidShape("softmax task needs n_classes >= 2")
        means = 2.0 * rng.standard_normal((n_classes, dim))
        y = rng.integers(0, n_classes, size=n_samples)
        X = means[y] + max(noise, 0.25) * rng.standard_normal((n_samples, dim))
        return Dataset(X, y.astype(np.int64), SOFTMAX, n_classes), means.ravel()
    raise InvalidShape(f"unknown task kind {kind!r}")


def dirichlet_partition(labels, spec: PartitionSpec, client_weights=None):
    """Split sample indices across clients with Dirichlet class proportions.

    Each client draws a class-proportion vector from
    ``Dirichlet(concentration)``; each class is then divided among clients
    in proportion to those draws (optionally biased by ``client_weights``,
    used to couple data volume with client speed). Every sample lands on
    exactly one client.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyLabels("no labels to partition")
    conc = np.asarray(spec.concentration, dtype=np.float64)
    if conc.ndim != 1 or np.any(conc <= 0):
        raise InvalidConcentration("concentration entries must be positive")
    n_classes = conc.shape[0]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise EmptyLabels("label outside declared class range")
    n = spec.n_clients
    rng = spec.seed.generator()

    props = rng.dirichlet(conc, size=n)          # (n_clients, n_classes)
    if client_weights is not None:
        w = np.asarray(client_weights, dtype=np.float64)
        props = props * w[:, None]

    assignment = {i: [] for i in range(n)}
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        rng.shuffle(idx)
        share = props[:, c]
        total = share.sum()
        if total <= 0:
            share = np.full(n, 1.0 / n)
        else:
            share = share / total
        # largest-remainder rounding so counts sum exactly to the class size
        raw = share * idx.size
        counts = np.floor(raw).astype(np.int64)
        rem = idx.size - counts.sum()
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:rem]] += 1
        pos = 0
        for i in range(n):
            assignment[i].extend(idx[pos:pos + counts[i]].tolist())
            pos += counts[i]
    return {
        i: np.array(sorted(assignment[i]), dtype=np.int64) for i in range(n)
    }


def flip_labels(data: Dataset, rng: np.random.Generator) -> Dataset:
    """Corrupt a client's shard by randomly flipping every label."""
    if data.kind == SOFTMAX:
        shift = rng.integers(1, data.n_classes, size=len(data))
        y = (data.y + shift) % data.n_classes
        return Dataset(data.X, y.astype(np.int64), SOFTMAX, data.n_classes)
    # regression analog: negate targets
    return Dataset(data.X, -data.y, data.kind, data.n_classes)


def _expand_etas(eta, q_steps):
    etas = np.asarray(
        [eta] * q_steps if np.isscalar(eta) else list(eta), dtype=np.float64
    )
    if etas.shape[0] != q_steps:
        raise InvalidShape("learning-rate schedule length != q_steps")
    if np.any(etas <= 0):
        raise NonPositiveLearningRate("all learning rates must be > 0")
    return etas


def per_sample_losses(weights: np.ndarray, data: Dataset) -> np.ndarray:
    if data.kind == LINEAR:
        return kernels.linreg_losses(weights, data.X, data.y)
    W = weights.reshape(data.n_classes, data.X.shape[1])
    return kernels.softmax_losses(W, data.X, data.y)


def local_sgd(base: ModelVector, data: Dataset, q_steps, eta, batch_size,
              rng: np.random.Generator) -> TrainResult:
    """Run Q mini-batch SGD steps from the base model.

    Per-sample losses are measured at the base model before any step, so
    loss statistics are comparable across clients holding the same
    version. Deterministic given the generator state.
    """
    if len(data) == 0:
        raise EmptyDataset("client dataset is empty")
    if q_steps < 1 or batch_size < 1:
        raise InvalidShape("q_steps and batch_size must be >= 1")
    etas = _expand_etas(eta, q_steps)

    losses = per_sample_losses(base.weights, data)
    batch_idx = rng.integers(0, len(data), size=(q_steps, batch_size))

    if data.kind == LINEAR:
        w_end = kernels.linreg_sgd(base.weights.copy(), data.X, data.y,
                                   batch_idx, etas)
        delta = w_end - base.weights
    else:
        W0 = base.weights.reshape(data.n_classes, data.X.shape[1]).copy()
        W_end = kernels.softmax_sgd(W0, data.X, data.y, batch_idx, etas)
        delta = (W_end - W0).ravel()
    return TrainResult(delta, losses, len(data), q_steps)


def loss_statistic(result: TrainResult):
    """Data-quality statistic: (|B| * sqrt(mean squared loss), mean loss)."""
    losses = np.asarray(result.per_sample_losses, dtype=np.float64)
    if losses.size == 0:
        raise EmptyLossSet("no per-sample losses")
    with np.errstate(over="ignore"):  # diverging runs may overflow to inf
        aggregate = losses.size * math.sqrt(float(np.mean(losses * losses)))
    return aggregate, float(np.mean(losses))


def mean_loss(weights: np.ndarray, data: Dataset) -> float:
    if len(data) == 0:
        raise EmptyDataset("empty holdout")
    return float(np.mean(per_sample_losses(weights, data)))


def export_partition_csv(assignment, labels) -> str:
    """CSV text with header sample_id,client_id,label."""
    labels = np.asarray(labels)
    rows = ["sample_id,client_id,label"]
    pairs = []
    for cid, idx in assignment.items():
        for s in idx:
            pairs.append((int(s), int(cid)))
    for s, cid in sorted(pairs):
        rows.append(f"{s},{cid},{labels[s]}")
    return "\n".join(rows) + "\n"
