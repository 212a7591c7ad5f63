"""Aggregation controllers and the federated-averaging combine step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ModelVector, weighted_mean


class InvalidBound(ValueError):
    pass


class InvalidGoal(ValueError):
    pass


class EmptyBuffer(ValueError):
    pass


class VersionOrderViolation(ValueError):
    pass


MODE_PACE = "pace"
MODE_BUFFERED = "buffered"
MODE_SYNC = "sync"


@dataclass
class LocalUpdate:
    client_id: int
    base_version: int
    delta: np.ndarray
    sample_count: int
    mean_loss: float
    report_time: float


@dataclass
class PaceState:
    last_aggregation_time: float = 0.0
    target_bound: int = 1
    buffer: list = field(default_factory=list)


@dataclass
class AggregationEvent:
    time: float
    new_version: int
    interval: float | None              # absent for non-pace modes
    contributors: list                  # [(client_id, staleness), ...]


def pace_decision(running_latencies, b: int, t_last: float, now: float):
    """Aggregate once more than L_max / b time elapsed since the last one.

    L_max is the largest profiled latency among running clients; with no
    client running the interval is infinite and the answer is no.
    """
    if b < 1:
        raise InvalidBound("staleness bound must be >= 1")
    if not running_latencies:
        return False, math.inf
    interval = max(running_latencies.values()) / b
    return (now - t_last) > interval, interval


def buffered_decision(buffer_size: int, goal: int) -> bool:
    """FedBuff-style rule: aggregate when the buffer reaches the goal."""
    if goal < 1:
        raise InvalidGoal("aggregation goal must be >= 1")
    return buffer_size >= goal


def sync_decision(outstanding: int, buffer_size: int) -> bool:
    """Synchronous barrier: aggregate only when every participant reported."""
    return outstanding == 0 and buffer_size > 0


def staleness_of(base_version: int, applied_version: int) -> int:
    """Aggregations applied between download and application, excluding the applying one."""
    if applied_version < base_version + 1:
        raise VersionOrderViolation(
            f"applied version {applied_version} must exceed base {base_version}"
        )
    return applied_version - 1 - base_version


def apply_aggregation(global_model: ModelVector, buffer):
    """Federated averaging with server learning rate 1.

    New weights are the old weights plus the sample-count-weighted mean of
    buffered deltas; the version advances by one and each contributor's
    staleness is recorded.
    """
    if not buffer:
        raise EmptyBuffer("cannot aggregate an empty buffer")
    mean_delta = weighted_mean(
        [u.delta for u in buffer], [u.sample_count for u in buffer]
    )
    new_model = global_model.advanced(global_model.weights + mean_delta)
    contributors = [
        (u.client_id, staleness_of(u.base_version, new_model.version))
        for u in buffer
    ]
    event = AggregationEvent(
        time=math.nan, new_version=new_model.version, interval=None,
        contributors=contributors,
    )
    return new_model, event
