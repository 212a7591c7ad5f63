"""Participant-selection policies and robustness blacklisting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class InvalidWindow(ValueError):
    pass


class NegativeInput(ValueError):
    pass


class NonPositiveLatency(ValueError):
    pass


class EmptyInput(ValueError):
    pass


POLICY_PISCES = "pisces"
POLICY_OORT = "oort"
POLICY_RANDOM = "random"

# outlier clustering is meaningless on pools smaller than this
MIN_POOL_SIZE = 3


@dataclass
class ClientProfile:
    id: int
    sample_count: int
    true_latency: float = 1.0
    latency_history: list = field(default_factory=list)
    staleness_history: list = field(default_factory=list)
    last_aggregate_rms: float | None = None
    reliability_credits: int = 3
    blacklisted: bool = False
    busy: bool = False

    def profiled_latency(self) -> float:
        """Mean of observed latencies; configured latency before any observation."""
        if self.latency_history:
            return float(np.mean(self.latency_history))
        return self.true_latency


@dataclass
class SelectionConfig:
    policy: str = POLICY_PISCES
    concurrency_limit: int = 20
    beta: float = 0.5
    ma_window: int = 5
    oort_alpha: float = 2.0
    oort_T: float = 1.0
    credits: int = 3
    pool_window: int = 5
    dbscan_eps: float | None = None       # None: 2 x MAD of the pool
    dbscan_min_pts: int | None = None     # None: max(2, ceil(10% of pool))


def staleness_estimate(history, k: int) -> float:
    """Moving average of the most recent k staleness observations (0 cold start)."""
    if k < 1:
        raise InvalidWindow("window must be >= 1")
    if not len(history):
        return 0.0
    recent = list(history)[-k:]
    return float(sum(recent)) / len(recent)


def pisces_utility(aggregate_rms: float, tau_est: float, beta: float) -> float:
    """Data-quality term discounted by estimated staleness: u / (tau + 1)^beta."""
    if aggregate_rms < 0 or tau_est < 0:
        raise NegativeInput("aggregate_rms and tau_est must be non-negative")
    if beta <= 0:
        raise NegativeInput("beta must be > 0")
    return aggregate_rms / (tau_est + 1.0) ** beta


def oort_utility(aggregate_rms: float, t_i: float, T: float,
                 alpha: float) -> float:
    """Data-quality term penalized when the client is slower than the target T."""
    if t_i <= 0 or T <= 0:
        raise NonPositiveLatency("latencies must be positive")
    if aggregate_rms < 0 or alpha < 0:
        raise NegativeInput("aggregate_rms and alpha must be non-negative")
    if t_i <= T:
        return aggregate_rms
    return aggregate_rms * (T / t_i) ** alpha


def _eligible(profiles):
    return [p for p in profiles if not p.blacklisted and not p.busy]


def select_pisces(profiles, config: SelectionConfig, quota: int):
    """Top-quota clients by utility; never-measured clients explored first."""
    if quota <= 0:
        return []
    pool = _eligible(profiles)
    unmeasured = sorted(
        (p for p in pool if p.last_aggregate_rms is None), key=lambda p: p.id
    )
    chosen = [p.id for p in unmeasured[:quota]]
    slots = quota - len(chosen)
    if slots > 0:
        measured = [p for p in pool if p.last_aggregate_rms is not None]
        scored = [
            (
                pisces_utility(
                    p.last_aggregate_rms,
                    staleness_estimate(p.staleness_history, config.ma_window),
                    config.beta,
                ),
                p.id,
            )
            for p in measured
        ]
        scored.sort(key=lambda t: (-t[0], t[1]))
        chosen.extend(i for _, i in scored[:slots])
    return chosen


def select_oort(profiles, config: SelectionConfig, quota: int,
                rng: np.random.Generator):
    """Sample without replacement, probability proportional to Oort utility."""
    if quota <= 0:
        return []
    pool = _eligible(profiles)
    if not pool:
        return []
    measured = [
        oort_utility(p.last_aggregate_rms, p.profiled_latency(),
                     config.oort_T, config.oort_alpha)
        for p in pool
        if p.last_aggregate_rms is not None
    ]
    # never-measured clients share the best observed utility (exploration)
    default = max(measured) if measured else 1.0
    utils = np.array(
        [
            default
            if p.last_aggregate_rms is None
            else oort_utility(p.last_aggregate_rms, p.profiled_latency(),
                              config.oort_T, config.oort_alpha)
            for p in pool
        ],
        dtype=np.float64,
    )
    ids = [p.id for p in pool]
    chosen = []
    remaining = list(range(len(pool)))
    while remaining and len(chosen) < quota:
        mass = utils[remaining]
        total = mass.sum()
        if total <= 0:
            probs = np.full(len(remaining), 1.0 / len(remaining))
        else:
            probs = mass / total
        pick = rng.choice(len(remaining), p=probs)
        chosen.append(ids[remaining[pick]])
        remaining.pop(pick)
    return chosen


def select_random(profiles, quota: int, rng: np.random.Generator):
    if quota <= 0:
        return []
    pool = sorted(_eligible(profiles), key=lambda p: p.id)
    if not pool:
        return []
    k = min(quota, len(pool))
    picks = rng.choice(len(pool), size=k, replace=False)
    return [pool[i].id for i in picks]


def dbscan_1d(points, eps: float, min_pts: int):
    """DBSCAN on the real line. Returns (clusters, outliers) as index sets.

    A point is core when its closed eps-neighborhood (self included)
    contains at least min_pts points; clusters are density-connected
    components; border points attach to the cluster of the first core
    neighbor in index order.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.size
    if n == 0:
        raise EmptyInput("no points")
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    neighbors = [
        np.flatnonzero(np.abs(pts - pts[i]) <= eps) for i in range(n)
    ]
    core = [len(nb) >= min_pts for nb in neighbors]
    label = [-1] * n
    clusters = []
    for i in range(n):
        if label[i] != -1 or not core[i]:
            continue
        cid = len(clusters)
        clusters.append(set())
        queue = [i]
        label[i] = cid
        while queue:
            j = queue.pop()
            clusters[cid].add(j)
            if not core[j]:
                continue
            for nb in neighbors[j]:
                if label[nb] == -1:
                    label[nb] = cid
                    queue.append(int(nb))
    outliers = {i for i in range(n) if label[i] == -1}
    return clusters, outliers


def _default_eps(losses: np.ndarray) -> float:
    mad = float(np.median(np.abs(losses - np.median(losses))))
    return max(2.0 * mad, 1e-6)


def credit_update(profiles_by_id, pooled_losses, eps=None, min_pts=None,
                  exempt=frozenset()):
    """Deduct one reliability credit from each loss outlier in the pool.

    Clients whose credits reach zero are blacklisted and returned. Pools
    smaller than MIN_POOL_SIZE are skipped. Clients in ``exempt`` still
    shape the clustering but are not charged (the caller may use this to
    avoid charging the same report twice).
    """
    ids = sorted(pooled_losses)
    if len(ids) < MIN_POOL_SIZE:
        return set()
    losses = np.array([pooled_losses[i] for i in ids], dtype=np.float64)
    if eps is None:
        eps = _default_eps(losses)
    if min_pts is None:
        min_pts = max(2, math.ceil(0.1 * len(ids)))
    _, outliers = dbscan_1d(losses, eps, min_pts)
    newly = set()
    for pos in sorted(outliers):
        p = profiles_by_id[ids[pos]]
        if p.blacklisted or p.id in exempt:
            continue
        p.reliability_credits -= 1
        if p.reliability_credits <= 0:
            p.reliability_credits = 0
            p.blacklisted = True
            newly.add(p.id)
    return newly
