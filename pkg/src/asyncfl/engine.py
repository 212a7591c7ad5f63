"""Deterministic discrete-event simulator of the coordinator control loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import aggregation as agg
from . import selection as sel
from . import tasks
from .config import ScenarioConfig
from .core import ModelVector, NonFiniteInput, RngStream, rng_derive
from .tasks import Dataset, PartitionSpec


class InvalidParams(ValueError):
    pass


class NonPositiveLatency(ValueError):
    pass


class EmptyHoldout(ValueError):
    pass


# deterministic within-tick ordering of event kinds
KIND_RANK = {
    "update_reported": 0,
    "aggregated": 1,
    "blacklisted": 2,
    "loss_evaluated": 3,
    "selected": 4,
}


def assign_zipf_latencies(n, a, base_latency, rng: np.random.Generator):
    """Random rank permutation; the rank-i slowest client gets base * i^-a."""
    if n < 1 or a <= 0 or base_latency <= 0:
        raise InvalidParams("need n >= 1, a > 0, base_latency > 0")
    ranks = rng.permutation(n) + 1
    return {
        i: base_latency * float(ranks[i]) ** (-a) for i in range(n)
    }


def observe_latency(profile: sel.ClientProfile, observed: float):
    if observed <= 0:
        raise NonPositiveLatency("latency observations must be positive")
    profile.latency_history.append(float(observed))
    return profile


def evaluate(model: ModelVector, holdout: Dataset) -> float:
    if len(holdout) == 0:
        raise EmptyHoldout("holdout set is empty")
    return tasks.mean_loss(model.weights, holdout)


@dataclass
class RunResult:
    events: list
    model: ModelVector
    failed: bool
    config: ScenarioConfig
    optimum: np.ndarray = None
    holdout: Dataset = None


@dataclass
class _Pending:
    report_time: float
    client_id: int
    update: agg.LocalUpdate
    aggregate_rms: float
    observed: float


class Simulation:
    """One seeded scenario: builds clients and data, then runs the tick loop."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        root = RngStream(cfg.seed)
        t = cfg.task

        n_total = t.n_samples + t.holdout
        data, self.optimum = tasks.make_synthetic_task(
            t.kind, t.n_classes, t.dim, n_total, t.noise,
            rng_derive(root, "task"),
        )
        train = data.subset(np.arange(t.n_samples))
        self.train = train
        self.holdout = data.subset(np.arange(t.n_samples, n_total))

        self.latencies = assign_zipf_latencies(
            cfg.n_clients, cfg.latency.zipf_a, cfg.latency.base_latency,
            rng_derive(root, "zipf").generator(),
        )

        labels = self._partition_labels(train)
        weights = None
        if cfg.inverse_data_volume:
            w = np.array(
                [self.latencies[i] for i in range(cfg.n_clients)]
            )
            weights = w / w.sum()
        spec = PartitionSpec(
            n_clients=cfg.n_clients,
            concentration=np.full(
                max(labels.max() + 1, 1), cfg.concentration
            ),
            seed=rng_derive(root, "partition"),
        )
        assignment = tasks.dirichlet_partition(labels, spec, weights)
        self.assignment = assignment

        corrupt_rng = rng_derive(root, "corrupt").generator()
        n_corrupt = math.ceil(t.corruption_fraction * cfg.n_clients)
        self.corrupted = set(
            corrupt_rng.choice(
                cfg.n_clients, size=n_corrupt, replace=False
            ).tolist()
        ) if n_corrupt else set()

        self.datasets = {}
        for i in range(cfg.n_clients):
            shard = train.subset(assignment[i])
            if len(shard) == 0:
                # every selectable client must hold data; give it one sample
                shard = train.subset(np.array([i % len(train)]))
            if i in self.corrupted:
                shard = tasks.flip_labels(
                    shard, rng_derive(root, f"flip:{i}").generator()
                )
            self.datasets[i] = shard

        self.profiles = {
            i: sel.ClientProfile(
                id=i,
                sample_count=len(self.datasets[i]),
                true_latency=self.latencies[i],
                reliability_credits=cfg.policy.credits,
            )
            for i in range(cfg.n_clients)
        }
        self.sel_config = sel.SelectionConfig(
            policy=cfg.policy.name,
            concurrency_limit=cfg.concurrency,
            beta=cfg.policy.beta,
            ma_window=cfg.policy.ma_window,
            oort_alpha=cfg.policy.oort_alpha,
            oort_T=cfg.policy.oort_T,
            credits=cfg.policy.credits,
            pool_window=cfg.policy.pool_window,
            dbscan_eps=cfg.policy.dbscan_eps,
            dbscan_min_pts=cfg.policy.dbscan_min_pts,
        )

        dim = tasks.model_dim(t.kind, t.dim, t.n_classes)
        self.model = ModelVector(np.zeros(dim))
        self.pace = agg.PaceState(target_bound=cfg.aggregation.b)
        self.pending: list[_Pending] = []
        self.events: list[dict] = []
        self.failed = False
        self.last_eval = math.inf
        self.last_report = {}           # client -> (mean_loss, base_version)
        self._penalized = set()         # clients already charged for their
                                        # latest report

        self.select_rng = rng_derive(root, "select").generator()
        self.train_rng = {
            i: rng_derive(root, f"client:{i}/train").generator()
            for i in range(cfg.n_clients)
        }
        self.jitter_rng = {
            i: rng_derive(root, f"client:{i}/jitter").generator()
            for i in range(cfg.n_clients)
        }

    @staticmethod
    def _labels_for(data: Dataset):
        if data.kind == tasks.SOFTMAX:
            return data.y.astype(np.int64)
        # regression: pseudo-classes from decile bins of the target
        edges = np.quantile(data.y, np.linspace(0, 1, 11)[1:-1])
        return np.searchsorted(edges, data.y).astype(np.int64)

    def _partition_labels(self, train: Dataset):
        return self._labels_for(train)

    # ------------------------------------------------------------------
    # tick machinery
    # ------------------------------------------------------------------

    def _running(self):
        return [p for p in self.profiles.values() if p.busy]

    def _log(self, event: dict):
        self.events.append(event)

    def _deliver_reports(self, now: float):
        due = [p for p in self.pending if p.report_time <= now + 1e-12]
        if not due:
            return
        self.pending = [p for p in self.pending if p.report_time > now + 1e-12]
        # the server observes deliveries at tick granularity, so reports
        # landing within one tick are timestamped and ordered identically
        due.sort(key=lambda p: p.client_id)
        for p in due:
            prof = self.profiles[p.client_id]
            prof.busy = False
            observe_latency(prof, p.observed)
            prof.last_aggregate_rms = p.aggregate_rms
            self.pace.buffer.append(p.update)
            self.last_report[p.client_id] = (
                p.update.mean_loss, p.update.base_version
            )
            self._penalized.discard(p.client_id)
            self._log({
                "time": now,
                "kind": "update_reported",
                "base_version": p.update.base_version,
                "client_id": p.client_id,
                "mean_loss": p.update.mean_loss,
                "sample_count": p.update.sample_count,
            })

    def _aggregation_due(self, now: float):
        mode = self.cfg.aggregation.mode
        if mode == agg.MODE_PACE:
            latencies = {
                p.id: p.profiled_latency() for p in self._running()
            }
            fire, interval = agg.pace_decision(
                latencies, self.cfg.aggregation.b,
                self.pace.last_aggregation_time, now,
            )
            return fire, interval
        if mode == agg.MODE_BUFFERED:
            fire = agg.buffered_decision(
                len(self.pace.buffer), self.cfg.aggregation.goal
            )
            return fire, None
        return agg.sync_decision(
            len(self._running()), len(self.pace.buffer)
        ), None

    def _apply_aggregation(self, now: float, interval):
        try:
            self.model, event = agg.apply_aggregation(
                self.model, self.pace.buffer
            )
        except NonFiniteInput:
            # divergence: a delta or the combined model went non-finite
            self.failed = True
            return
        for cid, staleness in event.contributors:
            self.profiles[cid].staleness_history.append(staleness)
        self.pace.buffer = []
        self.pace.last_aggregation_time = now
        if not np.all(np.isfinite(self.model.weights)):
            self.failed = True
        self._log({
            "time": now,
            "kind": "aggregated",
            "contributors": [
                {"client_id": cid, "staleness": s}
                for cid, s in event.contributors
            ],
            "interval": interval,
            "new_version": self.model.version,
        })

    def _run_credit_update(self, now: float):
        v = self.model.version
        lo = v - self.cfg.policy.pool_window
        pool = {
            cid: loss
            for cid, (loss, bv) in self.last_report.items()
            if lo <= bv <= v and math.isfinite(loss)
            and not self.profiles[cid].blacklisted
        }
        before = {cid: self.profiles[cid].reliability_credits for cid in pool}
        newly = sel.credit_update(
            self.profiles, pool,
            eps=self.sel_config.dbscan_eps,
            min_pts=self.sel_config.dbscan_min_pts,
            exempt=self._penalized,
        )
        for cid in pool:
            if self.profiles[cid].reliability_credits < before[cid]:
                # a report is charged at most once while it sits in the window
                self._penalized.add(cid)
        for cid in sorted(newly):
            self._log({"time": now, "kind": "blacklisted", "client_id": cid})

    def _select(self, now: float):
        quota = self.cfg.concurrency - len(self._running())
        if quota <= 0:
            return
        if self.cfg.aggregation.mode == agg.MODE_SYNC and (
            self._running() or self.pace.buffer
        ):
            # synchronous rounds: new participants only at a round boundary
            return
        profiles = [self.profiles[i] for i in sorted(self.profiles)]
        policy = self.cfg.policy.name
        if policy == sel.POLICY_PISCES:
            chosen = sel.select_pisces(profiles, self.sel_config, quota)
        elif policy == sel.POLICY_OORT:
            chosen = sel.select_oort(
                profiles, self.sel_config, quota, self.select_rng
            )
        else:
            chosen = sel.select_random(profiles, quota, self.select_rng)
        # same-tick starts carry no ordering semantics; log them by id
        for cid in sorted(chosen):
            self._start_training(cid, now)

    def _start_training(self, cid: int, now: float):
        prof = self.profiles[cid]
        prof.busy = True
        result = tasks.local_sgd(
            self.model, self.datasets[cid], self.cfg.local.q_steps,
            self.cfg.local.eta, self.cfg.local.batch_size,
            self.train_rng[cid],
        )
        aggregate_rms, mean = tasks.loss_statistic(result)
        jitter = self.cfg.latency.jitter
        factor = 1.0
        if jitter > 0:
            factor = 1.0 + self.jitter_rng[cid].uniform(-jitter, jitter)
        observed = prof.true_latency * factor
        report_time = now + observed
        update = agg.LocalUpdate(
            client_id=cid,
            base_version=self.model.version,
            delta=result.delta,
            sample_count=result.sample_count,
            mean_loss=mean,
            report_time=report_time,
        )
        self.pending.append(
            _Pending(report_time, cid, update, aggregate_rms, observed)
        )
        self._log({
            "time": now,
            "kind": "selected",
            "base_version": self.model.version,
            "client_id": cid,
        })

    def run(self) -> RunResult:
        cfg = self.cfg
        tick = cfg.tick if cfg.tick is not None else 0.1
        horizon = cfg.horizon if cfg.horizon is not None else 0.0
        t_idx = 0
        while True:
            now = t_idx * tick
            self._deliver_reports(now)

            fire, interval = self._aggregation_due(now)
            if fire and self.pace.buffer:
                self._apply_aggregation(now, interval)
                if self.failed:
                    break
                self._run_credit_update(now)

            if t_idx % cfg.eval_every == 0:
                loss = evaluate(self.model, self.holdout)
                self.last_eval = loss
                self._log({
                    "time": now,
                    "kind": "loss_evaluated",
                    "loss": loss,
                    "version": self.model.version,
                })

            if now >= horizon - 1e-12:
                break
            if cfg.target_loss is not None and self.last_eval <= cfg.target_loss:
                break

            self._select(now)
            t_idx += 1

        return RunResult(
            events=self.events,
            model=self.model,
            failed=self.failed,
            config=cfg,
            optimum=self.optimum,
            holdout=self.holdout,
        )


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    """Build and run one scenario end to end."""
    return Simulation(cfg).run()
