"""Scenario configuration: schema, defaults, parsing, and the resolved echo."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict

import yaml

from .aggregation import MODE_PACE, MODE_BUFFERED, MODE_SYNC
from .selection import POLICY_PISCES, POLICY_OORT, POLICY_RANDOM
from .tasks import LINEAR, SOFTMAX


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, field_name, message):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class TaskConfig:
    kind: str = LINEAR
    dim: int = 5
    n_classes: int = 10
    n_samples: int = 1000
    noise: float = 0.0
    corruption_fraction: float = 0.0
    holdout: int = 200


@dataclass
class LatencyConfig:
    zipf_a: float = 1.2
    base_latency: float = 10.0
    jitter: float = 0.0


@dataclass
class PolicyConfig:
    name: str = POLICY_PISCES
    beta: float = 0.5
    ma_window: int = 5
    oort_alpha: float = 2.0
    oort_T: float | None = None        # default 0.2 * base_latency
    credits: int = 3
    pool_window: int = 5
    dbscan_eps: float | None = None
    dbscan_min_pts: int | None = None


@dataclass
class AggregationConfig:
    mode: str = MODE_PACE
    b: int | None = None               # default: the concurrency limit
    goal: int = 6                      # buffered-mode aggregation goal K


@dataclass
class LocalConfig:
    q_steps: int = 4
    eta: float = 0.05
    batch_size: int = 32


@dataclass
class ScenarioConfig:
    n_clients: int = 0
    concurrency: int = 20
    concentration: float = 1.0
    inverse_data_volume: bool = False
    task: TaskConfig = field(default_factory=TaskConfig)
    latency: LatencyConfig = field(default_factory=LatencyConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    local: LocalConfig = field(default_factory=LocalConfig)
    tick: float | None = None          # default base_latency / 100
    horizon: float | None = None       # default 50 * base_latency
    target_loss: float | None = None
    eval_every: int = 10               # evaluation period in ticks
    seed: int = 0

    def resolved(self) -> "ScenarioConfig":
        """Copy with every default materialized; idempotent."""
        cfg = parse_scenario(asdict(self))
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


_SECTIONS = {
    "task": TaskConfig,
    "latency": LatencyConfig,
    "policy": PolicyConfig,
    "aggregation": AggregationConfig,
    "local": LocalConfig,
}


def _build_section(name, cls, data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError(f"section {name!r} must be a mapping")
    known = cls().__dict__
    extra = set(data) - set(known)
    if extra:
        raise ParseError(f"unknown fields in {name!r}: {sorted(extra)}")
    return cls(**{**known, **data})


def parse_scenario(source) -> ScenarioConfig:
    """Parse a scenario document (YAML text, path, or dict) and fill defaults."""
    if isinstance(source, dict):
        raw = dict(source)
    else:
        text = source
        if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
            with open(source) as fh:
                text = fh.read()
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ParseError(f"invalid scenario document: {exc}") from exc
        if not isinstance(raw, dict):
            raise ParseError("scenario document must be a mapping")

    top = {
        f: raw.pop(f)
        for f in list(raw)
        if f not in _SECTIONS
    }
    sections = {
        name: _build_section(name, cls, raw.get(name))
        for name, cls in _SECTIONS.items()
    }
    known_top = {
        "n_clients", "concurrency", "concentration", "inverse_data_volume",
        "tick", "horizon", "target_loss", "eval_every", "seed",
    }
    extra = set(top) - known_top
    if extra:
        raise ParseError(f"unknown top-level fields: {sorted(extra)}")

    if "n_clients" not in top or top["n_clients"] is None:
        raise ValidationError("n_clients", "required")
    cfg = ScenarioConfig(**top, **sections)

    # materialize defaults
    if cfg.tick is None:
        cfg.tick = cfg.latency.base_latency / 100.0
    if cfg.horizon is None:
        cfg.horizon = 50.0 * cfg.latency.base_latency
    if cfg.aggregation.b is None:
        cfg.aggregation.b = cfg.concurrency
    if cfg.policy.oort_T is None:
        cfg.policy.oort_T = 0.2 * cfg.latency.base_latency

    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig):
    checks = [
        ("n_clients", cfg.n_clients >= 1, ">= 1 required"),
        ("concurrency", cfg.concurrency >= 1, ">= 1 required"),
        ("concentration", cfg.concentration > 0, "must be > 0"),
        ("tick", cfg.tick > 0, "must be > 0"),
        ("horizon", cfg.horizon > 0, "must be > 0"),
        ("eval_every", cfg.eval_every >= 1, ">= 1 required"),
        ("latency.zipf_a", cfg.latency.zipf_a > 0, "must be > 0"),
        ("latency.base_latency", cfg.latency.base_latency > 0, "must be > 0"),
        ("latency.jitter",
         0 <= cfg.latency.jitter < 1, "must lie in [0, 1)"),
        ("task.kind", cfg.task.kind in (LINEAR, SOFTMAX), "unknown task kind"),
        ("task.dim", cfg.task.dim >= 1, ">= 1 required"),
        ("task.n_samples", cfg.task.n_samples >= 1, ">= 1 required"),
        ("task.holdout", cfg.task.holdout >= 1, ">= 1 required"),
        ("task.corruption_fraction",
         0 <= cfg.task.corruption_fraction < 1, "must lie in [0, 1)"),
        ("policy.name",
         cfg.policy.name in (POLICY_PISCES, POLICY_OORT, POLICY_RANDOM),
         "unknown policy"),
        ("policy.beta", cfg.policy.beta > 0, "must be > 0"),
        ("policy.ma_window", cfg.policy.ma_window >= 1, ">= 1 required"),
        ("policy.oort_alpha", cfg.policy.oort_alpha >= 0, "must be >= 0"),
        ("policy.oort_T", cfg.policy.oort_T > 0, "must be > 0"),
        ("policy.credits", cfg.policy.credits >= 1, ">= 1 required"),
        ("policy.pool_window", cfg.policy.pool_window >= 1, ">= 1 required"),
        ("aggregation.mode",
         cfg.aggregation.mode in (MODE_PACE, MODE_BUFFERED, MODE_SYNC),
         "unknown aggregation mode"),
        ("aggregation.b", cfg.aggregation.b >= 1, ">= 1 required"),
        ("aggregation.goal", cfg.aggregation.goal >= 1, ">= 1 required"),
        ("local.q_steps", cfg.local.q_steps >= 1, ">= 1 required"),
        ("local.batch_size", cfg.local.batch_size >= 1, ">= 1 required"),
    ]
    for name, ok, msg in checks:
        if not ok:
            raise ValidationError(name, msg)
    if cfg.task.kind == SOFTMAX and cfg.task.n_classes < 2:
        raise ValidationError("task.n_classes", ">= 2 required for softmax")
