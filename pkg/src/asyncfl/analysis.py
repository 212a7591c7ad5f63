"""Event-log verifiers, the convergence-bound calculator, and metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MissingIntervalField(ValueError):
    pass


class UnmatchedSpan(ValueError):
    pass


class PreconditionViolated(ValueError):
    pass


class InvalidParams(ValueError):
    pass


@dataclass
class BoundParams:
    """Inputs of the ergodic convergence-rate bound.

    Preconditions (documented assumptions of the underlying analysis):
    unbiased client gradients, local/global variance bounded by sigma_l_sq
    and sigma_g_sq, squared gradient norms bounded by G, L-smooth
    objectives, and staleness never exceeding b. The step-size condition
    eta_q * Q <= 1/L must hold for every local step.
    """

    f0_minus_fstar: float
    L_smooth: float
    sigma_l_sq: float
    sigma_g_sq: float
    G: float
    Q: int
    eta_schedule: list
    b: int
    T: int


@dataclass
class VerifierReport:
    passed: bool
    max_staleness_count: int
    bound: int
    strict: bool                      # max count < bound (the proof's form)
    violating_spans: list = field(default_factory=list)
    lemma1_violations: list = field(default_factory=list)


def _aggregations(log):
    return [e for e in log if e["kind"] == "aggregated"]


def verify_aggregation_spacing(log, tick_tolerance: float = 0.0):
    """Check that no other aggregation falls inside each event's interval.

    For an aggregation at time T with interval I, any other aggregation
    strictly inside (T - I, T) is a violation; the left endpoint itself is
    compliant, and events within ``tick_tolerance`` of it are excused
    (discrete-tick quantization).
    """
    aggs = _aggregations(log)
    violations = []
    for e in aggs:
        if e.get("interval") is None:
            raise MissingIntervalField(
                "log has aggregations without intervals (not pace mode)"
            )
    times = [e["time"] for e in aggs]
    for e in aggs:
        lo = e["time"] - e["interval"] + tick_tolerance
        for t in times:
            if t != e["time"] and lo < t < e["time"]:
                violations.append(
                    {"time": e["time"], "interval": e["interval"],
                     "offending_time": t}
                )
    return violations


def training_spans(log):
    """(client, start, end) for every completed selection/report pair."""
    open_spans = {}
    spans = []
    for e in log:
        if e["kind"] == "selected":
            open_spans.setdefault(e["client_id"], []).append(e["time"])
        elif e["kind"] == "update_reported":
            cid = e["client_id"]
            if not open_spans.get(cid):
                raise UnmatchedSpan(f"report without selection for client {cid}")
            start = open_spans[cid].pop(0)
            spans.append((cid, start, e["time"]))
    return spans


def verify_staleness_bound(log, b: int) -> VerifierReport:
    """Count aggregations strictly inside every client training span.

    Passes when the maximum count m satisfies m <= b; also reports the
    strict form m < b.
    """
    agg_times = np.array([e["time"] for e in _aggregations(log)])
    m = 0
    violating = []
    for cid, start, end in training_spans(log):
        count = int(np.sum((agg_times > start) & (agg_times < end)))
        m = max(m, count)
        if count > b:
            inside = agg_times[(agg_times > start) & (agg_times < end)]
            violating.append(
                {"client_id": cid, "span": (start, end), "count": count,
                 "aggregation_times": inside.tolist()}
            )
    return VerifierReport(
        passed=not violating,
        max_staleness_count=m,
        bound=b,
        strict=m < b,
        violating_spans=violating,
    )


def convergence_bound(p: BoundParams) -> float:
    """Ergodic bound on the mean squared gradient norm over T server steps.

    2(f0 - f*) / (alpha T) + (L/2)(beta/alpha) sigma_l^2
      + 3 L^2 Q beta (b^2 + 1)(sigma_l^2 + sigma_g^2 + G)
    with alpha = sum of local step sizes and beta = sum of their squares.
    """
    etas = np.asarray(p.eta_schedule, dtype=np.float64)
    if (
        p.f0_minus_fstar < 0 or p.L_smooth <= 0 or p.sigma_l_sq < 0
        or p.sigma_g_sq < 0 or p.G < 0 or p.Q < 1 or p.b < 0 or p.T < 1
        or etas.size != p.Q or np.any(etas <= 0)
    ):
        raise InvalidParams("bound parameters out of range")
    if np.any(etas * p.Q > 1.0 / p.L_smooth + 1e-15):
        raise PreconditionViolated(
            "step-size condition violated: need eta*Q <= 1/L for every step"
        )
    alpha = float(np.sum(etas))
    beta = float(np.sum(etas * etas))
    term1 = 2.0 * p.f0_minus_fstar / (alpha * p.T)
    term2 = 0.5 * p.L_smooth * (beta / alpha) * p.sigma_l_sq
    term3 = (
        3.0 * p.L_smooth ** 2 * p.Q * beta * (p.b ** 2 + 1)
        * (p.sigma_l_sq + p.sigma_g_sq + p.G)
    )
    return term1 + term2 + term3


def metrics_summary(log, target_loss=None) -> dict:
    evaluations = [
        (e["time"], e["loss"]) for e in log if e["kind"] == "loss_evaluated"
    ]
    aggs = _aggregations(log)
    time_to_target = None
    if target_loss is not None:
        for t, loss in evaluations:
            if loss <= target_loss:
                time_to_target = t
                break
    involvements = {}
    for e in log:
        if e["kind"] == "selected":
            involvements[e["client_id"]] = involvements.get(e["client_id"], 0) + 1
    staleness_hist = {}
    for e in aggs:
        for c in e["contributors"]:
            s = c["staleness"]
            staleness_hist[s] = staleness_hist.get(s, 0) + 1
    blacklist_timeline = [
        {"time": e["time"], "client_id": e["client_id"]}
        for e in log
        if e["kind"] == "blacklisted"
    ]
    return {
        "time_to_target": time_to_target,
        "target_loss": target_loss,
        "n_aggregations": len(aggs),
        "final_version": aggs[-1]["new_version"] if aggs else 0,
        "final_loss": evaluations[-1][1] if evaluations else None,
        "involvements": {str(k): v for k, v in sorted(involvements.items())},
        "staleness_histogram": {
            str(k): v for k, v in sorted(staleness_hist.items())
        },
        "max_staleness": max(staleness_hist) if staleness_hist else 0,
        "blacklist_timeline": blacklist_timeline,
        "evaluations": [
            {"time": t, "loss": loss} for t, loss in evaluations
        ],
    }
