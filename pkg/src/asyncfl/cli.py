"""Command-line entry point and run-artifact serialization."""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import analysis, engine, tasks
from .config import ParseError, ScenarioConfig, ValidationError, parse_scenario


class LogParseError(ValueError):
    pass


EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


def events_to_ldjson(events) -> str:
    """One JSON object per line, stable field order, replay-exact floats."""
    return "".join(json.dumps(e) + "\n" for e in events)


def parse_log(text: str):
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise LogParseError(f"line {lineno}: {exc}") from exc
    return events


def write_artifacts(result: engine.RunResult, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "log": os.path.join(out_dir, "events.log"),
        "metrics": os.path.join(out_dir, "metrics.json"),
        "config": os.path.join(out_dir, "resolved_config.yaml"),
    }
    with open(paths["log"], "w") as fh:
        fh.write(events_to_ldjson(result.events))
    metrics = analysis.metrics_summary(
        result.events, result.config.target_loss
    )
    metrics["failed"] = result.failed
    with open(paths["metrics"], "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["config"], "w") as fh:
        fh.write(result.config.to_yaml())
    return paths


@click.group()
def main():
    """Asynchronous federated-learning simulator and log analysis toolkit."""


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the root seed.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def run(scenario_path, seed, out_dir):
    """Run one scenario; write event log, metrics, and resolved config."""
    try:
        cfg = parse_scenario(scenario_path)
        if seed is not None:
            cfg.seed = seed
    except (ParseError, ValidationError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        result = engine.run_scenario(cfg)
        write_artifacts(result, out_dir)
    except OSError as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if result.failed:
        click.echo("run diverged: non-finite model weights", err=True)
        sys.exit(EXIT_DIVERGED)
    click.echo(f"run complete: {len(result.events)} events, "
               f"model version {result.model.version}")


@main.command()
@click.option("--log", "log_path", required=True, type=click.Path(exists=True))
@click.option("--bound", "b", required=True, type=int,
              help="Target staleness bound to check against.")
@click.option("--tick", type=float, default=0.0,
              help="Loop tick; spacing violations within one tick of the "
                   "boundary are excused.")
def verify(log_path, b, tick):
    """Check aggregation spacing and the staleness bound on an event log."""
    try:
        with open(log_path) as fh:
            events = parse_log(fh.read())
    except LogParseError as exc:
        click.echo(f"log parse error: {exc}", err=True)
        sys.exit(EXIT_VERIFY_FAIL)
    try:
        spacing = analysis.verify_aggregation_spacing(events, tick)
    except analysis.MissingIntervalField as exc:
        click.echo(f"cannot check aggregation spacing: {exc}", err=True)
        sys.exit(EXIT_VERIFY_FAIL)
    report = analysis.verify_staleness_bound(events, b)
    rel = "<=" if report.passed else ">"
    click.echo(f"max aggregations inside a training span: "
               f"m={report.max_staleness_count} {rel} b={b}")
    click.echo(f"strict form m < b: {'holds' if report.strict else 'fails'}")
    click.echo(f"spacing violations: {len(spacing)}")
    for v in spacing:
        click.echo(f"  aggregation at {v['time']} (interval {v['interval']}) "
                   f"preceded by one at {v['offending_time']}")
    for v in report.violating_spans:
        click.echo(f"  client {v['client_id']} span {v['span']} saw "
                   f"{v['count']} aggregations: {v['aggregation_times']}")
    if spacing or not report.passed:
        sys.exit(EXIT_VERIFY_FAIL)


@main.command()
@click.option("--f0", required=True, type=float,
              help="Initial optimality gap f(w0) - f*.")
@click.option("--L", "l_smooth", required=True, type=float)
@click.option("--sigma-l2", required=True, type=float)
@click.option("--sigma-g2", required=True, type=float)
@click.option("--G", "g_bound", required=True, type=float)
@click.option("--Q", "q_steps", required=True, type=int)
@click.option("--eta", required=True, type=float,
              help="Constant local learning rate (expanded to Q steps).")
@click.option("--b", required=True, type=int)
@click.option("--T", "t_steps", required=True, type=int)
def bound(f0, l_smooth, sigma_l2, sigma_g2, g_bound, q_steps, eta, b, t_steps):
    """Print the convergence-rate bound for the given parameters."""
    params = analysis.BoundParams(
        f0_minus_fstar=f0, L_smooth=l_smooth, sigma_l_sq=sigma_l2,
        sigma_g_sq=sigma_g2, G=g_bound, Q=q_steps,
        eta_schedule=[eta] * q_steps, b=b, T=t_steps,
    )
    try:
        value = analysis.convergence_bound(params)
    except analysis.PreconditionViolated:
        click.echo("precondition violated: eta*Q <= 1/L required", err=True)
        sys.exit(EXIT_CONFIG)
    except analysis.InvalidParams as exc:
        click.echo(f"invalid parameters: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(np.format_float_positional(
        value, precision=9, unique=False, fractional=False
    ).rstrip("."))


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True))
@click.option("--preview", is_flag=True, default=False,
              help="Print the CSV instead of writing next to the scenario.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def partition(scenario_path, preview, out_path):
    """Write the client partition as CSV (sample_id,client_id,label)."""
    try:
        cfg = parse_scenario(scenario_path)
    except (ParseError, ValidationError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    sim = engine.Simulation(cfg)
    csv_text = tasks.export_partition_csv(sim.assignment, sim.train.y)
    if preview or out_path is None:
        click.echo(csv_text, nl=False)
    else:
        with open(out_path, "w") as fh:
            fh.write(csv_text)


if __name__ == "__main__":
    main()
