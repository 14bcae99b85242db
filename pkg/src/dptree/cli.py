"""Command-line front end: single training runs, sweeps, theory calculators,
and sweep summaries.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 budget exceeded
(strict-mode ledger).
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict

import click

from .dp_core import BudgetExceededError, InvalidParameterError, set_zero_noise
from .data_io import DataError
from .dp_topdown import schedule_from_name
from .experiments import (
    ConfigError,
    load_experiment_config,
    resolve_output_path,
    run_single,
    run_sweep,
    summarize,
)
from .theory import (
    WeakLearningParams,
    boosting_recurrence,
    dataset_requirement_breakdown,
    noisycounts_sample_bound,
    rnm_sample_bound,
    sensitivity_bound,
)
from .tree_learning import Criterion

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BUDGET = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    try:
        return fn()
    except (ConfigError, InvalidParameterError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    except DataError as exc:
        _fail(EXIT_DATA, str(exc))
    except BudgetExceededError as exc:
        _fail(EXIT_BUDGET, str(exc))


@click.group()
def main():
    """Differentially private top-down decision trees."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--zero-noise", is_flag=True, help="Exact mechanisms; budget still charged.")
@click.option("--seed", type=int, default=None, help="Override the config's base seed.")
def train(config_path, zero_noise, seed):
    """Run a single seeded training cycle on the first grid point."""

    def body():
        config = load_experiment_config(config_path)
        if seed is not None:
            config.seed = seed
        if zero_noise or config.zero_noise:
            set_zero_noise(True)
        try:
            row = run_single(config, 0, 0, 0, 0)
        finally:
            set_zero_noise(False)
        click.echo(json.dumps(asdict(row), sort_keys=True))

    _guarded(body)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--resume", is_flag=True, help="Skip rows already present in --out.")
def sweep(config_path, out_path, resume):
    """Run the full (alpha x lpf x train-fraction) x runs grid to CSV."""

    def body():
        config = load_experiment_config(config_path)
        written = run_sweep(config, out_path, resume=resume)
        click.echo(str(written))

    _guarded(body)


@main.command("summarize")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def summarize_cmd(in_path, out_path):
    """Aggregate a sweep CSV into per-cell means and standard errors."""

    def body():
        summary = summarize(in_path)
        out = resolve_output_path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        click.echo(str(out))

    _guarded(body)


@main.command()
@click.argument("subcommand", type=click.Choice(
    ["sensitivity", "rnm-bound", "noisycounts-bound", "recurrence", "dataset-requirement"]
))
@click.option("--params", "params_json", required=True, help="JSON object of parameters.")
def theory(subcommand, params_json):
    """Evaluate one of the analysis calculators; echoes inputs and output."""

    def body():
        try:
            params = json.loads(params_json)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--params is not valid JSON: {exc}")
        if subcommand == "sensitivity":
            value = sensitivity_bound(Criterion.from_name(params["criterion"]), int(params["m"]))
        elif subcommand == "rnm-bound":
            value = rnm_sample_bound(
                float(params["zeta"]), float(params["alpha"]), float(params["delta"]),
                int(params["h_size"]),
            )
        elif subcommand == "noisycounts-bound":
            value = noisycounts_sample_bound(
                float(params["zeta"]), float(params["alpha"]), float(params["delta"]),
                int(params["k"]), int(params["h_size"]),
            )
        elif subcommand == "recurrence":
            value = boosting_recurrence(
                float(params["error"]), float(params["gamma"]),
                slowdown=float(params.get("slowdown", 4)),
            )
        else:
            max_nodes = int(params["max_nodes"])
            wl = WeakLearningParams(
                gamma=float(params["gamma"]),
                error=float(params["error"]),
                delta=float(params["delta"]),
                max_nodes=max_nodes,
                alpha=float(params["alpha"]),
                entities=int(params.get("entities", 1)),
                schedule=schedule_from_name(params.get("schedule", "uniform"), max_nodes),
            )
            breakdown = dataset_requirement_breakdown(
                wl, params.get("splitter", "rnm"), int(params["h_size"])
            )
            click.echo(json.dumps({
                "inputs": params,
                "weight_term": breakdown.weight_term,
                "leaf_term": breakdown.leaf_term,
                "split_term": breakdown.split_term,
                "value": breakdown.required,
            }, sort_keys=True))
            return
        click.echo(json.dumps({"inputs": params, "value": value}, sort_keys=True))

    def wrapped():
        try:
            body()
        except KeyError as missing:
            raise ConfigError(f"missing parameter {missing}")

    _guarded(wrapped)


if __name__ == "__main__":
    main()
