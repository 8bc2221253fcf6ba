"""Command-line interface.

Every command takes ``--config <file>`` plus overriding flags.  Exit
codes: 0 success, 1 configuration or run error, 2 usage error, 3 run
finished but some images failed (they are flagged in the manifest and
excluded from aggregation).
"""

from __future__ import annotations

import functools
import sys

import click

from ._version import __version__
from .config import (COMPLETION_METHODS, ConfigError, apply_overrides,
                     load_config)
from .pipeline import RunError, RunOutcome, run_complete, run_eval, run_sweep, run_synth
from .protocols import PROTOCOL_NAMES

EXIT_PARTIAL_FAILURE = 3


def _common_options(f):
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True, dir_okay=False),
                  help="Experiment config file (YAML or JSON).")
    @click.option("--seed", type=click.IntRange(min=0), default=None,
                  help="Override the config seed.")
    @click.option("--out", type=click.Path(file_okay=False), default=None,
                  help="Override the output directory.")
    @click.option("--method", type=click.Choice(COMPLETION_METHODS), default=None,
                  help="Override the completion method.")
    @click.option("--protocol", type=click.Choice(PROTOCOL_NAMES), default=None,
                  help="Override the benchmark protocol.")
    @click.option("--jobs", type=click.IntRange(min=1), default=None,
                  help="Override the worker count.")
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        return f(*args, **kwargs)

    return wrapper


def _load(config_path, seed, out, method, protocol, jobs):
    cfg = load_config(config_path)
    return apply_overrides(cfg, seed=seed, out=out, method=method,
                           protocol=protocol, jobs=jobs)


def _finish(command: str, outcome: RunOutcome, out) -> None:
    total = len(outcome.results)
    click.echo(f"{command}: {outcome.n_ok}/{total} ok -> {out}")
    if outcome.n_failed:
        for r in outcome.results:
            if not r.ok:
                click.echo(f"  failed {r.id}: {r.error}", err=True)
        sys.exit(EXIT_PARTIAL_FAILURE)


def _run(command: str, runner, config_path, seed, out, method, protocol, jobs) -> None:
    try:
        cfg = _load(config_path, seed, out, method, protocol, jobs)
        outcome = runner(cfg)
    except (ConfigError, RunError) as exc:
        raise click.ClickException(str(exc))
    _finish(command, outcome, cfg.out)


@click.group()
@click.version_option(__version__, prog_name="depthbench")
def main():
    """Sparse depth benchmark synthesis, completion, and evaluation."""


@main.command()
@_common_options
def synth(config_path, seed, out, method, protocol, jobs):
    """Degrade dense ground truth into sparse benchmark inputs."""
    _run("synth", run_synth, config_path, seed, out, method, protocol, jobs)


@main.command()
@_common_options
def complete(config_path, seed, out, method, protocol, jobs):
    """Densify sparse depth maps (guidance, idw, or nearest)."""
    _run("complete", run_complete, config_path, seed, out, method, protocol, jobs)


@main.command(name="eval")
@_common_options
def eval_cmd(config_path, seed, out, method, protocol, jobs):
    """Score predictions against ground truth and write reports."""
    _run("eval", run_eval, config_path, seed, out, method, protocol, jobs)


@main.command()
@_common_options
def sweep(config_path, seed, out, method, protocol, jobs):
    """Run synth/complete/eval across a parameter grid and chart the trend."""
    _run("sweep", run_sweep, config_path, seed, out, method, protocol, jobs)


if __name__ == "__main__":
    main()
