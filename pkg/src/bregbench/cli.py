"""``bench`` command line: run a sweep, generate a dataset, or run the property suite.

Exit codes for ``bench run``: 0 success, 1 config error, 2 some sweep cells
failed, 3 every cell failed.  ``bench gen`` and ``bench check`` return 1 on a
config error and 2 when a gating check fails.
"""

from __future__ import annotations

import logging
import sys

import click

from . import checks
from .config import load_config, load_synth_config
from .data import generate_synthetic, save_dataset
from .errors import BenchError, ConfigError
from .experiment import run_experiment
from .output import emit_comparison

EXIT_CONFIG = 1
EXIT_PARTIAL = 2


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Compare probability-target losses on crowd-annotated data."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--quiet", is_flag=True, help="Do not print the comparison summary.")
def run(config_path, quiet):
    """Train every configured loss and write tables, curves and the report."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        report = run_experiment(cfg)
    except BenchError as exc:
        # the dataset could not be produced; nothing was trained
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if not quiet:
        click.echo(emit_comparison(report), nl=False)
        click.echo(f"results written to {cfg.output_dir}")
    sys.exit(report.exit_code)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def gen(config_path, out_path):
    """Generate a synthetic crowd-annotated dataset file."""
    try:
        synth = load_synth_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    ds = generate_synthetic(synth)
    save_dataset(ds, out_path)
    click.echo(f"wrote {ds.n} instances (d={ds.d}, K={ds.k}) to {out_path}")


@main.command()
@click.option(
    "--only",
    multiple=True,
    type=click.Choice(list(checks.CRITERIA)),
    help="Run only the named group (repeatable).",
)
def check(only):
    """Run the invariant and property suite and print one line per check."""
    results = checks.run_all(only, echo=click.echo)
    failed = [r for r in results if r.gating and not r.passed]
    gating = sum(r.gating for r in results)
    click.echo(f"{gating - len(failed)}/{gating} gating checks passed")
    sys.exit(EXIT_PARTIAL if failed else 0)


if __name__ == "__main__":
    main()
