"""Command-line front end: ``flowdim run | validate | list-scenarios | plotdata``."""

import csv
import json
import os
import sys

import click

from .errors import UsageError
from .pipeline import load_scenario, plot_series, resolve_scenario, run_scenario, shipped_scenarios

EXIT_FAIL = 1
EXIT_USAGE = 2


def _threads(value):
    if value is not None:
        return value
    env = os.environ.get("FLOWDIM_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise click.UsageError(f"FLOWDIM_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise click.UsageError(f"FLOWDIM_THREADS must be a positive integer, got {env!r}")
    return n


def _load(scenario):
    try:
        return load_scenario(resolve_scenario(scenario))
    except UsageError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Certified numerical constructions for free flows."""


@main.command()
@click.option("--scenario", required=True, help="Scenario file or the name of a shipped scenario.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="flowdim-out", show_default=True,
              help="Directory for report.json and CSV artifacts.")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker threads for independent stages (default: $FLOWDIM_THREADS or 1).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the scenario seed.")
def run(scenario, out_dir, threads, seed):
    """Execute a scenario; exit status 0 iff every certificate passes."""
    sc = _load(scenario)
    report, _ = run_scenario(sc, out_dir, _threads(threads), seed, log=lambda m: click.echo(m, err=True))
    s = report["summary"]
    click.echo(f"{sc.name}: {s['pass']}/{s['stages']} stages passed, "
               f"{s['checks_passed']}/{s['checks']} checks; report in {os.path.join(out_dir, 'report.json')}")
    sys.exit(0 if report["pass"] else EXIT_FAIL)


@main.command()
@click.option("--scenario", required=True, help="Scenario file or the name of a shipped scenario.")
def validate(scenario):
    """Parse and check a scenario without running it."""
    sc = _load(scenario)
    click.echo(f"{sc.name}: ok ({len(sc.stages)} stages, order {' -> '.join(sc.order())})")


@main.command("list-scenarios")
def list_scenarios():
    """List the scenarios shipped with the package."""
    for name, description in shipped_scenarios():
        click.echo(f"{name}\t{description}")


@main.command()
@click.option("--report", "report_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--check", "check_name", required=True, help="Exact check name, e.g. 'residual ||p*p - p||_1'.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="CSV file (default stdout).")
def plotdata(report_path, check_name, out_path):
    """Emit (parameter, measured, bound) rows of one check as CSV."""
    with open(report_path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        report = json.loads(text) if text.strip() else {}
        rows = plot_series(report, check_name)
    except json.JSONDecodeError as exc:
        click.echo(f"error: {report_path}: not a JSON report ({exc.msg})", err=True)
        sys.exit(EXIT_USAGE)
    except UsageError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    if out_path is None:
        csv.writer(sys.stdout).writerows(rows)
    else:
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)

