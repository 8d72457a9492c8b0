"""Command line entry point: ``isorank gen|run|verify|rank``."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import IsorankError
from .estimation import borda_rank, pairwise_estimator
from .harness import (ExperimentConfig, _rng, make_instance, plot_report, run_experiment,
                      verify_lemmas)
from .model import ProblemInstance
from .partial import ObservationLog, default_delta, estimate_wmp


@click.group()
def main() -> None:
    """Rank the rows of a noisy bi-isotonic matrix."""


@main.command()
@click.option("--generator", required=True,
              type=click.Choice(["random", "separated", "simple_cp", "spectral_toy", "spurious", "staircase"]))
@click.option("--param", "params", multiple=True, metavar="KEY=VALUE",
              help="Generator argument, repeatable; values are parsed as JSON.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(dir_okay=False), help="Write the instance JSON here instead of stdout.")
def gen(generator: str, params: tuple, seed: int, out: str | None) -> None:
    """Generate a problem instance."""
    spec = {"generator": generator}
    for item in params:
        key, sep, value = item.partition("=")
        if not sep:
            raise click.BadParameter(f"expected KEY=VALUE, got {item!r}", param_hint="--param")
        try:
            spec[key] = json.loads(value)
        except json.JSONDecodeError:
            spec[key] = value
    try:
        inst = make_instance(spec, _rng(seed, seed, 0))
    except (IsorankError, TypeError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    text = inst.to_json()
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Per-cell report CSV.")
@click.option("--seed-base", type=int, default=None, help="Overrides the seed_base of the config.")
@click.option("--baseline", default="borda", show_default=True, help="Estimator used for the ratio column.")
@click.option("--no-plot", is_flag=True, help="Skip the PNG figure.")
def run(config_path: str, out: str, seed_base: int | None, baseline: str, no_plot: bool) -> None:
    """Run a Monte-Carlo experiment from a JSON config.

    Writes OUT, OUT with a ``.summary.csv`` suffix (means, CIs, ratio to the
    baseline) and, unless --no-plot, a ``.png`` figure next to them.
    """
    doc = json.loads(Path(config_path).read_text())
    if seed_base is not None:
        doc["seed_base"] = seed_base
    try:
        cfg = ExperimentConfig.from_dict(doc)
    except (IsorankError, TypeError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    report = run_experiment(cfg)
    out_path = Path(out)
    report.write_csv(out_path)
    summary_path = out_path.with_suffix(".summary.csv")
    report.write_summary(summary_path, baseline)
    click.echo(f"wrote {out_path} ({len(report.cells)} rows) and {summary_path}")
    if not no_plot:
        png = plot_report(report, out_path.with_suffix(".png"))
        click.echo(f"wrote {png}")
    failed = [c for c in report.cells if c.error]
    if failed:
        click.echo(f"{len(failed)} cell(s) recorded an error", err=True)


@main.command()
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--delta", default=0.05, show_default=True, type=float)
def verify(instance_path: str, delta: float) -> None:
    """Check the energy-capture and block-count inequalities on an instance."""
    inst = ProblemInstance.from_json(Path(instance_path).read_text())
    flags = verify_lemmas(inst, None, delta)
    for name, flag in flags.items():
        click.echo(f"{name}: {flag}")
    if "fail" in flags.values():
        sys.exit(1)


@main.command()
@click.option("--obs", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV with columns i,k,y (0-based positions).")
@click.option("--n", "n", required=True, type=int)
@click.option("--d", "d", required=True, type=int)
@click.option("--lambda", "lam", required=True, type=float)
@click.option("--estimator", default="wmp", show_default=True, type=click.Choice(["wmp", "pc", "borda"]))
@click.option("--zeta", default=1.0, show_default=True, type=float, help="Noise level bound.")
@click.option("--delta", default=None, type=float, help="Failure budget; defaults to a level tied to n, d, lambda.")
@click.option("--seed", default=0, show_default=True, type=int)
def rank(obs: str, n: int, d: int, lam: float, estimator: str, zeta: float, delta: float | None,
         seed: int) -> None:
    """Rank experts from an external observation log; prints expert,rank lines."""
    try:
        log = ObservationLog.from_csv(obs, n, d, lam)
    except IsorankError as exc:
        raise click.ClickException(str(exc)) from exc
    delta = default_delta(lam, n, d, zeta) if delta is None else delta
    rng = np.random.default_rng(seed)
    if estimator == "wmp":
        res = estimate_wmp(log, zeta, delta, rng=rng)
        pi = res.pi_hat
        click.echo(f"# regime={res.plan.regime} failed={res.failed}", err=True)
    elif estimator == "pc":
        pi, _ = pairwise_estimator(log, zeta, delta, rng=rng)
    else:
        pi = borda_rank(log)
    click.echo("expert,rank")
    for i, r in enumerate(np.asarray(pi).tolist()):
        click.echo(f"{i},{r}")


if __name__ == "__main__":
    main()
