#!/usr/bin/env python3
"""
Entry point for zsd - learning dynamics for zero-sum matrix games.

Subcommands:

    solve     equilibrium of a game (estimator or exact oracle)
    run       one run of MWU, OMWU, OMD or FLBR
    traj      one run with per-coordinate trajectory files
    batch     a grid of seeded runs from a configuration file or preset
    jacobian  contraction check of the FLBR update at the equilibrium

Machine-readable results go to stdout as JSON; human-readable tables go to
stderr unless --quiet is given. Exit codes: 0 success, 1 input or usage
error, 2 non-convergence (t_max reached or estimator discarded).
"""
import json
import logging
import os
import sys
from pathlib import Path

import click
from dotenv import load_dotenv

from zsd.config import load_batch_spec, resolve_config_path
from zsd.dynamics import Algorithm, DynamicsConfig, StopReason, StoppingRule, run
from zsd.equilibrium import EquilibriumResult, estimate_nash, solve_exact
from zsd.errors import DiscardedError, ZsdError
from zsd.experiments import (
    BatchResult,
    random_game,
    run_batch,
    trajectory_dump,
    write_batch_csv,
    write_runs_csv,
)
from zsd.game import PayoffMatrix, epsilon_of, expected_payoff, read_matrix
from zsd.metrics import write_trajectory_csv
from zsd.spectral import certify_contraction

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "ZSD_LOG_LEVEL"
EXIT_NOT_CONVERGED = 2
U64 = click.IntRange(0, 2**64 - 1)


def _emit(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2))


def _note(quiet: bool, text: str) -> None:
    if not quiet:
        click.echo(text, err=True)


def _load_game(matrix: str | None, random_n: int | None, seed: int) -> PayoffMatrix:
    if (matrix is None) == (random_n is None):
        raise click.UsageError("Give exactly one of --matrix PATH or --random N")
    if matrix is not None:
        return read_matrix(matrix)
    return random_game(random_n, random_n, seed)


def _game_options(func):
    func = click.option("--seed", type=U64, default=0, show_default=True,
                        help="Seed of the --random game.")(func)
    func = click.option("--random", "random_n", type=click.IntRange(min=1), default=None,
                        help="Use a seeded random N×N game.")(func)
    func = click.option("--matrix", type=str, default=None,
                        help="Matrix file: 'n m' header, then n rows of m entries in (0, 1].")(func)
    return func


def _dynamics_options(func):
    func = click.option("--record-every", type=click.IntRange(min=1), default=100,
                        show_default=True, help="Trajectory thinning.")(func)
    func = click.option("--stop", type=str, default=None,
                        help="criterion_kl:<tol>, kl_to_ref:<tol>, eps_nash:<tol>, l1_to_ref:<tol> "
                             "or tmax_only. Default: criterion_kl:1e-15 for flbr/omd, "
                             "eps_nash:1e-9 otherwise.")(func)
    func = click.option("--tmax", type=click.IntRange(min=1), default=1_000_000,
                        show_default=True, help="Maximum number of steps.")(func)
    func = click.option("--xi", type=float, default=None,
                        help="IBR rate ξ (default 100 for flbr, eta for omd).")(func)
    func = click.option("--eta", type=float, default=0.1, show_default=True,
                        help="Learning rate η in (0, 1).")(func)
    func = click.option("--algo", type=click.Choice([a.value for a in Algorithm], case_sensitive=False),
                        default=Algorithm.FLBR.value, show_default=True)(func)
    func = click.option("--oracle", is_flag=True,
                        help="Use the exact oracle equilibrium as reference.")(func)
    return func


def _reference(game: PayoffMatrix, oracle: bool) -> EquilibriumResult:
    return solve_exact(game) if oracle else estimate_nash(game)


def _prepare_run(game, algo, eta, xi, tmax, stop, record_every, oracle, need_reference):
    cfg = DynamicsConfig(algorithm=algo, eta=eta, xi=xi, t_max=tmax, record_every=record_every)
    if stop is None:
        stop = "criterion_kl:1e-15" if cfg.algorithm.uses_intermediate else "eps_nash:1e-9"
    rule = StoppingRule.parse(stop)
    reference = None
    if rule.needs_reference or need_reference:
        reference = _reference(game, oracle).profile
    return cfg, rule, reference


def _run_summary(game: PayoffMatrix, cfg: DynamicsConfig, rule: StoppingRule, result) -> dict:
    x, y = result.profile.probabilities()
    return {
        "algorithm": cfg.algorithm.value,
        "eta": cfg.eta,
        "xi": cfg.xi if cfg.algorithm.uses_intermediate else None,
        "stop": str(rule),
        "steps": result.steps,
        "stop_reason": result.stop_reason.value,
        "eps_nash": epsilon_of(game, result.profile),
        "game_value": expected_payoff(game, result.profile.x, result.profile.y),
        "x": x.tolist(),
        "y": y.tolist(),
    }


def _exit_code(reason: StopReason) -> int:
    match reason:
        case StopReason.CRITERION:
            return 0
        case StopReason.TMAX:
            return EXIT_NOT_CONVERGED
    return 1


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli() -> None:
    """Learning dynamics for zero-sum matrix games."""


@cli.command()
@_game_options
@click.option("--oracle", is_flag=True, help="Solve exactly (2x2 closed form or support enumeration).")  # noqa: E501
@click.option("--eta", type=float, default=0.05, show_default=True, help="Estimator learning rate.")
@click.option("--xi", type=float, default=100.0, show_default=True, help="Estimator IBR rate.")
@click.option("--tmax", type=click.IntRange(min=1), default=2_000_000, show_default=True)
@click.option("--quiet", is_flag=True, help="No human-readable output on stderr.")
def solve(matrix, random_n, seed, oracle, eta, xi, tmax, quiet) -> int:
    """Equilibrium of a game as JSON."""
    game = _load_game(matrix, random_n, seed)
    try:
        result = solve_exact(game) if oracle else estimate_nash(game, eta=eta, xi=xi, t_max=tmax)
    except DiscardedError as e:
        click.echo(f"Error: {e}", err=True)
        return EXIT_NOT_CONVERGED
    _emit(result.to_dict())
    _note(quiet, f"value {result.value:.12g} via {result.method.value}, eps {result.certificate_eps:.3g}")  # noqa: E501
    return 0


@cli.command("run")
@_game_options
@_dynamics_options
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the trajectory metrics CSV here.")
@click.option("--quiet", is_flag=True, help="No human-readable output on stderr.")
def run_command(matrix, random_n, seed, oracle, algo, eta, xi, tmax, stop, record_every, out, quiet) -> int:  # noqa: E501
    """One run of the dynamics; summary as JSON."""
    game = _load_game(matrix, random_n, seed)
    try:
        cfg, rule, reference = _prepare_run(
            game, algo, eta, xi, tmax, stop, record_every, oracle, need_reference=out is not None,
        )
    except DiscardedError as e:
        click.echo(f"Error: reference equilibrium unavailable: {e}", err=True)
        return EXIT_NOT_CONVERGED
    result = run(game, cfg, rule, reference=reference)
    if out is not None:
        write_trajectory_csv(result.records, out)
    _emit(_run_summary(game, cfg, rule, result))
    _note(quiet, f"{cfg.algorithm.value}: {result.stop_reason.value} after {result.steps} steps")
    return _exit_code(result.stop_reason)


@cli.command()
@_game_options
@_dynamics_options
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Directory for coords.csv and metrics.csv.")
@click.option("--quiet", is_flag=True, help="No human-readable output on stderr.")
def traj(matrix, random_n, seed, oracle, algo, eta, xi, tmax, stop, record_every, out, quiet) -> int:  # noqa: E501
    """One run with per-coordinate update and IBR probabilities written as CSV."""
    game = _load_game(matrix, random_n, seed)
    try:
        cfg, rule, reference = _prepare_run(
            game, algo, eta, xi, tmax, stop, record_every, oracle, need_reference=True,
        )
    except DiscardedError as e:
        click.echo(f"Error: reference equilibrium unavailable: {e}", err=True)
        return EXIT_NOT_CONVERGED
    result = trajectory_dump(game, cfg, rule, out, reference=reference)
    _emit(_run_summary(game, cfg, rule, result))
    _note(quiet, f"{cfg.algorithm.value}: {result.stop_reason.value} after {result.steps} steps, "
                 f"{len(result.records)} records in {out}")
    return _exit_code(result.stop_reason)


def _format_batch(result: BatchResult) -> str:
    lines = [f"{'n':>4} {'algorithm':>9} {'eta':>6} {'xi':>6} {'mean':>12} {'median':>12} "
             f"{'q75':>12} {'q90':>12} {'q97.5':>12} {'t_max hit':>9}"]
    for cell, stats in result.cells:
        xi = "-" if cell.xi is None else f"{cell.xi:g}"
        lines.append(
            f"{cell.n:>4} {cell.algorithm.value:>9} {cell.eta:>6g} {xi:>6} {stats.mean:>12.1f} "
            f"{stats.median:>12.1f} {stats.q75:>12.1f} {stats.q90:>12.1f} {stats.q975:>12.1f} "
            f"{stats.tmax_hit_rate:>9.1%}",
        )
    return "\n".join(lines)


@cli.command()
@click.option("--config", "config_name", required=True,
              help="Configuration file, or the name of a built-in preset (e.g. table1_desk).")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True,
              help="Directory for <config>.csv and <config>_runs.csv.")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker processes (default: ZSD_THREADS or the number of cores).")
@click.option("--quiet", is_flag=True, help="No progress bar or table on stderr.")
def batch(config_name, out, threads, quiet) -> int:
    """Seeded batch of runs; per-cell statistics and per-run CSV files."""
    path = resolve_config_path(config_name)
    spec = load_batch_spec(path)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_batch(spec, threads=threads, progress=not quiet)
    stem = Path(path).stem
    summary_path = out_dir / f"{stem}.csv"
    runs_path = out_dir / f"{stem}_runs.csv"
    write_batch_csv(result, summary_path)
    write_runs_csv(result, runs_path)
    _emit({"summary": str(summary_path), "runs": str(runs_path), "cells": len(result.cells)})
    _note(quiet, _format_batch(result))
    return 0


@cli.command()
@_game_options
@click.option("--eta", type=float, default=0.1, show_default=True, help="Learning rate η in (0, 1).")
@click.option("--xi", type=float, default=100.0, show_default=True, help="IBR rate ξ.")
@click.option("--oracle", is_flag=True, help="Use the exact oracle equilibrium.")
@click.option("--quiet", is_flag=True, help="No human-readable output on stderr.")
def jacobian(matrix, random_n, seed, eta, xi, oracle, quiet) -> int:
    """Contraction report of the FLBR update at the equilibrium as JSON."""
    DynamicsConfig(algorithm=Algorithm.FLBR, eta=eta, xi=xi)
    game = _load_game(matrix, random_n, seed)
    try:
        ne = _reference(game, oracle)
    except DiscardedError as e:
        click.echo(f"Error: {e}", err=True)
        return EXIT_NOT_CONVERGED
    report = certify_contraction(game, ne, eta, xi)
    _emit(report.to_dict())
    _note(quiet, f"spectral radius {report.spectral_radius:.12g} "
                 f"({'contraction' if report.is_contraction else 'no contraction'})")
    return 0


def _configure_logging() -> None:
    level = os.getenv(LOG_LEVEL_ENV, "WARNING").upper()
    if level not in logging.getLevelNamesMapping():
        level = "WARNING"
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: list[str] | None = None) -> None:
    """Run the zsd command line; exits with a non-zero status on errors and non-convergence."""
    load_dotenv()
    _configure_logging()
    try:
        code = cli.main(args=argv, prog_name="zsd", standalone_mode=False)
    except click.ClickException as e:
        click.echo(f"Error: {e.format_message()}", err=True)
        sys.exit(1)
    except click.Abort:
        click.echo("Aborted.", err=True)
        sys.exit(1)
    except (ZsdError, ValueError, OSError) as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)
    if isinstance(code, int) and code != 0:
        sys.exit(code)


if __name__ == "__main__":
    main()
