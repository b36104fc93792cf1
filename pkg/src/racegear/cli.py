# Command-line interface definition for racegear.
# This file is responsible only for argument parsing, validation,
# and dispatch into core application logic.
#
# No solver calls or file output should live here.

from __future__ import annotations

from pathlib import Path as FSPath
from typing import List, Optional

import typer
from rich.console import Console

from racegear import __version__
from racegear.config import TransmissionChoice
from racegear.core import (
    DEFAULT_VALIDATION_STEPS,
    OptimizeOptions,
    parse_steps,
    run_compare,
    run_diagnose,
    run_optimize,
    run_rerun,
    run_track,
    run_validate,
)
from racegear.errors import ValidationError
from racegear.track import DEFAULT_STEP, SECTION_FIXTURES

app = typer.Typer(
    add_completion=False,
    help="Minimum-lap-time design and gearshift control for electric race cars.",
)
console = Console()


def _version_callback(value: bool) -> None:
    # Handle version early and exit cleanly.
    if value:
        console.print(__version__)
        raise typer.Exit(code=0)


@app.callback()
def main(
    version: bool = typer.Option(
        False, "--version",
        help="Show version and exit.",
        callback=_version_callback,
        is_eager=True,
    ),
) -> None:
    pass


@app.command(help="Optimize the lap of one car: FGT/CVT convex solve or the MGT gearshift loop.")
def optimize(
    out: FSPath = typer.Option(
        ..., "--out",
        help="Output directory for trajectory, summary and manifest.",
        rich_help_panel="Inputs & Outputs",
    ),
    track: Optional[FSPath] = typer.Option(
        None, "--track",
        help="Two-column track CSV (arc length, curvature). Defaults to the bundled circuit.",
        rich_help_panel="Inputs & Outputs",
    ),
    config: Optional[FSPath] = typer.Option(
        None, "--config",
        help="TOML config file; defaults to $RACEGEAR_CONFIG_DIR/racegear.toml if present.",
        rich_help_panel="Inputs & Outputs",
    ),
    trans: TransmissionChoice = typer.Option(
        TransmissionChoice.fgt, "--trans",
        help="Transmission: fgt, cvt, mgt (ratios from config), mgt2, mgt3 or mgt4.",
        rich_help_panel="Car",
    ),
    battery_limit: Optional[float] = typer.Option(
        None, "--battery-limit",
        help="Override the per-lap battery energy budget (J).",
        rich_help_panel="Car",
    ),
    design: bool = typer.Option(
        False, "--design-search",
        help="Search the gear ratios within the configured design bounds.",
        rich_help_panel="Method",
    ),
    step: float = typer.Option(
        DEFAULT_STEP, "--step",
        help="Spatial discretization step (m).",
        rich_help_panel="Method",
    ),
    dump_hamiltonian: bool = typer.Option(
        False, "--dump-hamiltonian",
        help="Write per-gear Hamiltonian values of the final gear selection (MGT).",
        rich_help_panel="Method",
    ),
) -> None:
    if step <= 0:
        raise typer.BadParameter("--step must be positive")
    if battery_limit is not None and battery_limit <= 0:
        raise typer.BadParameter("--battery-limit must be positive")
    opts = OptimizeOptions(
        out=out,
        trans=trans,
        config_path=config,
        track_path=track,
        step=step,
        design_search=design,
        battery_limit=battery_limit,
        dump_hamiltonian=dump_hamiltonian,
    )
    raise typer.Exit(code=run_optimize(opts))


@app.command(help="Compare completed runs against the FGT run (lap time deltas and overlays).")
def compare(
    runs: List[FSPath] = typer.Argument(
        ...,
        help="Run directories written by `racegear optimize`.",
    ),
    out: FSPath = typer.Option(
        FSPath("."), "--out",
        help="Directory for compare.csv and the overlay plot.",
    ),
) -> None:
    raise typer.Exit(code=run_compare(runs, out))


@app.command(help="Check the iterative method against exact branch-and-bound on short sections.")
def validate(
    steps: str = typer.Option(
        ",".join(str(n) for n in DEFAULT_VALIDATION_STEPS), "--steps",
        help="Comma-separated section step counts.",
    ),
    section: str = typer.Option(
        "braking-corner", "--section",
        help=f"Section fixture: {', '.join(sorted(SECTION_FIXTURES))}.",
    ),
    trans: TransmissionChoice = typer.Option(
        TransmissionChoice.mgt3, "--trans",
        help="Geared transmission to validate.",
    ),
    config: Optional[FSPath] = typer.Option(
        None, "--config",
        help="TOML config file.",
    ),
    out: FSPath = typer.Option(
        FSPath("."), "--out",
        help="Directory for validation.csv.",
    ),
) -> None:
    try:
        counts = parse_steps(steps)
    except ValidationError as exc:
        raise typer.BadParameter(str(exc)) from exc
    if section not in SECTION_FIXTURES:
        raise typer.BadParameter(
            f"unknown section '{section}' (known: {', '.join(sorted(SECTION_FIXTURES))})"
        )
    raise typer.Exit(code=run_validate(counts, section, out, trans, config))


@app.command(help="Re-run an optimize run from its manifest.")
def rerun(
    manifest: FSPath = typer.Argument(..., help="manifest.json of an earlier run."),
    out: FSPath = typer.Option(..., "--out", help="Output directory for the repeated run."),
) -> None:
    raise typer.Exit(code=run_rerun(manifest, out))


@app.command(help="Write the bundled synthetic circuit as a track CSV.")
def track(
    out: FSPath = typer.Option(..., "--out", help="Destination CSV file."),
) -> None:
    raise typer.Exit(code=run_track(out))


@app.command(help="Check optional dependencies and run the solver self-test.")
def diagnose() -> None:
    raise typer.Exit(code=run_diagnose())


if __name__ == "__main__":
    app()
