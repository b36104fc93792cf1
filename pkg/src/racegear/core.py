# Core orchestration logic for racegear.
# This file loads configuration and tracks, runs the solvers, writes the run outputs
# and turns failures into exit codes:
#   0 success, 1 config/track/input error, 2 solver failure,
#   3 no convergence or unproven optimality (best incumbent still written).
#
# It contains no CLI parsing and no numerical code of its own.

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from rich.console import Console
from rich.table import Table

from racegear import __version__, conic, report
from racegear.config import (
    Config,
    TransmissionChoice,
    config_from_mapping,
    load_config,
    resolve_transmission,
)
from racegear.driver import IterativeResult, design_search, run_iterative
from racegear.errors import (
    ConfigError,
    ExtractionError,
    SolverFailure,
    ValidationError,
)
from racegear.exact import solve_exact
from racegear.models import ContinuousSolution, TrackProfile, TransmissionKind, TransmissionSpec
from racegear.track import (
    BUNDLED_TRACK_LENGTH,
    BUNDLED_TRACK_NAME,
    DEFAULT_STEP,
    bundled_track,
    load_track,
    section_fixture,
    synthetic_circuit_samples,
    write_track_csv,
)
from racegear.transcription import SectionBoundary, build_fgt_cvt, solve_layout

console = Console()
_err = Console(stderr=True)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2
EXIT_UNPROVEN = 3

# Largest iterative-vs-exact section time difference accepted by `validate` (ms).
VALIDATION_GAP_MS = 0.5
DEFAULT_VALIDATION_STEPS = (12, 14, 16, 18, 20, 22)


def _fail(code: int, message: str) -> int:
    _err.print(f"[red]racegear:[/red] {message}")
    return code


@dataclass
class OptimizeOptions:
    out: Path
    trans: TransmissionChoice = TransmissionChoice.fgt
    config_path: Optional[Path] = None
    track_path: Optional[Path] = None
    step: float = DEFAULT_STEP
    design_search: bool = False
    battery_limit: Optional[float] = None
    dump_hamiltonian: bool = False


@dataclass
class _Outcome:
    solution: ContinuousSolution
    iterative: Optional[IterativeResult] = None
    converged: bool = True
    events: List[str] = field(default_factory=list)


def _load_track(path: Optional[Path], step: float) -> TrackProfile:
    return load_track(path, step) if path is not None else bundled_track(step)


def run_optimize(opts: OptimizeOptions) -> int:
    """Optimize one car on one track; returns the exit code."""
    try:
        config = load_config(opts.config_path).with_battery_limit(opts.battery_limit)
    except ConfigError as exc:
        return _fail(EXIT_INPUT, str(exc))
    return _optimize(config, opts, "optimize")


def run_rerun(manifest_path: Path, out: Path) -> int:
    """Repeat an optimize run from the configuration snapshot stored in its manifest."""
    try:
        manifest = report.RunManifest.read(manifest_path)
        config = config_from_mapping(manifest.snapshot)
        options = manifest.options
        opts = OptimizeOptions(
            out=out,
            trans=TransmissionChoice(manifest.transmission),
            config_path=Path(manifest.config_path) if manifest.config_path else None,
            track_path=Path(manifest.track_path) if manifest.track_path else None,
            step=float(manifest.step),
            design_search=bool(options.get("design_search", False)),
            dump_hamiltonian=bool(options.get("dump_hamiltonian", False)),
        )
    except (ConfigError, ValidationError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    if manifest.version != __version__:
        _err.print(f"[dim]racegear: manifest written by racegear {manifest.version}[/dim]")
    return _optimize(config, opts, "rerun")


def _solve(config: Config, track: TrackProfile, opts: OptimizeOptions) -> _Outcome:
    trans = resolve_transmission(opts.trans, config.transmission)
    args = (track, config.vehicle, config.powertrain)
    if opts.design_search:
        found = design_search(*args, trans, config.algorithm, config.solver)
        run = found.iterative
        if run is not None:
            return _Outcome(found.solution, run, run.converged, list(run.events))
        return _Outcome(found.solution)
    if trans.kind is TransmissionKind.mgt:
        run = run_iterative(*args, trans, config.algorithm, config.solver)
        return _Outcome(run.solution, run, run.converged, list(run.events))
    problem, layout = build_fgt_cvt(*args, trans)
    result, solution = solve_layout(problem, layout, config.solver)
    if solution is None:
        raise SolverFailure(result.status.value, f"convex solve finished '{result.status.value}'")
    return _Outcome(solution)


def _optimize(config: Config, opts: OptimizeOptions, command: str) -> int:
    try:
        track = _load_track(opts.track_path, opts.step)
        resolve_transmission(opts.trans, config.transmission)
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        return _fail(EXIT_INPUT, str(exc))

    started = time.perf_counter()
    try:
        outcome = _solve(config, track, opts)
    except (ConfigError, ValidationError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    except (SolverFailure, ExtractionError) as exc:
        return _fail(EXIT_SOLVER, str(exc))
    wall = time.perf_counter() - started

    out = opts.out
    out.mkdir(parents=True, exist_ok=True)
    solution = outcome.solution
    run = outcome.iterative
    written = [report.TRAJECTORY_FILE, report.SUMMARY_FILE, report.MANIFEST_FILE]
    report.write_trajectory(out / report.TRAJECTORY_FILE, solution)
    report.write_json(out / report.SUMMARY_FILE, report.build_summary(
        solution,
        transmission=opts.trans.value,
        wall_time=wall,
        converged=outcome.converged,
        outer_iterations=len(run.records) if run else 0,
        events=outcome.events,
    ))
    report.RunManifest(
        command=command,
        config_path=str(opts.config_path) if opts.config_path else None,
        track_path=str(opts.track_path) if opts.track_path else None,
        track_name=track.name,
        step=opts.step,
        transmission=opts.trans.value,
        snapshot=config.snapshot(),
        output_dir=str(out),
        options={
            "design_search": opts.design_search,
            "battery_limit": opts.battery_limit,
            "dump_hamiltonian": opts.dump_hamiltonian,
        },
    ).write(out / report.MANIFEST_FILE)

    if run is not None:
        report.write_trace(out / report.TRACE_FILE, run.records, run.lap_time)
        written.append(report.TRACE_FILE)
        if report.try_plot("trace.svg", report.plot_trace, out / "trace.svg", run.records,
                           run.lap_time):
            written.append("trace.svg")
        if opts.dump_hamiltonian and run.gop is not None:
            report.write_hamiltonian(out / report.HAMILTONIAN_FILE, run.gop.samples)
            written.append(report.HAMILTONIAN_FILE)
    if solution.active_gear is not None and opts.trans is not TransmissionChoice.fgt:
        report.write_gear_map(out / report.GEAR_MAP_FILE, solution, config.vehicle)
        written.append(report.GEAR_MAP_FILE)
        if report.try_plot("gear_map.svg", report.plot_gear_map, out / "gear_map.svg",
                           solution, config.vehicle):
            written.append("gear_map.svg")

    _print_optimize_summary(solution, opts, outcome, wall, written)
    if not outcome.converged:
        return EXIT_UNPROVEN
    return EXIT_OK


def _print_optimize_summary(solution: ContinuousSolution, opts: OptimizeOptions,
                            outcome: _Outcome, wall: float, written: Sequence[str]) -> None:
    console.print()
    console.print("[bold]Summary[/bold]")
    console.print(f"Transmission: {opts.trans.value}")
    console.print(f"Ratios:       {', '.join(f'{r:.4g}' for r in solution.design_ratios)}")
    console.print(f"Lap time:     {solution.lap_time:.4f} s")
    console.print(f"Energy used:  {solution.energy_used / 1e6:.3f} MJ")
    console.print(f"Status:       {solution.status}")
    if outcome.iterative is not None:
        console.print(f"Iterations:   {len(outcome.iterative.records)}")
        console.print(f"Converged:    {'yes' if outcome.converged else 'no'}")
    console.print(f"Wall time:    {wall:.2f} s")
    console.print(f"Output:       {opts.out} ({', '.join(written)})")


def run_compare(run_dirs: Sequence[Path], out: Path) -> int:
    """Tabulate lap times against the FGT run (or the first run) and overlay trajectories."""
    try:
        runs = report.list_runs(run_dirs)
        manifests = [report.RunManifest.read(p / report.MANIFEST_FILE) for p in runs]
        summaries = [report.read_json(p / report.SUMMARY_FILE) for p in runs]
        trajectories = [report.read_trajectory(p / report.TRAJECTORY_FILE) for p in runs]
    except ValidationError as exc:
        return _fail(EXIT_INPUT, str(exc))
    if not runs:
        return _fail(EXIT_INPUT, "compare needs at least one run directory")

    first = manifests[0]
    for path, m, t in zip(runs, manifests, trajectories):
        if (m.track_name, m.step) != (first.track_name, first.step) or t["step"].size != \
                trajectories[0]["step"].size:
            return _fail(EXIT_INPUT, f"{path} was run on a different track or grid")

    reference = next((i for i, m in enumerate(manifests) if m.transmission == "fgt"), None)
    if reference is None:
        _err.print("[dim]racegear: no FGT run given; deltas are against the first run[/dim]")
        reference = 0
    base = float(summaries[reference]["lap_time"])

    names = _run_names(runs)
    table = Table(title="Lap time comparison")
    for column in report.COMPARE_COLUMNS:
        table.add_column(column, justify="left" if column in ("run", "kind") else "right")
    out.mkdir(parents=True, exist_ok=True)
    with report.CompareWriter(out / report.COMPARE_FILE) as writer:
        for name, m, s in zip(names, manifests, summaries):
            lap_time = float(s["lap_time"])
            writer.write(name, m.transmission, lap_time, base)
            delta = lap_time - base
            table.add_row(name, m.transmission, f"{lap_time:.4f}", f"{delta:+.4f}",
                          f"{100.0 * delta / base:+.3f}")
    console.print(table)

    plotted = report.try_plot("compare.svg", report.plot_compare, out / "compare.svg",
                              dict(zip(names, trajectories)))
    console.print()
    console.print("[bold]Summary[/bold]")
    console.print(f"Runs:      {len(runs)}")
    console.print(f"Reference: {names[reference]} ({manifests[reference].transmission})")
    console.print(f"Table:     {out / report.COMPARE_FILE}")
    if plotted:
        console.print(f"Plot:      {out / plotted}")
    return EXIT_OK


def _run_names(runs: Sequence[Path]) -> List[str]:
    names = [p.name or str(p) for p in runs]
    if len(set(names)) == len(names):
        return names
    return [str(p) for p in runs]


def run_validate(
    steps: Sequence[int],
    section: str,
    out: Path,
    trans_choice: TransmissionChoice = TransmissionChoice.mgt3,
    config_path: Optional[Path] = None,
) -> int:
    """Exact branch-and-bound against the iterative method on section fixtures of growing size."""
    try:
        config = load_config(config_path)
        trans = resolve_transmission(trans_choice, config.transmission)
        if trans.kind is TransmissionKind.cvt:
            raise ValidationError("validation compares gear selections; pick fgt or an mgt")
        sections = {n: section_fixture(section, n) for n in steps}
    except (ConfigError, ValidationError) as exc:
        return _fail(EXIT_INPUT, str(exc))

    table = Table(title=f"Exact vs iterative on '{section}'")
    for column in report.VALIDATION_COLUMNS:
        table.add_column(column, justify="right")
    failed = 0
    unproven = 0
    too_far = 0
    out.mkdir(parents=True, exist_ok=True)
    with report.ValidationWriter(out / report.VALIDATION_FILE) as writer:
        for n, track in sections.items():
            try:
                row = _validate_one(config, trans, track)
            except Exception as exc:  # noqa: BLE001
                # One failing section never stops the remaining rows.
                failed += 1
                _err.print(f"[red]racegear:[/red] N={n} failed ({exc})")
                continue
            writer.write(row)
            if row.bound_gap > config.algorithm.bnb_gap_tolerance:
                unproven += 1
            elif row.difference_ms > VALIDATION_GAP_MS:
                too_far += 1
            table.add_row(*(_format_cell(getattr(row, c)) for c in report.VALIDATION_COLUMNS))
    console.print(table)

    console.print()
    console.print("[bold]Summary[/bold]")
    console.print(f"Sections:      {len(sections)}")
    console.print(f"Within {VALIDATION_GAP_MS} ms: {len(sections) - failed - unproven - too_far}")
    console.print(f"Over the gap:  {too_far}")
    console.print(f"Bound gap > 0: {unproven}")
    console.print(f"Failed:        {failed}")
    console.print(f"Report:        {out / report.VALIDATION_FILE}")
    if failed:
        return EXIT_SOLVER
    if unproven or too_far:
        return EXIT_UNPROVEN
    return EXIT_OK


def _format_cell(value: float) -> str:
    if isinstance(value, (int, np.integer)):
        return str(value)
    return f"{value:.6g}"


def _validate_one(config: Config, trans: TransmissionSpec,
                  track: TrackProfile) -> report.ValidationRow:
    boundary = SectionBoundary.proportional(
        track, BUNDLED_TRACK_LENGTH, config.powertrain, config.algorithm.section_entry_speed
    )
    args = (track, config.vehicle, config.powertrain, trans)

    started = time.perf_counter()
    exact = solve_exact(*args, boundary, config.algorithm, config.solver)
    exact_time = time.perf_counter() - started
    if exact.solution is None:
        raise SolverFailure(exact.status, f"exact solve finished '{exact.status}'")

    started = time.perf_counter()
    iterative = run_iterative(*args, config.algorithm, config.solver, boundary)
    iterative_time = time.perf_counter() - started

    return report.ValidationRow(
        n_steps=track.n_steps,
        exact_solving_time=exact_time,
        exact_section_time=exact.section_time,
        iterative_solving_time=iterative_time,
        iterative_section_time=iterative.lap_time,
        exact_nodes=exact.node_count,
        bound_gap=exact.bound_gap,
    )


def run_diagnose() -> int:
    # Report optional dependencies and run the conic solver self-test.
    # Missing optional packages are never fatal.
    import scipy

    console.print("[bold]racegear diagnose[/bold]")
    console.print(f"racegear:   {__version__}")
    console.print(f"numpy:      {np.__version__}")
    console.print(f"scipy:      {scipy.__version__}")
    console.print(f"matplotlib: {'OK' if report.plotting_available() else 'missing (plots off)'}")

    # min x  s.t.  x = 1, x >= 0
    probe = conic.ConicProblem(
        objective=np.array([1.0]),
        equality_matrix=np.array([[1.0]]),
        equality_rhs=np.array([1.0]),
        cones=(conic.Cone(conic.ConeKind.nonnegative, 1),),
    )
    result = conic.solve(probe)
    ok = result.optimal and abs(result.objective_value - 1.0) <= 1e-6
    console.print(f"conic solver self-test: {'OK' if ok else 'FAILED'} "
                  f"({result.status.value}, {result.iterations} iterations)")
    return EXIT_OK if ok else EXIT_SOLVER


def run_track(out: Path) -> int:
    """Write the bundled circuit as an arc-length/curvature CSV sampled every metre."""
    arc, curvature = synthetic_circuit_samples()
    write_track_csv(out, arc, curvature)
    console.print()
    console.print("[bold]Summary[/bold]")
    console.print(f"Track:   {BUNDLED_TRACK_NAME} ({BUNDLED_TRACK_LENGTH:g} m)")
    console.print(f"Samples: {arc.size}")
    console.print(f"Written: {out}")
    return EXIT_OK


def parse_steps(text: str) -> List[int]:
    try:
        steps = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValidationError(f"--steps takes a comma-separated list of integers, got {text!r}") from exc
    if not steps or any(n < 2 for n in steps):
        raise ValidationError("--steps values must be integers >= 2")
    return steps
