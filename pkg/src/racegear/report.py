# Output files for racegear runs.
# This module owns every file a command writes: trajectory and trace CSVs, summary and
# manifest JSON, comparison and validation tables, and the optional SVG plots.
#
# CSV floats are written with repr so a rerun from the manifest reproduces them exactly.
# Timing columns (wall_time, *_solving_time) are the only values that differ between reruns.

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
from rich.console import Console

from racegear import __version__
from racegear.errors import ValidationError
from racegear.gop import HamiltonianSample
from racegear.models import ContinuousSolution, VehicleSpec

_err = Console(stderr=True)

TRAJECTORY_FILE = "trajectory.csv"
TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"
GEAR_MAP_FILE = "gear_map.csv"
HAMILTONIAN_FILE = "hamiltonian.csv"
COMPARE_FILE = "compare.csv"
VALIDATION_FILE = "validation.csv"

TRAJECTORY_COLUMNS = (
    "step", "position", "kinetic_energy", "battery_energy", "velocity", "lethargy",
    "motor_force", "brake_front", "brake_rear", "gearbox_force", "gear", "gear_ratio",
    "cvt_ratio", "costate_kinetic", "costate_battery",
)
TRACE_COLUMNS = (
    "k", "lap_time", "delta_to_final", "gear_changes", "beta", "solver_iterations", "wall_time",
)
GEAR_MAP_COLUMNS = ("step", "gear", "em_speed", "em_torque", "em_power")
COMPARE_COLUMNS = ("run", "kind", "lap_time", "delta_s", "delta_percent")
VALIDATION_COLUMNS = (
    "n_steps", "exact_solving_time", "exact_section_time", "iterative_solving_time",
    "iterative_section_time", "difference_ms", "exact_nodes", "bound_gap",
)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


class _CsvWriter:
    # Overwritten per run; rows are flushed as they come so a failed batch keeps its prefix.
    def __init__(self, path: Path, header: Sequence[str]):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(header)

    def write_row(self, values: Sequence[Any]) -> None:
        self._writer.writerow([_cell(v) for v in values])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "_CsvWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


class CompareWriter(_CsvWriter):
    def __init__(self, path: Path):
        super().__init__(path, COMPARE_COLUMNS)

    def write(self, run: str, kind: str, lap_time: float, reference: float) -> None:
        delta = lap_time - reference
        self.write_row([run, kind, lap_time, delta, 100.0 * delta / reference])


class ValidationWriter(_CsvWriter):
    def __init__(self, path: Path):
        super().__init__(path, VALIDATION_COLUMNS)

    def write(self, row: "ValidationRow") -> None:
        self.write_row([getattr(row, name) for name in VALIDATION_COLUMNS])


@dataclass(frozen=True)
class ValidationRow:
    n_steps: int
    exact_solving_time: float
    exact_section_time: float
    iterative_solving_time: float
    iterative_section_time: float
    exact_nodes: int
    bound_gap: float

    @property
    def difference_ms(self) -> float:
        return 1e3 * (self.iterative_section_time - self.exact_section_time)


def write_trajectory(path: Path, solution: ContinuousSolution) -> None:
    n = solution.n_steps
    gear = solution.active_gear if solution.active_gear is not None else [None] * n
    cvt = solution.cvt_ratio if solution.cvt_ratio is not None else [None] * n
    with _CsvWriter(path, TRAJECTORY_COLUMNS) as out:
        for i in range(n):
            out.write_row([
                i, solution.positions[i], solution.kinetic_at_steps[i],
                solution.battery_energy[i], solution.velocity[i], solution.lethargy[i],
                solution.motor_force[i], solution.brake_front[i], solution.brake_rear[i],
                solution.gearbox_force[i], gear[i], solution.gear_ratio[i], cvt[i],
                solution.costate_kinetic[i], solution.costate_battery[i],
            ])


def read_trajectory(path: Path) -> Dict[str, np.ndarray]:
    """Columns of a trajectory CSV as float arrays (blank cells become NaN)."""
    if not path.is_file():
        raise ValidationError(f"missing trajectory file: {path}")
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRAJECTORY_COLUMNS:
            raise ValidationError(f"{path} does not have the trajectory columns")
        rows = list(reader)
    return {
        name: np.array([float(r[name]) if r[name] != "" else np.nan for r in rows])
        for name in TRAJECTORY_COLUMNS
    }


def write_trace(path: Path, records: Sequence[Any], final_lap_time: float) -> None:
    with _CsvWriter(path, TRACE_COLUMNS) as out:
        for r in records:
            out.write_row([r.k, r.lap_time, r.lap_time - final_lap_time, r.gear_changes, r.beta,
                           r.solver_iterations, r.wall_time])


def gear_map(solution: ContinuousSolution, vehicle: VehicleSpec) -> Dict[str, np.ndarray]:
    # EM operating point per step: speed (rad/s), torque (N*m), mechanical power (W).
    ratio = solution.gear_ratio
    return {
        "em_speed": ratio * solution.velocity / vehicle.wheel_radius,
        "em_torque": solution.motor_force * vehicle.wheel_radius / ratio,
        "em_power": solution.motor_force * solution.velocity,
    }


def write_gear_map(path: Path, solution: ContinuousSolution, vehicle: VehicleSpec) -> None:
    if solution.active_gear is None:
        raise ValidationError("gear maps need a geared solution")
    points = gear_map(solution, vehicle)
    with _CsvWriter(path, GEAR_MAP_COLUMNS) as out:
        for i in range(solution.n_steps):
            out.write_row([i, solution.active_gear[i], points["em_speed"][i],
                           points["em_torque"][i], points["em_power"][i]])


def write_hamiltonian(path: Path, samples: Sequence[HamiltonianSample]) -> None:
    n_gear = len(samples[0].values) if samples else 0
    header = ["step"] + [f"h_gear_{j}" for j in range(1, n_gear + 1)] + ["gear"]
    with _CsvWriter(path, header) as out:
        for s in samples:
            out.write_row([s.step, *s.values, s.gear])


def write_json(path: Path, data: Mapping[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def build_summary(
    solution: ContinuousSolution,
    transmission: str,
    wall_time: float,
    converged: bool = True,
    outer_iterations: int = 0,
    events: Sequence[str] = (),
) -> Dict[str, Any]:
    summary: Dict[str, Any] = {
        "lap_time": solution.lap_time,
        "status": solution.status,
        "converged": converged,
        "solver_iterations": solution.solver_iterations,
        "primal_residual": solution.primal_residual,
        "dual_residual": solution.dual_residual,
        "duality_gap": solution.duality_gap,
        "design_ratios": list(solution.design_ratios),
        "transmission": transmission,
        "effective_mass": solution.effective_mass,
        "final_battery_energy": solution.final_battery_energy,
        "energy_used": solution.energy_used,
        "outer_iterations": outer_iterations,
        "wall_time": wall_time,
        "events": list(events),
    }
    if "envelope_deviation" in solution.extras:
        summary["envelope_deviation"] = float(solution.extras["envelope_deviation"])
    return summary


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    track_path: Optional[str]
    track_name: str
    step: float
    transmission: str
    snapshot: Dict[str, Any]
    output_dir: str
    options: Dict[str, Any] = field(default_factory=dict)
    version: str = __version__
    timestamp: str = field(
        default_factory=lambda: datetime.now().isoformat(timespec="seconds")
    )

    def write(self, path: Path) -> None:
        write_json(path, asdict(self))

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        data = read_json(path)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(f"{path} is not a racegear run manifest") from exc


# --- plots ----------------------------------------------------------------------------


def plotting_available() -> bool:
    """Report whether the optional matplotlib extra is importable."""
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"svg.hashsalt": "racegear", "font.size": 9, "legend.fontsize": 8})
    return plt


def plot_compare(path: Path, runs: Mapping[str, Mapping[str, np.ndarray]]) -> None:
    # Velocity, gear ratio and gearbox output power against position, one line per run.
    plt = _pyplot()
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7.0, 6.5))
    for name, t in runs.items():
        axes[0].plot(t["position"], t["velocity"], label=name, lw=1.0)
        axes[1].plot(t["position"], t["gear_ratio"], label=name, lw=1.0)
        axes[2].plot(t["position"], 1e-3 * t["gearbox_force"] * t["velocity"], label=name, lw=1.0)
    axes[0].set_ylabel("velocity (m/s)")
    axes[1].set_ylabel("gear ratio (-)")
    axes[2].set_ylabel("gearbox power (kW)")
    axes[2].set_xlabel("position (m)")
    axes[0].legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_trace(path: Path, records: Sequence[Any], final_lap_time: float) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 3.0))
    k = [r.k for r in records]
    ax.plot(k, [1e3 * (r.lap_time - final_lap_time) for r in records], marker="o", lw=1.0)
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xlabel("iteration k")
    ax.set_ylabel("T^k - T_conv (ms)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_gear_map(path: Path, solution: ContinuousSolution, vehicle: VehicleSpec) -> None:
    if solution.active_gear is None:
        raise ValidationError("gear maps need a geared solution")
    plt = _pyplot()
    points = gear_map(solution, vehicle)
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    for gear in np.unique(solution.active_gear):
        mask = solution.active_gear == gear
        ax.scatter(points["em_speed"][mask], points["em_torque"][mask], s=6, label=f"gear {gear}")
    ax.set_xlabel("EM speed (rad/s)")
    ax.set_ylabel("EM torque (N m)")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def try_plot(name: str, draw, *args: Any) -> Optional[str]:
    # Plots are a convenience; a missing extra or a plotting error never fails a run.
    if not plotting_available():
        return None
    try:
        draw(*args)
    except Exception as exc:  # noqa: BLE001
        _err.print(f"[dim]racegear: {name} plot skipped: {exc}[/dim]")
        return None
    return name


def list_runs(paths: Sequence[Path]) -> List[Path]:
    # Run directories must hold a manifest, a summary and a trajectory.
    missing = [p for p in paths if not (p / MANIFEST_FILE).is_file()
               or not (p / SUMMARY_FILE).is_file() or not (p / TRAJECTORY_FILE).is_file()]
    if missing:
        raise ValidationError(f"not a complete run directory: {missing[0]}")
    return list(paths)
