# Track ingestion, resampling and lateral limits for racegear.
# Also ships the bundled synthetic circuit and the short braking/corner/acceleration
# sections used to validate the iterative algorithm against branch-and-bound.
#
# Everything here is pure; file access is limited to load_track and write_track_csv.

from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

from racegear.errors import TrackParseError, ValidationError
from racegear.models import TrackProfile, VehicleSpec

BUNDLED_TRACK_NAME = "synthetic-4232"
BUNDLED_TRACK_LENGTH = 4232.0
DEFAULT_STEP = 4.0

_FIELD_SPLIT_RE = re.compile(r"[,;\s]+")

# (length m, curvature 1/m); positive curvature turns right.
# The final straight is stretched so the lap is exactly BUNDLED_TRACK_LENGTH long.
_CIRCUIT_LAYOUT: Tuple[Tuple[float, float], ...] = (
    (650.0, 0.0),          # main straight
    (90.0, 1 / 35.0),      # hairpin
    (250.0, 0.0),
    (150.0, -1 / 120.0),
    (180.0, 0.0),
    (110.0, 1 / 60.0),
    (400.0, 0.0),
    (220.0, -1 / 200.0),
    (160.0, 0.0),
    (100.0, 1 / 45.0),
    (300.0, 0.0),
    (140.0, -1 / 80.0),
    (220.0, 0.0),
    (200.0, 1 / 150.0),
    (350.0, 0.0),
    (120.0, -1 / 55.0),
    (0.0, 0.0),            # filler straight
    (150.0, 1 / 90.0),     # last corner onto the main straight
)
_SMOOTHING_WINDOW = 21


def _parse_fields(line: str) -> List[str]:
    return [f for f in _FIELD_SPLIT_RE.split(line.strip()) if f]


def read_track_samples(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    # Read the raw two-column (arc length m, curvature 1/m) records.
    # A single non-numeric first record is treated as a header.
    arc: List[float] = []
    curvature: List[float] = []
    first_record = True
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = _parse_fields(line)
            try:
                values = [float(f) for f in fields]
            except ValueError:
                if first_record:
                    first_record = False
                    continue
                raise TrackParseError(lineno, f"non-numeric record {line!r}") from None
            first_record = False
            if len(values) != 2:
                raise TrackParseError(lineno, f"expected 2 columns, found {len(values)}")
            if not all(np.isfinite(values)):
                raise TrackParseError(lineno, "non-finite value")
            arc.append(values[0])
            curvature.append(values[1])
    return np.asarray(arc), np.asarray(curvature)


def resample(
    arc: np.ndarray,
    curvature: np.ndarray,
    target_step: float,
    name: str = "track",
) -> TrackProfile:
    """Linearly interpolate curvature onto a uniform grid starting at the first sample."""
    if not target_step > 0:
        raise ValidationError(f"target_step must be positive, got {target_step}")
    if arc.size < 2:
        raise ValidationError("a track file needs at least 2 records")
    if np.any(np.diff(arc) <= 0):
        bad = int(np.argmax(np.diff(arc) <= 0)) + 1
        raise ValidationError(f"arc length must increase strictly (record {bad + 1})")

    total = float(arc[-1] - arc[0])
    n_steps = int(round(total / target_step))
    if n_steps < 2:
        raise ValidationError(
            f"track of {total:g} m gives fewer than 2 steps at {target_step:g} m"
        )
    step = total / n_steps
    grid = arc[0] + step * np.arange(n_steps)
    return TrackProfile(step_length=step, curvature=np.interp(grid, arc, curvature), name=name)


def load_track(path: Path, target_step: float = DEFAULT_STEP) -> TrackProfile:
    if not path.exists():
        raise FileNotFoundError(f"Track file not found: {path}")
    arc, curvature = read_track_samples(path)
    return resample(arc, curvature, target_step, name=path.stem)


def write_track_csv(path: Path, arc: np.ndarray, curvature: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arc_length", "curvature"])
        for s, k in zip(arc, curvature):
            writer.writerow([repr(float(s)), repr(float(k))])


def max_kinetic_energy(track: TrackProfile, vehicle: VehicleSpec, mass: float) -> np.ndarray:
    """Per-step kinetic-energy cap (J) from the speed cap and the lateral-acceleration limit."""
    cap = np.full(track.n_steps, 0.5 * mass * vehicle.speed_cap**2)
    kappa = np.abs(track.curvature)
    curved = kappa > 0
    cap[curved] = np.minimum(
        cap[curved], mass * vehicle.lateral_accel_max / (2.0 * kappa[curved])
    )
    return cap


def synthetic_circuit_samples(resolution: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    # Piecewise-constant corners smoothed with a periodic moving average so corner
    # entries and exits ramp instead of jumping.
    fixed = sum(length for length, _ in _CIRCUIT_LAYOUT)
    filler = BUNDLED_TRACK_LENGTH - fixed
    lengths = [length if length > 0 else filler for length, _ in _CIRCUIT_LAYOUT]

    n = int(round(BUNDLED_TRACK_LENGTH / resolution))
    arc = np.arange(n + 1) * resolution
    edges = np.cumsum([0.0] + lengths)
    segment = np.clip(np.searchsorted(edges, arc[:-1], side="right") - 1, 0, len(lengths) - 1)
    raw = np.array([_CIRCUIT_LAYOUT[i][1] for i in segment])

    half = _SMOOTHING_WINDOW // 2
    padded = np.concatenate([raw[-half:], raw, raw[:half]])
    kernel = np.ones(_SMOOTHING_WINDOW) / _SMOOTHING_WINDOW
    smooth = np.convolve(padded, kernel, mode="valid")
    # Close the loop: the last sample repeats the first.
    return arc, np.append(smooth, smooth[0])


def bundled_track(target_step: float = DEFAULT_STEP) -> TrackProfile:
    arc, curvature = synthetic_circuit_samples()
    return resample(arc, curvature, target_step, name=BUNDLED_TRACK_NAME)


def _braking_corner(n_steps: int) -> TrackProfile:
    # 60 m braking zone, 60 m corner of radius 45 m, 60 m acceleration zone.
    length, radius = 180.0, 45.0
    step = length / n_steps
    starts = step * np.arange(n_steps)
    curvature = np.where((starts >= 60.0 - 1e-9) & (starts < 120.0 - 1e-9), 1.0 / radius, 0.0)
    return TrackProfile(step_length=step, curvature=curvature, name=f"braking-corner-{n_steps}")


def _chicane(n_steps: int) -> TrackProfile:
    # Braking zone into a left-right pair, then a short acceleration zone.
    length = 200.0
    step = length / n_steps
    starts = step * np.arange(n_steps)
    curvature = np.select(
        [(starts >= 50.0) & (starts < 100.0), (starts >= 100.0) & (starts < 150.0)],
        [-1.0 / 60.0, 1.0 / 60.0],
        0.0,
    )
    return TrackProfile(step_length=step, curvature=curvature, name=f"chicane-{n_steps}")


SECTION_FIXTURES: Dict[str, Callable[[int], TrackProfile]] = {
    "braking-corner": _braking_corner,
    "chicane": _chicane,
}


def section_fixture(name: str, n_steps: int) -> TrackProfile:
    try:
        builder = SECTION_FIXTURES[name]
    except KeyError:
        known = ", ".join(sorted(SECTION_FIXTURES))
        raise ValidationError(f"unknown section fixture '{name}' (known: {known})") from None
    if n_steps < 2:
        raise ValidationError("a section needs at least 2 steps")
    return builder(n_steps)
