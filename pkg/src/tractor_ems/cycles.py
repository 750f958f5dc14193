"""Duty cycles: power-demand traces read from CSV or synthesised from segments."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError

CSV_HEADER = ("t_s", "p_dem_w")


@dataclass(frozen=True)
class DutyCycle:
    dt: float
    demand: tuple[float, ...]

    def __post_init__(self):
        if not self.dt > 0:
            raise ParseError(f"dt must be positive, got {self.dt}")
        if len(self.demand) == 0:
            raise ParseError("duty cycle has no samples")
        for i, p in enumerate(self.demand):
            if not np.isfinite(p) or p < 0:
                raise ParseError(f"demand must be finite and >= 0, got {p}", row=i + 2)

    def __len__(self):
        return len(self.demand)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.demand, dtype=float)

    @property
    def duration(self) -> float:
        return self.dt * len(self.demand)


@dataclass(frozen=True)
class CycleSpec:
    """Parameters of the piecewise-constant synthetic cycle generator.

    Each of ``segments`` blocks holds a level drawn uniformly from
    ``[level_lo, level_hi]``; per-sample gaussian noise of std ``noise`` is
    added and every sample is rounded to a multiple of ``resolution`` watts
    so that engine-off splits are representable on the action grid.
    """

    steps: int = 120
    segments: int = 6
    level_lo: float = 4.0e4
    level_hi: float = 2.4e5
    noise: float = 5.0e3
    resolution: float = 7.5e3
    dt: float = 1.0


def generate_duty_cycle(spec: CycleSpec, rng: np.random.Generator) -> DutyCycle:
    if spec.steps < 1 or spec.segments < 1:
        raise ParseError("generator needs at least one step and one segment")
    bounds = np.linspace(0, spec.steps, spec.segments + 1).round().astype(int)
    levels = rng.uniform(spec.level_lo, spec.level_hi, size=spec.segments)
    demand = np.empty(spec.steps)
    for level, lo, hi in zip(levels, bounds[:-1], bounds[1:]):
        demand[lo:hi] = level
    demand += rng.normal(0.0, spec.noise, size=spec.steps) if spec.noise > 0 else 0.0
    demand = np.clip(demand, spec.level_lo, spec.level_hi)
    if spec.resolution > 0:
        demand = np.round(demand / spec.resolution) * spec.resolution
    return DutyCycle(dt=float(spec.dt), demand=tuple(float(p) for p in demand))


def load_duty_cycle(path) -> DutyCycle:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=1) from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(CSV_HEADER)}", row=1)
        times, demand = [], []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: expected 2 columns", row=row_no)
            try:
                t, p = float(row[0]), float(row[1])
            except ValueError:
                raise ParseError(f"{path}: non-numeric value", row=row_no) from None
            if not np.isfinite(p) or p < 0:
                raise ParseError(f"{path}: negative or non-finite power {row[1]}", row=row_no)
            if times:
                dt_here = t - times[-1]
                if len(times) == 1:
                    if not dt_here > 0:
                        raise ParseError(f"{path}: timestamps must increase", row=row_no)
                else:
                    dt0 = times[1] - times[0]
                    if abs(dt_here - dt0) > 1e-9 * max(1.0, abs(dt0)):
                        raise ParseError(f"{path}: non-uniform timestamp spacing", row=row_no)
            times.append(t)
            demand.append(p)
    if not demand:
        raise ParseError(f"{path}: no samples", row=2)
    # a single sample carries no spacing information
    dt = times[1] - times[0] if len(times) > 1 else 1.0
    return DutyCycle(dt=dt, demand=tuple(demand))


def save_duty_cycle(cycle: DutyCycle, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, p in enumerate(cycle.demand):
            w.writerow([repr(i * cycle.dt), repr(p)])
