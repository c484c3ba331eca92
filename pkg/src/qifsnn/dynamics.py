"""Zero-input analysis of the discrete QIF map ``u -> a (u - u_1)(u - u_2)``."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .neuron import QifParams, qif_step

INCONCLUSIVE_BAND = 1e-9


class Stability(str, enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    INCONCLUSIVE = "Inconclusive"


class Region(str, enum.Enum):
    GREEN = "Green"
    BLUE = "Blue"
    RED = "Red"


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_STEPS = "MaxSteps"
    DIVERGED = "Diverged"


@dataclass(frozen=True)
class StabilityVerdict:
    fixed_point: float
    derivative: float
    label: Stability


@dataclass
class Trajectory:
    points: list[tuple[int, float]] = field(default_factory=list)
    terminated: Termination = Termination.MAX_STEPS

    @property
    def values(self) -> np.ndarray:
        return np.array([u for _, u in self.points])


def stability_derivative(u, p: QifParams):
    """Slope of the zero-input map, ``2 a u - a (u_1 + u_2)``."""
    return 2.0 * p.a * u - p.a * (p.u_1 + p.u_2)


def label_stability(derivative: float, tol: float = INCONCLUSIVE_BAND) -> Stability:
    mag = abs(derivative)
    if abs(mag - 1.0) <= tol:
        return Stability.INCONCLUSIVE
    return Stability.STABLE if mag < 1.0 else Stability.UNSTABLE


def classify_fixed_points(p: QifParams, tol: float = INCONCLUSIVE_BAND) -> list[StabilityVerdict]:
    """Stability verdicts for ``u_r`` and ``u_c`` (a single verdict if they coincide)."""
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    points = [p.u_r] if p.u_r == p.u_c else [p.u_r, p.u_c]
    verdicts = []
    for u in points:
        g = stability_derivative(u, p)
        verdicts.append(StabilityVerdict(u, g, label_stability(g, tol)))
    return verdicts


def classify_region(u: float, p: QifParams) -> Region:
    lo, hi = min(p.u_1, p.u_2), max(p.u_1, p.u_2)
    if u > hi:
        return Region.GREEN
    if u < lo:
        return Region.RED
    return Region.BLUE


def u_min(p: QifParams) -> float:
    """Vertex value of the zero-input parabola, ``-a (u_1 - u_2)**2 / 4``."""
    return -p.a * (p.u_1 - p.u_2) ** 2 / 4.0


def cobweb_trajectory(
    u0: float,
    p: QifParams,
    max_steps: int = 1000,
    conv_tol: float = 1e-9,
    div_bound: float = 1e3,
) -> Trajectory:
    """Iterate the zero-input map from ``u0`` until convergence, divergence or ``max_steps``."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if not conv_tol > 0:
        raise ValueError("conv_tol must be > 0")
    if not div_bound > p.u_c:
        raise ValueError(f"div_bound must exceed u_c={p.u_c}")
    traj = Trajectory(points=[(0, float(u0))])
    u = float(u0)
    for k in range(1, max_steps + 1):
        if abs(u) > div_bound or not math.isfinite(u):
            traj.terminated = Termination.DIVERGED
            return traj
        u_next = float(qif_step(u, 0.0, p))
        traj.points.append((k, u_next))
        if abs(u_next - u) < conv_tol:
            traj.terminated = Termination.CONVERGED
            return traj
        u = u_next
    if abs(u) > div_bound or not math.isfinite(u):
        traj.terminated = Termination.DIVERGED
    return traj


def phase_portrait_samples(grid, p: QifParams) -> list[tuple[float, float]]:
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    delta = qif_step(grid, 0.0, p) - grid
    return list(zip(grid.tolist(), delta.tolist()))


COBWEB_HEADER = ("trajectory", "u0", "step", "u", "u_next")
PHASE_HEADER = ("u", "delta")


def cobweb_rows(trajectories: list[Trajectory]):
    """Yield ``(trajectory, u0, step, u, u_next)`` rows, one per map application."""
    for idx, traj in enumerate(trajectories):
        pts = traj.points
        u0 = pts[0][1]
        for (k, u), (_, u_next) in zip(pts, pts[1:]):
            yield idx, u0, k, u, u_next


def write_cobweb_csv(fh, trajectories: list[Trajectory]) -> None:
    writer = csv.writer(fh)
    writer.writerow(COBWEB_HEADER)
    for row in cobweb_rows(trajectories):
        writer.writerow([row[0], repr(row[1]), row[2], repr(row[3]), repr(row[4])])


def write_phase_csv(fh, samples: list[tuple[float, float]]) -> None:
    writer = csv.writer(fh)
    writer.writerow(PHASE_HEADER)
    for u, delta in samples:
        writer.writerow([repr(u), repr(delta)])
