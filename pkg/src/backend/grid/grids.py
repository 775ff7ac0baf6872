"""
Spatial and Time Grids

Uniform node grids on a box of R^n (n = 1, 2) and on the time interval (0, T).
Node coordinates are integer multiples of the spacing, so geometric features
placed on multiples of h (interval ends, ball centres) fall exactly on nodes.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..errors import CFLViolationError, GridMismatchError


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid: node i along axis k sits at (offsets[k] + i) * spacing"""
    dimension: int
    spacing: float
    offsets: Tuple[int, ...]
    counts: Tuple[int, ...]

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"Grid dimension must be 1 or 2, got {self.dimension}")
        if self.spacing <= 0:
            raise ValueError(f"Grid spacing must be positive, got {self.spacing}")
        if len(self.offsets) != self.dimension or len(self.counts) != self.dimension:
            raise ValueError("Offsets and counts must have one entry per axis")
        if any(c < 3 for c in self.counts):
            raise ValueError(f"Need at least 3 nodes per axis, got {self.counts}")

    @classmethod
    def from_bounds(cls, lower: Sequence[float], upper: Sequence[float],
                    spacing: float) -> "SpatialGrid":
        """Smallest grid aligned on multiples of spacing that covers [lower, upper]"""
        if len(lower) != len(upper):
            raise ValueError("Lower and upper bounds differ in dimension")
        offsets, counts = [], []
        for lo, hi in zip(lower, upper):
            if hi <= lo:
                raise ValueError(f"Empty axis extent [{lo}, {hi}]")
            i0 = math.floor(lo / spacing + 1e-9)
            i1 = math.ceil(hi / spacing - 1e-9)
            offsets.append(int(i0))
            counts.append(int(i1 - i0 + 1))
        return cls(len(lower), float(spacing), tuple(offsets), tuple(counts))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def lower(self) -> Tuple[float, ...]:
        return tuple(o * self.spacing for o in self.offsets)

    @property
    def upper(self) -> Tuple[float, ...]:
        return tuple((o + c - 1) * self.spacing for o, c in zip(self.offsets, self.counts))

    @property
    def cell_volume(self) -> float:
        """h^n, the volume attached to one interior node"""
        return self.spacing ** self.dimension

    def axes(self) -> List[np.ndarray]:
        """Node coordinates along each axis"""
        return [(o + np.arange(c)) * self.spacing for o, c in zip(self.offsets, self.counts)]

    def coordinates(self) -> np.ndarray:
        """Array of shape (*shape, n) with the coordinates of every node"""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def contains(self, lower: Sequence[float], upper: Sequence[float]) -> bool:
        tol = 1e-9 * self.spacing
        return all(lo >= glo - tol and hi <= ghi + tol
                   for lo, hi, glo, ghi in zip(lower, upper, self.lower, self.upper))

    def nearest_node(self, point: Sequence[float]) -> Tuple[int, ...]:
        """Index of the node closest to point, clipped to the grid"""
        idx = []
        for x, o, c in zip(point, self.offsets, self.counts):
            i = int(round(x / self.spacing)) - o
            idx.append(min(max(i, 0), c - 1))
        return tuple(idx)

    def node_coordinate(self, index: Sequence[int]) -> np.ndarray:
        return np.array([(o + i) * self.spacing for o, i in zip(self.offsets, index)])

    def require_same(self, other: "SpatialGrid") -> None:
        if self != other:
            raise GridMismatchError(f"Grid mismatch: {self.counts}@{self.spacing} vs "
                                    f"{other.counts}@{other.spacing}")

    def to_dict(self) -> Dict:
        return {
            "dimension": self.dimension,
            "spacing": self.spacing,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "counts": list(self.counts),
        }


@dataclass(frozen=True)
class TimeGrid:
    """Uniform steps t_n = n * dt, n = 0..steps, with steps * dt = horizon"""
    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError(f"Time horizon must be positive, got {self.horizon}")
        if self.steps < 2:
            raise ValueError(f"Need at least 2 time steps, got {self.steps}")

    @classmethod
    def from_cfl(cls, horizon: float, spacing: float, cfl: float) -> "TimeGrid":
        """Time grid with dt = cfl * spacing; horizon must be a whole number of steps"""
        if cfl <= 0:
            raise CFLViolationError(f"CFL number must be positive, got {cfl}")
        exact = horizon / (cfl * spacing)
        steps = int(round(exact))
        if steps < 2 or abs(exact - steps) > 1e-6 * max(1.0, exact):
            raise ValueError(f"Horizon {horizon} is not a whole number of steps of "
                             f"cfl*h = {cfl * spacing} ({exact:.6f} steps)")
        return cls(float(horizon), steps)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def half_steps(self) -> int:
        """Index of T/2; the step count must be even"""
        if self.steps % 2:
            raise ValueError(f"T/2 is not a grid time: {self.steps} steps is odd")
        return self.steps // 2

    def index_of(self, t: float) -> int:
        """Grid index of time t, which must lie on the grid"""
        exact = t / self.dt
        n = int(round(exact))
        if abs(exact - n) > 1e-6 or n < 0 or n > self.steps:
            raise ValueError(f"Time {t} is not on the time grid (dt={self.dt})")
        return n

    def snap(self, t: float, up: bool) -> float:
        """Nearest grid time at or above (up) or at or below t"""
        exact = t / self.dt
        n = math.ceil(exact - 1e-6) if up else math.floor(exact + 1e-6)
        return min(max(n, 0), self.steps) * self.dt

    def check_cfl(self, grid: SpatialGrid) -> None:
        limit = grid.spacing / math.sqrt(grid.dimension)
        if self.dt > limit * (1 + 1e-12):
            raise CFLViolationError(f"dt={self.dt:.6g} exceeds h/sqrt(n)={limit:.6g}")

    def trapezoid_weights(self, start: int = 0, stop: int = None) -> np.ndarray:
        """Trapezoid weights over steps [start, stop], zero elsewhere"""
        stop = self.steps if stop is None else stop
        w = np.zeros(self.steps + 1)
        if stop > start:
            w[start:stop + 1] = self.dt
            w[start] *= 0.5
            w[stop] *= 0.5
        elif stop == start:
            w[start] = self.dt
        return w

    def to_dict(self) -> Dict:
        return {"horizon": self.horizon, "steps": self.steps, "dt": self.dt}
