"""
Potentials

Real potentials q on the spatial grid, built from families of Gaussian bumps.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import GridMismatchError
from ..grid.grids import SpatialGrid
from ..grid.regions import Region

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaussianBump:
    """amplitude * exp(-|x - center|^2 / (2 width^2))"""
    center: Sequence[float]
    width: float
    amplitude: float

    def evaluate(self, coords: np.ndarray) -> np.ndarray:
        diff = coords - np.asarray(self.center, dtype=float)
        r2 = np.sum(diff * diff, axis=-1)
        return self.amplitude * np.exp(-r2 / (2.0 * self.width ** 2))


@dataclass(frozen=True, eq=False)
class Potential:
    """
    Real node values of q with optional smoothness metadata.

    bound is the C^m bound M and smoothness the order m; both are
    informational and only the sup-norm bound is checked.
    """
    grid: SpatialGrid
    values: np.ndarray
    bound: Optional[float] = None
    smoothness: int = 2
    pid: str = "q"
    bumps: List[GaussianBump] = field(default_factory=list)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridMismatchError(f"Potential shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"Potential '{self.pid}' has non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.bound is not None and self.sup_norm > self.bound * (1 + 1e-12):
            raise ValueError(f"Potential '{self.pid}' sup-norm {self.sup_norm:.4g} exceeds bound {self.bound}")

    @classmethod
    def zero(cls, grid: SpatialGrid, pid: str = "zero") -> "Potential":
        return cls(grid, np.zeros(grid.shape), pid=pid)

    @classmethod
    def constant(cls, grid: SpatialGrid, value: float, pid: str = "const") -> "Potential":
        return cls(grid, np.full(grid.shape, float(value)), pid=pid)

    @classmethod
    def from_bumps(cls, grid: SpatialGrid, bumps: Sequence[GaussianBump], pid: str = "q",
                   bound: Optional[float] = None) -> "Potential":
        coords = grid.coordinates()
        values = np.zeros(grid.shape)
        for bump in bumps:
            values += bump.evaluate(coords)
        logger.debug(f"Potential '{pid}': {len(bumps)} bumps, sup {np.abs(values).max():.4g}")
        return cls(grid, values, bound=bound, pid=pid, bumps=list(bumps))

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def at(self, index) -> float:
        return float(self.values[tuple(index)])

    def l2_distance(self, other: "Potential", region: Region) -> float:
        """||self - other||_{L2(region)} with trapezoid weights"""
        self.grid.require_same(other.grid)
        diff = self.values - other.values
        return float(np.sqrt(np.sum(region.weights * diff * diff)))

    def scaled(self, factor: float, pid: Optional[str] = None) -> "Potential":
        bumps = [GaussianBump(b.center, b.width, b.amplitude * factor) for b in self.bumps]
        return Potential(self.grid, self.values * factor, None, self.smoothness,
                         pid or f"{self.pid}*{factor:g}", bumps)

    def to_dict(self) -> Dict:
        return {
            "id": self.pid,
            "sup_norm": self.sup_norm,
            "bound": self.bound,
            "smoothness": self.smoothness,
            "bumps": [{"center": list(b.center), "width": b.width, "amplitude": b.amplitude}
                      for b in self.bumps],
        }
