"""
Fields and Boundary Data

ScalarField holds one complex value per node. BoundaryData holds one complex
value per (time step, observation node) pair and is the currency exchanged
between the measurement operator, time reversal, J, K and the controls.
"""
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

from ..errors import GridMismatchError, RegionError, SupportViolationError
from .grids import SpatialGrid, TimeGrid

if TYPE_CHECKING:
    from .regions import Region


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Complex node values on a SpatialGrid"""
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.grid.shape:
            raise GridMismatchError(f"Field shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Field contains non-finite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: SpatialGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_function(cls, grid: SpatialGrid, fn) -> "ScalarField":
        """fn maps an array of coordinates (..., n) to values"""
        return cls(grid, fn(grid.coordinates()))

    def restrict(self, region: "Region") -> "ScalarField":
        self.grid.require_same(region.grid)
        return ScalarField(self.grid, np.where(region.mask, self.values, 0.0))

    def at(self, index) -> complex:
        return complex(self.values[tuple(index)])

    def __add__(self, other: "ScalarField") -> "ScalarField":
        self.grid.require_same(other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        self.grid.require_same(other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, scalar) -> "ScalarField":
        return ScalarField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def conj(self) -> "ScalarField":
        return ScalarField(self.grid, np.conj(self.values))


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """
    Space-time data on (0,T) x omega.

    values has shape (steps + 1, omega nodes), columns ordered as
    region.flat_indices. window = (first, last) step indices; values outside
    the window are zero.
    """
    region: "Region"
    time_grid: TimeGrid
    values: np.ndarray
    window: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        expected = (self.time_grid.steps + 1, self.region.node_count)
        if values.shape != expected:
            raise GridMismatchError(f"Boundary data shape {values.shape}, expected {expected}")
        window = self.window if self.window is not None else (0, self.time_grid.steps)
        i0, i1 = int(window[0]), int(window[1])
        if not 0 <= i0 <= i1 <= self.time_grid.steps:
            raise SupportViolationError(f"Window {window} outside [0, {self.time_grid.steps}]")
        outside = np.concatenate([values[:i0], values[i1 + 1:]])
        if outside.size and np.any(outside != 0):
            raise SupportViolationError(f"Boundary data nonzero outside window steps [{i0}, {i1}]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "window", (i0, i1))

    @classmethod
    def zeros(cls, region: "Region", time_grid: TimeGrid) -> "BoundaryData":
        return cls(region, time_grid, np.zeros((time_grid.steps + 1, region.node_count), dtype=complex))

    @classmethod
    def from_function(cls, region: "Region", time_grid: TimeGrid, fn,
                      window: Optional[Tuple[float, float]] = None) -> "BoundaryData":
        """
        Sample fn(t, x) on the time grid and the region nodes.

        fn receives t with shape (steps+1, 1) and x with shape (1, nodes, n)
        and must broadcast to (steps+1, nodes). An optional window in time
        units zeroes the samples outside it.
        """
        t = time_grid.times[:, None]
        x = region.coordinates()[None, :, :]
        values = np.broadcast_to(np.asarray(fn(t, x), dtype=complex),
                                 (time_grid.steps + 1, region.node_count)).copy()
        if window is None:
            return cls(region, time_grid, values)
        i0, i1 = time_grid.index_of(window[0]), time_grid.index_of(window[1])
        values[:i0] = 0.0
        values[i1 + 1:] = 0.0
        return cls(region, time_grid, values, (i0, i1))

    @property
    def steps(self) -> int:
        return self.time_grid.steps

    def like(self, values: np.ndarray, window: Optional[Tuple[int, int]] = None) -> "BoundaryData":
        """New data on the same region and time grid"""
        return BoundaryData(self.region, self.time_grid, values, window)

    def _check(self, other: "BoundaryData") -> None:
        if self.region is not other.region and not (
                self.region.grid == other.region.grid
                and np.array_equal(self.region.mask, other.region.mask)):
            raise GridMismatchError("Boundary data live on different observation regions")
        if self.time_grid != other.time_grid:
            raise GridMismatchError("Boundary data live on different time grids")

    def _joined_window(self, other: "BoundaryData") -> Tuple[int, int]:
        return min(self.window[0], other.window[0]), max(self.window[1], other.window[1])

    def __add__(self, other: "BoundaryData") -> "BoundaryData":
        self._check(other)
        return self.like(self.values + other.values, self._joined_window(other))

    def __sub__(self, other: "BoundaryData") -> "BoundaryData":
        self._check(other)
        return self.like(self.values - other.values, self._joined_window(other))

    def __mul__(self, scalar) -> "BoundaryData":
        return self.like(self.values * scalar, self.window)

    __rmul__ = __mul__

    def __neg__(self) -> "BoundaryData":
        return self.like(-self.values, self.window)

    def conj(self) -> "BoundaryData":
        return self.like(np.conj(self.values), self.window)

    def restrict_window(self, first: int, last: int) -> "BoundaryData":
        """Zero the values outside steps [first, last]"""
        values = self.values.copy()
        values[:first] = 0.0
        values[last + 1:] = 0.0
        return self.like(values, (first, last))

    def restrict_nodes(self, mask: np.ndarray) -> "BoundaryData":
        """Zero the columns whose node is not in mask (a full-grid boolean mask)"""
        keep = mask.reshape(-1)[self.region.flat_indices]
        return self.like(self.values * keep[None, :], self.window)

    def support_steps(self) -> Tuple[int, int]:
        """Smallest step range containing all nonzero values, or the window if zero"""
        rows = np.flatnonzero(np.any(self.values != 0, axis=1))
        if rows.size == 0:
            return self.window
        return int(rows[0]), int(rows[-1])

    def norm(self, window: Optional[Tuple[float, float]] = None) -> float:
        return float(np.sqrt(max(boundary_inner(self, self, window).real, 0.0)))

    def is_zero(self) -> bool:
        return not np.any(self.values)


def l2_inner(a: ScalarField, b: ScalarField, region: "Region") -> complex:
    """Trapezoid-weighted sum of a * conj(b) over region"""
    a.grid.require_same(b.grid)
    a.grid.require_same(region.grid)
    return complex(np.sum(region.weights * a.values * np.conj(b.values)))


def l2_norm(a: ScalarField, region: "Region") -> float:
    return float(np.sqrt(max(l2_inner(a, a, region).real, 0.0)))


def h1_norm(a: ScalarField, region: "Region") -> float:
    """sqrt of the weighted sum of |a|^2 + |grad a|^2, gradient by centred differences"""
    a.grid.require_same(region.grid)
    if region.is_empty or min(region.axis_widths()) < 3:
        raise RegionError(f"Region '{region.name}' must be at least 3 nodes wide per axis")
    grads = np.gradient(a.values, a.grid.spacing, edge_order=2)
    if a.grid.dimension == 1:
        grads = [grads]
    density = np.abs(a.values) ** 2 + sum(np.abs(g) ** 2 for g in grads)
    return float(np.sqrt(np.sum(region.weights * density)))


def time_weights(time_grid: TimeGrid, window: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Trapezoid time weights over a window given in time units (default the full horizon)"""
    if window is None:
        return time_grid.trapezoid_weights()
    i0, i1 = time_grid.index_of(window[0]), time_grid.index_of(window[1])
    if i1 < i0:
        raise ValueError(f"Window {window} is reversed")
    return time_grid.trapezoid_weights(i0, i1)


def boundary_inner(f: BoundaryData, g: BoundaryData,
                   window: Optional[Tuple[float, float]] = None) -> complex:
    """Space-time trapezoid pairing of f and g over window x omega"""
    f._check(g)
    tw = time_weights(f.time_grid, window)
    sw = f.region.node_weights
    return complex(np.einsum("n,i,ni->", tw, sw, f.values * np.conj(g.values)))


def boundary_inner_steps(f: BoundaryData, g: BoundaryData, first: int, last: int) -> complex:
    """boundary_inner over a window given by step indices"""
    f._check(g)
    tw = f.time_grid.trapezoid_weights(first, last)
    sw = f.region.node_weights
    return complex(np.einsum("n,i,ni->", tw, sw, f.values * np.conj(g.values)))
