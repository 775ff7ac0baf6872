"""
Wave Solver

Explicit leapfrog scheme for (d_t^2 - Delta + q) u = f with zero Cauchy data
on a padded box. The box is large enough that the discrete domain of
dependence never reaches its edge within the horizon, so the zero Dirichlet
frame is never felt.

Sources living on the observation region are injected with the region's
quadrature weights (value * w_i / h^n). Together with the half-weight first
step u^1 = dt^2 f^0 / 2 this makes the discrete measurement map satisfy
Lambda* = R Lambda R exactly in the trapezoid pairing.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import NumericalFailure, SupportViolationError
from ..grid.fields import BoundaryData, ScalarField
from ..grid.grids import SpatialGrid, TimeGrid
from ..grid.regions import Region
from .potential import Potential

logger = logging.getLogger(__name__)


@dataclass
class SolverSettings:
    """Storage and batching policy"""
    storage: str = "auto"  # auto, full, steps
    max_full_steps: int = 4000
    max_stored_values: int = 40_000_000
    batch_size: int = 32


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """
    Stored snapshots of one solution.

    values has shape (len(steps), *grid.shape). trace optionally holds the
    solution on an observation region at every step, shape (steps+1, nodes).
    """
    grid: SpatialGrid
    time_grid: TimeGrid
    steps: np.ndarray
    values: np.ndarray
    trace: Optional[np.ndarray] = None
    trace_region: Optional[Region] = None

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=int)
        if np.any(np.diff(steps) <= 0):
            raise ValueError("Stored steps must be strictly increasing")
        if self.values.shape != (len(steps),) + self.grid.shape:
            raise ValueError(f"Snapshot array {self.values.shape} does not match "
                             f"{len(steps)} steps on grid {self.grid.shape}")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "_lookup", {int(n): k for k, n in enumerate(steps)})

    def has_step(self, n: int) -> bool:
        return int(n) in self._lookup

    def snapshot(self, n: int) -> ScalarField:
        if not self.has_step(n):
            raise KeyError(f"Step {n} not stored (stored: {len(self.steps)} steps)")
        return ScalarField(self.grid, self.values[self._lookup[int(n)]])

    def at_time(self, t: float) -> ScalarField:
        return self.snapshot(self.time_grid.index_of(t))

    def series(self, index: Sequence[int]) -> np.ndarray:
        """Values at one node over the stored steps"""
        return self.values[(slice(None),) + tuple(index)]

    def boundary_trace(self) -> BoundaryData:
        if self.trace is None or self.trace_region is None:
            raise ValueError("Solution was computed without an observation region")
        return BoundaryData(self.trace_region, self.time_grid, self.trace)


class DistributedSource:
    """
    Source defined on the whole grid, evaluated lazily per step.

    fn(t, coords) returns complex values of shape grid.shape for the scalar
    time t and coords of shape (*grid.shape, n).
    """

    def __init__(self, grid: SpatialGrid, time_grid: TimeGrid,
                 fn: Callable[[float, np.ndarray], np.ndarray]):
        self.grid = grid
        self.time_grid = time_grid
        self._fn = fn
        self._coords = grid.coordinates()

    @classmethod
    def from_array(cls, grid: SpatialGrid, time_grid: TimeGrid, values: np.ndarray) -> "DistributedSource":
        values = np.asarray(values, dtype=complex)
        if values.shape != (time_grid.steps + 1,) + grid.shape:
            raise ValueError(f"Source array {values.shape} does not match grids")
        source = cls(grid, time_grid, lambda t, x: None)
        source._array = values
        return source

    def at_step(self, n: int) -> np.ndarray:
        if hasattr(self, "_array"):
            return self._array[n]
        return np.broadcast_to(np.asarray(self._fn(self.time_grid.dt * n, self._coords), dtype=complex),
                               self.grid.shape)


Source = Union[BoundaryData, DistributedSource]


def discrete_laplacian(values: np.ndarray, spacing: float, batch_axes: int = 0) -> np.ndarray:
    """(2n+1)-point Laplacian with zero values outside the array"""
    lap = np.zeros_like(values)
    ndim = values.ndim - batch_axes
    for axis in range(batch_axes, batch_axes + ndim):
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        lap[tuple(hi)] += values[tuple(lo)]
        lap[tuple(lo)] += values[tuple(hi)]
    lap -= 2 * ndim * values
    return lap / spacing ** 2


class WaveSolver:
    """
    Leapfrog marcher for one potential on one pair of grids.

    All marches are batched over a leading axis of real rows; complex
    sources are split into real and imaginary rows.
    """

    def __init__(self, potential: Potential, time_grid: TimeGrid,
                 settings: Optional[SolverSettings] = None):
        self.potential = potential
        self.grid = potential.grid
        self.time_grid = time_grid
        self.settings = settings or SolverSettings()
        time_grid.check_cfl(self.grid)
        dt = time_grid.dt
        self._dt2 = dt * dt
        self._r2 = (dt / self.grid.spacing) ** 2
        self._center = 2.0 - 2 * self.grid.dimension * self._r2 - self._dt2 * potential.values

    def _neighbour_sum(self, u: np.ndarray, out: np.ndarray) -> np.ndarray:
        out.fill(0.0)
        for axis in range(1, u.ndim):
            lo = [slice(None)] * u.ndim
            hi = [slice(None)] * u.ndim
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            out[tuple(hi)] += u[tuple(lo)]
            out[tuple(lo)] += u[tuple(hi)]
        return out

    def _wants_full_storage(self, rows: int, steps: int) -> bool:
        mode = self.settings.storage
        if mode == "full":
            return True
        if mode == "steps":
            return False
        return (steps <= self.settings.max_full_steps
                and rows * (steps + 1) * self.grid.size <= self.settings.max_stored_values)

    def march(self, add_source: Callable[[int, np.ndarray, float], None], rows: int,
              steps: Optional[int] = None, observe: Optional[np.ndarray] = None,
              store_steps: Optional[Iterable[int]] = None,
              callback: Optional[Callable[[int, np.ndarray], Optional[bool]]] = None
              ) -> Tuple[Optional[np.ndarray], Dict[int, np.ndarray]]:
        """
        Run the scheme for real rows.

        add_source(n, u_flat, factor) adds factor * f^n to the flattened
        state u_flat of shape (rows, size). observe holds flat node indices
        traced at every step. Returns (trace, snapshots by step).
        """
        nt = self.time_grid.steps if steps is None else int(steps)
        if not 0 <= nt <= self.time_grid.steps:
            raise ValueError(f"Cannot march {nt} steps on a grid of {self.time_grid.steps}")
        shape = (rows,) + self.grid.shape
        full = store_steps is None and self._wants_full_storage(rows, nt)
        if full:
            wanted = set(range(nt + 1))
        else:
            wanted = set(int(n) for n in (store_steps if store_steps is not None else [nt]))

        u_nm1 = np.zeros(shape)
        u_n = np.zeros(shape)
        u = np.zeros(shape)
        nb = np.zeros(shape)
        trace = None
        if observe is not None:
            trace = np.zeros((rows, self.time_grid.steps + 1, len(observe)))
        stored: Dict[int, np.ndarray] = {}
        if 0 in wanted:
            stored[0] = u_n.copy()
        if callback is not None:
            callback(0, u_n)

        for n in range(nt):
            if n == 0:
                # special first step: u^1 = dt^2 f^0 / 2 from zero Cauchy data
                u.fill(0.0)
                add_source(0, u.reshape(rows, -1), 0.5 * self._dt2)
            else:
                self._neighbour_sum(u_n, nb)
                np.multiply(self._center, u_n, out=u)
                u += self._r2 * nb
                u -= u_nm1
                add_source(n, u.reshape(rows, -1), self._dt2)
            if trace is not None:
                trace[:, n + 1, :] = u.reshape(rows, -1)[:, observe]
            if n + 1 in wanted:
                stored[n + 1] = u.copy()
            if callback is not None and callback(n + 1, u):
                break
            u, u_n, u_nm1 = u_nm1, u, u_n

        if not np.all(np.isfinite(u_n)):
            raise NumericalFailure("Leapfrog march produced non-finite values")
        return trace, stored

    @staticmethod
    def _split(values: np.ndarray) -> Tuple[np.ndarray, bool]:
        """Stack real and imaginary parts along the leading axis"""
        if not np.any(values.imag):
            return np.ascontiguousarray(values.real), False
        return np.concatenate([values.real, values.imag], axis=0), True

    @staticmethod
    def _join(real_rows: np.ndarray, has_imag: bool, batch: int) -> np.ndarray:
        if has_imag:
            return real_rows[:batch] + 1j * real_rows[batch:]
        return real_rows.astype(complex)

    def _check_reach(self, region: Region, steps: int) -> None:
        """Sources on region must stay steps + 2 cells away from the box edge"""
        idx = np.array(np.unravel_index(region.flat_indices, self.grid.shape))
        counts = np.array(self.grid.shape)[:, None]
        margin = int(np.min(np.minimum(idx, counts - 1 - idx))) if idx.size else 0
        if margin < steps + 2:
            raise SupportViolationError(
                f"Source region '{region.name}' is {margin} cells from the box edge; "
                f"{steps} steps need at least {steps + 2}")

    def observe_batch(self, values: np.ndarray, region: Region,
                      steps: Optional[int] = None) -> np.ndarray:
        """
        Measurement map on a batch: sources (B, nt+1, nodes) on region,
        returns the solutions traced on region, same shape, zero past steps.
        """
        values = np.asarray(values, dtype=complex)
        if values.ndim == 2:
            values = values[None]
        nt = self.time_grid.steps if steps is None else int(steps)
        self._check_reach(region, nt)
        out = np.zeros(values.shape, dtype=complex)
        scale = region.node_weights / self.grid.cell_volume
        idx = region.flat_indices
        chunk = max(1, self.settings.batch_size)
        for start in range(0, values.shape[0], chunk):
            block = values[start:start + chunk]
            rows_data, has_imag = self._split(block)
            rows_data = rows_data * scale[None, None, :]

            def add_source(n, u_flat, factor, data=rows_data):
                u_flat[:, idx] += factor * data[:, n, :]

            trace, _ = self.march(add_source, rows_data.shape[0], nt, observe=idx, store_steps=[])
            out[start:start + chunk] = self._join(trace, has_imag, block.shape[0])
        logger.debug(f"Observed batch of {values.shape[0]} sources over {nt} steps")
        return out

    def solve(self, source: Source, steps: Optional[int] = None,
              store_steps: Optional[Iterable[int]] = None, observe: Optional[Region] = None,
              callback: Optional[Callable[[int, np.ndarray], Optional[bool]]] = None) -> SpaceTimeField:
        """Solve for one source; snapshots stored per the storage policy"""
        nt = self.time_grid.steps if steps is None else int(steps)
        if isinstance(source, BoundaryData):
            if source.time_grid != self.time_grid:
                raise ValueError("Source lives on a different time grid")
            self.grid.require_same(source.region.grid)
            self._check_reach(source.region, nt)
            data, has_imag = self._split(source.values[None])
            data = data * (source.region.node_weights / self.grid.cell_volume)[None, None, :]
            idx = source.region.flat_indices

            def add_source(n, u_flat, factor):
                u_flat[:, idx] += factor * data[:, n, :]
        elif isinstance(source, DistributedSource):
            self.grid.require_same(source.grid)
            has_imag = True

            def add_source(n, u_flat, factor):
                value = source.at_step(n).reshape(-1)
                u_flat[0] += factor * value.real
                if u_flat.shape[0] > 1:
                    u_flat[1] += factor * value.imag
        else:
            raise TypeError(f"Unsupported source type {type(source).__name__}")

        rows = 2 if has_imag else 1
        obs_idx = observe.flat_indices if observe is not None else None
        wrapped = None
        if callback is not None:
            def wrapped(n, u):
                return callback(n, u[0] + 1j * u[1] if rows == 2 else u[0].astype(complex))
        trace, stored = self.march(add_source, rows, nt, observe=obs_idx,
                                   store_steps=store_steps, callback=wrapped)
        steps_sorted = sorted(stored)
        if steps_sorted:
            values = np.stack([self._join(stored[n], has_imag, 1)[0] for n in steps_sorted])
        else:
            values = np.zeros((0,) + self.grid.shape, dtype=complex)
        trace_c = self._join(trace, has_imag, 1)[0] if trace is not None else None
        return SpaceTimeField(self.grid, self.time_grid, np.array(steps_sorted, dtype=int),
                              values, trace_c, observe)


def solve_forward(potential: Potential, source: Source, time_grid: TimeGrid,
                  settings: Optional[SolverSettings] = None, **kwargs) -> SpaceTimeField:
    """Solve (d_t^2 - Delta + q) u = f with zero initial data"""
    return WaveSolver(potential, time_grid, settings).solve(source, **kwargs)


def energy(u: SpaceTimeField, potential: Potential, step: int) -> float:
    """
    Discrete energy between steps n and n+1:
    |(u^{n+1} - u^n)/dt|^2 / 2 + Re <(-Delta_h + q) u^{n+1}, u^n> / 2,
    exactly conserved by the leapfrog scheme once the source is off.
    """
    if not (u.has_step(step) and u.has_step(step + 1)):
        raise KeyError(f"Energy at step {step} needs snapshots {step} and {step + 1}")
    a = u.snapshot(step).values
    b = u.snapshot(step + 1).values
    dt = u.time_grid.dt
    hv = u.grid.cell_volume
    kinetic = 0.5 * hv * np.sum(np.abs(b - a) ** 2) / dt ** 2
    stiff_b = -discrete_laplacian(b, u.grid.spacing) + potential.values * b
    elastic = 0.5 * hv * np.real(np.sum(stiff_b * np.conj(a)))
    return float(kinetic + elastic)


def _bounds_of(item) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    if isinstance(item, Region):
        coords = item.coordinates()
        return tuple(coords.min(axis=0)), tuple(coords.max(axis=0))
    return item.bounds()


def padded_box(target, omega, horizon: float, spacing: float, cfl: float,
               margin_cells: int = 4) -> SpatialGrid:
    """
    Box = hull(target u omega) dilated by horizon * (h/dt) + margin_cells * h.

    target and omega are shapes (anything with bounds()) or regions.
    """
    if cfl <= 0:
        raise ValueError(f"CFL number must be positive, got {cfl}")
    lo_k, hi_k = _bounds_of(target)
    lo_w, hi_w = _bounds_of(omega)
    pad = horizon / cfl + margin_cells * spacing
    lower = [min(a, b) - pad for a, b in zip(lo_k, lo_w)]
    upper = [max(a, b) + pad for a, b in zip(hi_k, hi_w)]
    grid = SpatialGrid.from_bounds(lower, upper, spacing)
    logger.debug(f"Padded box {grid.lower} .. {grid.upper} ({grid.counts} nodes)")
    return grid


def reach_radius(spacing: float, step: int) -> float:
    """Radius outside which the discrete solution at step is exactly zero for omega sources"""
    return (step + 2) * spacing
