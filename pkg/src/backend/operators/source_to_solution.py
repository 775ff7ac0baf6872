"""
Source-to-Solution Map

The measurement operator Lambda_q f = u^f restricted to (0,T) x omega,
time reversal R, translations, the adjoint R Lambda R, dense assembly on a
coarse basis and power-iteration estimates of |Lambda_1 - Lambda_2|.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

import numpy as np

from ..errors import GridMismatchError, SupportViolationError
from ..grid.fields import BoundaryData, boundary_inner
from ..grid.grids import TimeGrid
from ..grid.regions import Region
from ..services.parallel import chunked, parallel_map
from ..simulation.potential import Potential
from ..simulation.wave_solver import SolverSettings, WaveSolver
from .basis import CoarseBasis
from .linear_algebra import PowerIterationResult, hermitian_defect, hermitian_power, power_iteration

logger = logging.getLogger(__name__)


class MapMode(Enum):
    MATRIX_FREE = "matrix-free"
    DENSE = "dense-on-basis"


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """
    Galerkin matrix galerkin[i, j] = <A b_j, b_i> and basis mass matrix.

    matrix() returns the operator in orthonormal coordinates
    M^{-1/2} G M^{-1/2}, whose singular values approximate those of A
    restricted to the span of the basis.
    """
    basis: CoarseBasis
    galerkin: np.ndarray
    mass: np.ndarray
    label: str = "Lambda"

    def __post_init__(self):
        n = self.basis.size
        if self.galerkin.shape != (n, n) or self.mass.shape != (n, n):
            raise ValueError(f"Dense operator must be {n} x {n}, got {self.galerkin.shape}")

    def matrix(self) -> np.ndarray:
        inv_sqrt = hermitian_power(self.mass, -0.5)
        return inv_sqrt @ self.galerkin @ inv_sqrt

    def scalar(self) -> complex:
        """<A b, b> / <b, b> for a basis of size one"""
        if self.basis.size != 1:
            raise ValueError("scalar() needs a basis of size 1")
        return complex(self.galerkin[0, 0] / self.mass[0, 0])

    def hermitian_defect(self) -> float:
        return hermitian_defect(self.galerkin)

    def top_singular_value(self) -> float:
        return float(np.linalg.svd(self.matrix(), compute_uv=False)[0])


class SourceToSolutionMap:
    """Lambda_q for one potential on one observation region and time grid"""

    def __init__(self, potential: Potential, omega: Region, time_grid: TimeGrid,
                 settings: Optional[SolverSettings] = None, name: str = "Lambda"):
        potential.grid.require_same(omega.grid)
        self.potential = potential
        self.omega = omega
        self.time_grid = time_grid
        self.name = name
        self.solver = WaveSolver(potential, time_grid, settings)
        self.dense: Optional[DenseOperator] = None
        self.forward_solves = 0

    @property
    def mode(self) -> MapMode:
        return MapMode.DENSE if self.dense is not None else MapMode.MATRIX_FREE

    def _check_data(self, f: BoundaryData) -> None:
        if f.time_grid != self.time_grid:
            raise GridMismatchError(f"{self.name}: data on a different time grid")
        if f.region is not self.omega and not np.array_equal(f.region.mask, self.omega.mask):
            raise SupportViolationError(f"{self.name}: data must be supported on the observation region")

    def apply_batch(self, values: np.ndarray, steps: Optional[int] = None) -> np.ndarray:
        """Lambda on raw arrays (B, steps+1, nodes); solutions past steps are zero"""
        values = np.asarray(values, dtype=complex)
        if values.ndim == 2:
            values = values[None]
        self.forward_solves += values.shape[0]
        return self.solver.observe_batch(values, self.omega, steps)

    def apply(self, f: BoundaryData, steps: Optional[int] = None) -> BoundaryData:
        self._check_data(f)
        nt = self.time_grid.steps if steps is None else int(steps)
        if f.is_zero():
            return BoundaryData.zeros(self.omega, self.time_grid)
        out = self.apply_batch(f.values, nt)[0]
        return BoundaryData(self.omega, self.time_grid, out)

    def apply_adjoint(self, h: BoundaryData, steps: Optional[int] = None) -> BoundaryData:
        nt = self.time_grid.steps if steps is None else int(steps)
        return apply_R(self.apply(apply_R(h, nt), nt), nt)

    def describe(self) -> Dict:
        info = {
            "name": self.name,
            "mode": self.mode.value,
            "potential": self.potential.pid,
            "omega_nodes": self.omega.node_count,
            "steps": self.time_grid.steps,
            "forward_solves": self.forward_solves,
        }
        if self.dense is not None:
            info["basis"] = self.dense.basis.describe()
        return info


def apply_lambda(m: SourceToSolutionMap, f: BoundaryData) -> BoundaryData:
    """u^f on (0,T) x omega from one forward solve"""
    return m.apply(f)


def reverse_values(values: np.ndarray, horizon_steps: int) -> np.ndarray:
    """Mirror n -> N' - n along axis -2; rows past N' become zero"""
    out = np.zeros_like(values)
    out[..., :horizon_steps + 1, :] = values[..., horizon_steps::-1, :]
    return out


def apply_R(f: BoundaryData, horizon_steps: Optional[int] = None) -> BoundaryData:
    """(Rf)(t) = f(T' - t) on [0, T'], zero beyond T' (T' defaults to the full horizon)"""
    nt = f.steps if horizon_steps is None else int(horizon_steps)
    i0, i1 = f.window
    lo, hi = max(0, nt - min(i1, nt)), nt - min(i0, nt)
    if i0 > nt:
        lo, hi = 0, 0
    return f.like(reverse_values(f.values, nt), (lo, hi))


def apply_lambda_adjoint(m: SourceToSolutionMap, h: BoundaryData) -> BoundaryData:
    """Lambda* = R Lambda R"""
    return m.apply_adjoint(h)


def translate(f: BoundaryData, s: float) -> BoundaryData:
    """(tau_s f)(t) = f(t - s): exact index shift with zero fill"""
    shift = f.time_grid.index_of(abs(s)) * (1 if s >= 0 else -1)
    return shift_steps(f, shift)


def shift_steps(f: BoundaryData, shift: int) -> BoundaryData:
    """translate by a whole number of steps"""
    tg = f.time_grid
    if shift == 0:
        return f
    first, last = f.support_steps()
    if not f.is_zero() and (first + shift < 0 or last + shift > tg.steps):
        raise SupportViolationError(
            f"Shift by {shift} steps moves support [{first}, {last}] outside [0, {tg.steps}]")
    values = np.zeros_like(f.values)
    if shift > 0:
        values[shift:] = f.values[:-shift]
    else:
        values[:shift] = f.values[-shift:]
    i0 = min(max(f.window[0] + shift, 0), tg.steps)
    i1 = min(max(f.window[1] + shift, 0), tg.steps)
    if f.is_zero():
        return f.like(values, (i0, i1))
    return f.like(values, (min(i0, first + shift), max(i1, last + shift)))


@dataclass
class OperatorNormEstimate:
    """sqrt of the top eigenvalue of D*D with its convergence certificate"""
    value: float
    iterations: int
    converged: bool
    relative_change: float
    mode: str

    def to_dict(self) -> Dict:
        return {
            "value": self.value,
            "iterations": self.iterations,
            "converged": self.converged,
            "relative_change": self.relative_change,
            "mode": self.mode,
        }


def _certificate(result: PowerIterationResult, mode: str) -> OperatorNormEstimate:
    hist = result.history
    change = 0.0
    if len(hist) > 1 and hist[-1] != 0:
        change = abs(hist[-1] - hist[-2]) / abs(hist[-1])
    return OperatorNormEstimate(float(np.sqrt(max(result.value, 0.0))), result.iterations,
                                result.converged, change, mode)


def op_norm_diff(m1: SourceToSolutionMap, m2: SourceToSolutionMap, iters: int = 50,
                 tol: float = 1e-6, seed: int = 0, use_dense: bool = False) -> OperatorNormEstimate:
    """
    Power iteration on D*D with D = Lambda_1 - Lambda_2.

    Matrix-free iterations cost four forward solves. With use_dense both maps
    must be assembled on the same basis and the iteration runs on the
    orthonormal-coordinate matrices.
    """
    if m1.time_grid != m2.time_grid:
        raise GridMismatchError("Maps live on different time grids")
    if not np.array_equal(m1.omega.mask, m2.omega.mask):
        raise GridMismatchError("Maps observe different regions")
    rng = np.random.default_rng(seed)
    if use_dense:
        if m1.dense is None or m2.dense is None or m1.dense.basis is not m2.dense.basis:
            raise ValueError("Dense norm estimate needs both maps assembled on one basis")
        diff = m1.dense.matrix() - m2.dense.matrix()
        start = rng.standard_normal(diff.shape[0]) + 1j * rng.standard_normal(diff.shape[0])
        result = power_iteration(lambda v: diff.conj().T @ (diff @ v), start,
                                 lambda a, b: complex(np.vdot(b, a)), iters, tol)
        return _certificate(result, MapMode.DENSE.value)

    omega, tg = m1.omega, m1.time_grid
    shape = (tg.steps + 1, omega.node_count)

    def as_data(v: np.ndarray) -> BoundaryData:
        return BoundaryData(omega, tg, v.reshape(shape))

    def apply(v: np.ndarray) -> np.ndarray:
        f = as_data(v)
        d = m1.apply(f) - m2.apply(f)
        return (m1.apply_adjoint(d) - m2.apply_adjoint(d)).values.reshape(-1)

    def inner(a: np.ndarray, b: np.ndarray) -> complex:
        return boundary_inner(as_data(a), as_data(b))

    start = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).reshape(-1)
    result = power_iteration(apply, start, inner, iters, tol)
    estimate = _certificate(result, MapMode.MATRIX_FREE.value)
    logger.info(f"|{m1.name} - {m2.name}| ~ {estimate.value:.6e} "
                f"({estimate.iterations} iterations, converged={estimate.converged})")
    return estimate


def assemble_dense(m: SourceToSolutionMap, basis: CoarseBasis, adjoint: bool = False,
                   threads: Optional[int] = None, chunk: int = 16) -> DenseOperator:
    """
    Galerkin matrix of Lambda (or of R Lambda R) on basis, column by column.

    Columns are independent and are mapped over threads in chunks.
    """
    if basis.region.node_count != m.omega.node_count or not np.array_equal(basis.region.mask, m.omega.mask):
        raise GridMismatchError("Basis must live on the map's observation region")
    if basis.time_grid != m.time_grid:
        raise GridMismatchError("Basis must live on the map's time grid")
    tw = m.time_grid.trapezoid_weights()
    nt = m.time_grid.steps

    def columns(indices):
        values = basis.batch(indices)
        if adjoint:
            values = reverse_values(m.apply_batch(reverse_values(values, nt)), nt)
        else:
            values = m.apply_batch(values)
        return basis.pair_values(values, tw)

    blocks = parallel_map(columns, chunked(list(range(basis.size)), chunk), threads)
    galerkin = np.concatenate(blocks, axis=0).T
    dense = DenseOperator(basis, galerkin, basis.mass(tw), f"{m.name}*" if adjoint else m.name)
    if not adjoint:
        m.dense = dense
    logger.info(f"Assembled dense {dense.label} on {basis.size} basis functions")
    return dense
