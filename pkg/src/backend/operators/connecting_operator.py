"""
Connecting Operator

J, the connecting operator K = J Lambda - R Lambda R J, and the data-only
recovery of wave inner products (u^f(t), u^h(t')) from the measurement map.

On the discrete grid J is the lattice sum

    (J g)(k) = dt * sum of g(j) over j = k+1, k+3, ..., N'-1-k   for k < N'/2

and zero otherwise. With the half-weight first step of the solver this makes
the trapezoid pairing <f, K h> over (0, T'/2) equal to the discrete
(u^f(T'/2), u^h(T'/2)) up to round-off, and K an exact Hermitian form.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import GridMismatchError, SupportViolationError
from ..grid.fields import BoundaryData, boundary_inner_steps
from ..grid.grids import TimeGrid
from ..services.parallel import chunked, parallel_map
from .basis import CoarseBasis
from .source_to_solution import DenseOperator, SourceToSolutionMap, apply_R, reverse_values

logger = logging.getLogger(__name__)


def j_values(values: np.ndarray, horizon_steps: int, dt: float) -> np.ndarray:
    """Lattice J along axis -2 of values (..., steps+1, nodes) for horizon N'"""
    half = horizon_steps // 2
    g = values[..., :horizon_steps + 1, :]
    partial = np.zeros_like(g)
    partial[..., 0::2, :] = np.cumsum(g[..., 0::2, :], axis=-2)
    partial[..., 1::2, :] = np.cumsum(g[..., 1::2, :], axis=-2)
    out = np.zeros_like(values)
    if half == 0:
        return out
    k = np.arange(half)
    first = k + 1
    last = horizon_steps - 1 - k
    upper = partial[..., last, :]
    lower = np.where((first >= 2)[:, None], partial[..., np.maximum(first - 2, 0), :], 0.0)
    out[..., :half, :] = dt * (upper - lower)
    return out


def apply_J(f: BoundaryData, horizon_steps: Optional[int] = None) -> BoundaryData:
    """Jf(s) = 1/2 int_s^{T'-s} f, zero for s >= T'/2"""
    nt = f.steps if horizon_steps is None else int(horizon_steps)
    if nt % 2:
        raise ValueError(f"J needs an even number of steps, got {nt}")
    return f.like(j_values(f.values, nt, f.time_grid.dt), (0, max(nt // 2 - 1, 0)))


class ConnectingOperator:
    """
    K for one measurement map at horizon T' = N' dt <= T.

    A translated instance at evaluation time t has N' = 2 i_t and reproduces
    (u^f(t), u^h(t)) = <f, K h> over (0, t) for data on (0, t).
    """

    def __init__(self, lambda_map: SourceToSolutionMap, horizon_steps: Optional[int] = None):
        self.lambda_map = lambda_map
        tg = lambda_map.time_grid
        n = tg.steps if horizon_steps is None else int(horizon_steps)
        if not 0 < n <= tg.steps:
            raise ValueError(f"Horizon of {n} steps outside (0, {tg.steps}]")
        if n % 2:
            raise ValueError(f"Connecting operator needs an even number of steps, got {n}")
        self.steps = n
        self.dense: Optional[DenseOperator] = None

    @property
    def time_grid(self) -> TimeGrid:
        return self.lambda_map.time_grid

    @property
    def half_steps(self) -> int:
        return self.steps // 2

    @property
    def horizon(self) -> float:
        return self.steps * self.time_grid.dt

    @property
    def mode(self):
        return self.lambda_map.mode

    def translated(self, t: float) -> "ConnectingOperator":
        """Operator whose pairing window (0, t) ends at evaluation time t"""
        i_t = self.time_grid.index_of(t)
        if not 0 < i_t <= self.half_steps:
            raise ValueError(f"Evaluation time {t:g} outside (0, {self.horizon / 2:g}]")
        if 2 * i_t == self.steps:
            return self
        return ConnectingOperator(self.lambda_map, 2 * i_t)

    def apply_batch(self, values: np.ndarray) -> np.ndarray:
        """K on raw arrays (B, steps+1, nodes)"""
        n, dt = self.steps, self.time_grid.dt
        lam = self.lambda_map
        jh = j_values(values, n, dt)
        first = j_values(lam.apply_batch(values, n), n, dt)
        second = reverse_values(lam.apply_batch(reverse_values(jh, n), n), n)
        return first - second

    def apply(self, h: BoundaryData) -> BoundaryData:
        if h.is_zero():
            return BoundaryData.zeros(h.region, h.time_grid)
        lam = self.lambda_map
        n = self.steps
        jh = apply_J(h, n)
        first = apply_J(lam.apply(h, n), n)
        second = apply_R(lam.apply(apply_R(jh, n), n), n)
        return first - second

    def pair(self, f: BoundaryData, g: BoundaryData) -> complex:
        """Trapezoid pairing over (0, T'/2) x omega"""
        return boundary_inner_steps(f, g, 0, self.half_steps)

    def describe(self) -> Dict:
        return {"horizon_steps": self.steps, "horizon": self.horizon, "mode": self.mode.value}


def apply_K(k: ConnectingOperator, h: BoundaryData) -> BoundaryData:
    return k.apply(h)


def blago_inner(k: ConnectingOperator, f: BoundaryData, h: BoundaryData) -> complex:
    """(u^f(T'/2), u^h(T'/2)) from data: <f, K h> over (0, T'/2) x omega"""
    if f.is_zero() or h.is_zero():
        return 0j
    return k.pair(f, k.apply(h))


def shift_to_half(f: BoundaryData, i_t: int, half_steps: int) -> BoundaryData:
    """
    Cut f to steps [0, i_t] and shift it to end at half_steps.

    The sample landing from step 0 is halved: the solver injects step 0 with
    half weight, any later step with full weight.
    """
    shift = half_steps - i_t
    if shift < 0:
        raise SupportViolationError(f"Evaluation step {i_t} beyond the half horizon {half_steps}")
    values = np.zeros_like(f.values)
    values[shift:half_steps + 1] = f.values[:i_t + 1]
    if shift > 0:
        values[shift] *= 0.5
    return f.like(values, (shift, half_steps))


def inner_product_at_times(k: ConnectingOperator, f: BoundaryData, h: BoundaryData,
                           t: float, t_prime: float) -> complex:
    """(u^f(t), u^h(t')) for 0 < t, t' <= T'/2 from the measurement map alone"""
    tg = k.time_grid
    i_t, i_tp = tg.index_of(t), tg.index_of(t_prime)
    half = k.half_steps
    for name, idx in (("t", i_t), ("t'", i_tp)):
        if not 0 < idx <= half:
            raise SupportViolationError(f"{name} = {idx * tg.dt:g} outside (0, {half * tg.dt:g}]")
    if f.is_zero() or h.is_zero():
        return 0j
    return blago_inner(k, shift_to_half(f, i_t, half), shift_to_half(h, i_tp, half))


@dataclass(frozen=True, eq=False)
class CorrelationField:
    """
    W(n, m) = (u^f(t_n), u^h(t_m)) on the lattice square, with its forcing F.

    W is obtained by marching the 1D wave recursion in (t, s) driven by F.
    Row n is valid for m <= steps - n + 1; other entries are NaN.
    """
    time_grid: TimeGrid
    values: np.ndarray
    forcing: np.ndarray

    def at(self, t: float, s: float) -> complex:
        n, m = self.time_grid.index_of(t), self.time_grid.index_of(s)
        value = self.values[n, m]
        if np.isnan(value):
            raise ValueError(f"W({t:g}, {s:g}) is outside the region determined by the data")
        return complex(value)

    def valid_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)


def correlation_forcing(f: BoundaryData, h: BoundaryData, lam_f: BoundaryData,
                        lam_h: BoundaryData) -> np.ndarray:
    """F(t, s) = (f(t), (Lambda h)(s)) - ((Lambda f)(t), h(s)) in the omega pairing"""
    for other in (h, lam_f, lam_h):
        f._check(other)
    w = f.region.node_weights[None, :]
    return (f.values * w) @ np.conj(lam_h.values).T - (lam_f.values * w) @ np.conj(h.values).T


def correlation_solve(f: BoundaryData, h: BoundaryData, lam_f: BoundaryData,
                      lam_h: BoundaryData) -> CorrelationField:
    """W from (d_t^2 - d_s^2) W = F with W(0, s) = 0 and the solver's first step"""
    tg = f.time_grid
    nt, dt2 = tg.steps, tg.dt ** 2
    forcing = correlation_forcing(f, h, lam_f, lam_h)
    w = np.full((nt + 1, nt + 1), np.nan, dtype=complex)
    w[0, :] = 0.0
    if nt >= 1:
        w[1, :] = 0.5 * dt2 * forcing[0, :]
    for n in range(1, nt):
        valid = nt - n + 1
        m = np.arange(valid)
        row = w[n]
        left = np.where(m == 0, row[1], row[np.maximum(m - 1, 0)])
        w[n + 1, :valid] = row[m + 1] + left - w[n - 1, m] + dt2 * forcing[n, m]
        w[n + 1, valid:] = np.nan
    return CorrelationField(tg, w, forcing)


def assemble_gram(k: ConnectingOperator, basis: CoarseBasis, threads: Optional[int] = None,
                  chunk: int = 8) -> DenseOperator:
    """
    Galerkin matrix <K b_j, b_i> over (0, T'/2) on a basis inside that window.

    Each column costs two forward solves; columns run through parallel_map.
    """
    if basis.last > k.half_steps:
        raise ValueError(f"Basis window ends at step {basis.last}, past T'/2 = {k.half_steps}")
    if basis.time_grid != k.time_grid:
        raise GridMismatchError("Basis must live on the operator's time grid")
    tw = k.time_grid.trapezoid_weights(0, k.half_steps)

    def columns(indices):
        return basis.pair_values(k.apply_batch(basis.batch(indices)), tw)

    blocks = parallel_map(columns, chunked(list(range(basis.size)), chunk), threads)
    gram = DenseOperator(basis, np.concatenate(blocks, axis=0).T, basis.mass(tw), "K")
    k.dense = gram
    logger.info(f"Assembled K on {basis.size} basis functions, Hermitian defect "
                f"{gram.hermitian_defect():.2e}")
    return gram


def min_eigenvalue_ratio(gram: DenseOperator) -> Tuple[float, float]:
    """(lambda_min, lambda_max) of the symmetrised K in orthonormal coordinates"""
    mat = gram.matrix()
    vals = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
    return float(vals[0]), float(vals[-1])
