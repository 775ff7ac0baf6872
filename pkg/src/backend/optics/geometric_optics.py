"""
Geometric Optics Probes

High-frequency sources whose waves concentrate along the straight ray
beta(t) = x0 - (s_delta - t) nu, nu the outward normal of omega at the
boundary point nearest to x0. The ansatz is

    w = e^{i sigma (t - x.nu)} (a_0 + a_1 / sigma + ... + a_N / sigma^N),

with a_0 = chi(x - beta(t)) and the transport hierarchy
(d_t + nu.grad) a_l = (i/2) (d_t^2 - Delta + q) a_{l-1}, a_l(0) = 0.
The amplitudes a_l, l >= 1, are tabulated on a fine grid moving with the ray,
where transport is a plain time integral. The source
h = -(d_t^2 - Delta)(chi_outer w) lives in omega because chi_outer is
supported there, and u^h = (1 - chi_outer) w up to a remainder decaying in
sigma.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator

from ..errors import NumericalFailure, RegionError, SupportViolationError
from ..grid.fields import BoundaryData, ScalarField
from ..grid.grids import TimeGrid
from ..grid.regions import BallShape, Region, nearest_boundary_node, outward_normal
from ..services.parallel import parallel_map
from ..simulation.potential import Potential
from ..simulation.wave_solver import DistributedSource, SolverSettings, WaveSolver
from .bump import PlateauBump

logger = logging.getLogger(__name__)

MIN_POINTS_PER_WAVELENGTH = 10.0
# radians of leapfrog phase drift accumulated over s_delta
MAX_DISPERSION_PHASE = 0.1
# amplitude tables never need more than this many cells per eta
FRAME_CELLS_PER_ETA = 50


@dataclass
class AmplitudeTable:
    """One amplitude a_l, l >= 1, in the moving frame z = x - beta(t)"""
    order: int
    value: np.ndarray      # (steps+1, *zshape)
    transport: np.ndarray  # (d_t + nu.grad) a_l
    gradient: np.ndarray   # (steps+1, *zshape, n)
    box: np.ndarray        # (d_t^2 - Delta) a_l
    _coeffs: Dict = field(default_factory=dict, repr=False)

    def coefficients(self, name: str, component: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Cubic spline coefficients of the real and imaginary parts"""
        key = (name, component)
        if key not in self._coeffs:
            arr = getattr(self, name)
            if component is not None:
                arr = arr[..., component]
            self._coeffs[key] = (ndimage.spline_filter(arr.real, order=3, mode="nearest"),
                                 ndimage.spline_filter(arr.imag, order=3, mode="nearest"))
        return self._coeffs[key]


@dataclass(frozen=True, eq=False)
class MovingFrame:
    axes: Tuple[np.ndarray, ...]
    spacing: float

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    def coordinates(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)


@dataclass(frozen=True, eq=False)
class GOProbe:
    """
    Probe for the target point x0.

    chi is the ray cutoff (plateau eta, support 2 eta), outer the cutoff
    around beta(0) that is 1 on supp a_0(0) and supported inside omega.
    """
    x0: np.ndarray
    y: np.ndarray
    normal: np.ndarray
    delta: float
    eta: float
    sigma: float
    order: int
    s: float
    omega: Region
    potential: Potential
    time_grid: TimeGrid
    chi: PlateauBump
    outer: PlateauBump
    frame: MovingFrame
    tables: Tuple[AmplitudeTable, ...]

    @property
    def s_delta(self) -> float:
        return self.s + self.delta

    @property
    def s_delta_step(self) -> int:
        return int(round(self.s_delta / self.time_grid.dt))

    @property
    def points_per_wavelength(self) -> float:
        return 2 * math.pi / (self.sigma * self.omega.grid.spacing)

    @property
    def dispersion_phase(self) -> float:
        """
        Phase error of the discrete plane wave after s_delta.

        The leapfrog scheme carries e^{i sigma (t - x.nu)} at the frequency
        (2/dt) asin((dt/h) sqrt(sum_k sin^2(sigma nu_k h / 2))) instead of
        sigma; past the stability edge the phase is infinite.
        """
        dt, h = self.time_grid.dt, self.omega.grid.spacing
        k = dt / h * math.sqrt(sum(math.sin(self.sigma * nk * h / 2) ** 2 for nk in self.normal))
        if k >= 1.0:
            return float("inf")
        return abs(2 * math.asin(k) / dt - self.sigma) * self.s_delta

    @property
    def resolved(self) -> bool:
        return (self.points_per_wavelength >= MIN_POINTS_PER_WAVELENGTH
                and self.dispersion_phase <= MAX_DISPERSION_PHASE)

    @property
    def source_last_step(self) -> int:
        """Last step at which the ray cutoff still meets the outer cutoff"""
        reach = self.chi.support_radius + self.outer.support_radius
        return min(int(math.ceil(reach / self.time_grid.dt)) + 1, self.time_grid.steps)

    def beta(self, t) -> np.ndarray:
        """Ray position(s), shape (..., n)"""
        t = np.asarray(t, dtype=float)
        return self.x0 - (self.s_delta - t)[..., None] * self.normal

    def phase(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.asarray(t) - x @ self.normal

    def with_sigma(self, sigma: float) -> "GOProbe":
        """Same geometry and amplitudes at another frequency"""
        if sigma <= 0:
            raise ValueError(f"Frequency must be positive, got {sigma}")
        return replace(self, sigma=float(sigma))

    def free_space(self) -> "GOProbe":
        """Same geometry, order and frame with q = 0"""
        zero = Potential.zero(self.omega.grid)
        frame, tables = _tabulate(zero, self.time_grid, self.chi, self.beta(0.0), self.normal, self.order,
                                  self.frame.spacing, self.s_delta_step)
        return replace(self, potential=zero, frame=frame, tables=tables)

    def _frame_coords(self, steps: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = x - self.beta(self.time_grid.dt * steps)
        lo = np.array([a[0] for a in self.frame.axes])
        frac = (z - lo) / self.frame.spacing
        coords = np.concatenate([steps[None, :].astype(float), frac.T], axis=0)
        inside = np.linalg.norm(z, axis=-1) < self.chi.support_radius
        return coords, inside

    def _sample(self, table: AmplitudeTable, name: str, coords: np.ndarray, inside: np.ndarray,
                component: Optional[int] = None) -> np.ndarray:
        re, im = table.coefficients(name, component)
        out = (ndimage.map_coordinates(re, coords, order=3, mode="nearest", prefilter=False)
               + 1j * ndimage.map_coordinates(im, coords, order=3, mode="nearest", prefilter=False))
        return np.where(inside, out, 0.0)

    def amplitude(self, steps: np.ndarray, x: np.ndarray) -> Dict[str, np.ndarray]:
        """
        A_N, grad A_N, (d_t + nu.grad) A_N and (d_t^2 - Delta) A_N at points.

        steps (P,) and x (P, n) give one space-time point per row.
        """
        steps = np.asarray(steps, dtype=int)
        z = x - self.beta(self.time_grid.dt * steps)
        c0, g0, h0 = self.chi.derivatives(z)
        nu = self.normal
        value = c0.astype(complex)
        grad = g0.astype(complex)
        transport = np.zeros_like(value)
        box = (np.einsum("i,...ij,j->...", nu, h0, nu) - np.trace(h0, axis1=-2, axis2=-1)).astype(complex)
        if self.tables:
            coords, inside = self._frame_coords(steps, x)
            for table in self.tables:
                w = self.sigma ** (-table.order)
                value += w * self._sample(table, "value", coords, inside)
                transport += w * self._sample(table, "transport", coords, inside)
                box += w * self._sample(table, "box", coords, inside)
                for k in range(x.shape[-1]):
                    grad[:, k] += w * self._sample(table, "gradient", coords, inside, k)
        return {"value": value, "gradient": grad, "transport": transport, "box": box}

    def top_order_residual(self, steps: np.ndarray, x: np.ndarray) -> np.ndarray:
        """(d_t^2 - Delta + q) a_N at points, the coefficient of the sigma^-N ansatz error"""
        steps = np.asarray(steps, dtype=int)
        q = self.potential.values.reshape(-1)[self._flat(x)]
        if not self.tables:
            z = x - self.beta(self.time_grid.dt * steps)
            c0, _, h0 = self.chi.derivatives(z)
            nu = self.normal
            return np.einsum("i,...ij,j->...", nu, h0, nu) - np.trace(h0, axis1=-2, axis2=-1) + q * c0
        table = self.tables[-1]
        coords, inside = self._frame_coords(steps, x)
        return self._sample(table, "box", coords, inside) + q * self._sample(table, "value", coords, inside)

    def _flat(self, x: np.ndarray) -> np.ndarray:
        grid = self.omega.grid
        idx = np.rint(x / grid.spacing).astype(int) - np.array(grid.offsets)
        return np.ravel_multi_index(tuple(idx.T), grid.shape)

    def _near_ray(self, step: int) -> Tuple[np.ndarray, np.ndarray]:
        """Flat indices and coordinates of grid nodes within the ray cutoff at step"""
        grid = self.omega.grid
        centre = self.beta(step * self.time_grid.dt)
        mask = BallShape(tuple(centre), self.chi.support_radius).mask(grid)
        flat = np.flatnonzero(mask)
        coords = grid.coordinates().reshape(-1, grid.dimension)[flat]
        return flat, coords

    def ansatz_field(self, step: int) -> ScalarField:
        """(1 - chi_outer) A_N e^{i sigma phi} at one step on the whole grid"""
        grid = self.omega.grid
        out = np.zeros(grid.size, dtype=complex)
        flat, coords = self._near_ray(step)
        if flat.size:
            t = step * self.time_grid.dt
            amp = self.amplitude(np.full(flat.size, step), coords)
            cut = 1.0 - self.outer.value(coords - self.beta(0.0))
            out[flat] = cut * amp["value"] * np.exp(1j * self.sigma * self.phase(t, coords))
        return ScalarField(grid, out.reshape(grid.shape))

    def ansatz_residual_norm(self, step: int) -> float:
        """|(d_t^2 - Delta + q)(A_N e^{i sigma phi})| in L2 at one step"""
        flat, coords = self._near_ray(step)
        if not flat.size:
            return 0.0
        res = self.top_order_residual(np.full(flat.size, step), coords) * self.sigma ** (-self.order)
        return float(np.sqrt(self.omega.grid.cell_volume * np.sum(np.abs(res) ** 2)))

    def source_values(self, coords: np.ndarray, steps: Optional[np.ndarray] = None) -> np.ndarray:
        """
        h at the given steps (all by default) for node coordinates, shape
        (len(steps), nodes). Only nodes inside the outer cutoff and steps up
        to source_last_step are evaluated; the rest are exactly zero.
        """
        tg = self.time_grid
        steps = np.arange(tg.steps + 1) if steps is None else np.asarray(steps, dtype=int)
        values = np.zeros((len(steps), len(coords)), dtype=complex)
        c, g, hess = self.outer.derivatives(coords - self.beta(0.0))
        nodes = np.flatnonzero(c != 0)
        live = np.flatnonzero(steps <= self.source_last_step)
        if not nodes.size or not live.size:
            return values
        xs = np.tile(coords[nodes], (live.size, 1))
        ss = np.repeat(steps[live], nodes.size)
        near = np.linalg.norm(xs - self.beta(ss * tg.dt), axis=-1) < self.chi.support_radius
        block = np.zeros(len(xs), dtype=complex)
        if np.any(near):
            pick = np.tile(nodes, live.size)[near]
            xs, ss = xs[near], ss[near]
            amp = self.amplitude(ss, xs)
            ca, ga, la = c[pick], g[pick], np.trace(hess[pick], axis1=-2, axis2=-1)
            bracket = (2j * self.sigma * (ca * amp["transport"] + amp["value"] * (ga @ self.normal))
                       + ca * amp["box"] - 2 * np.einsum("pk,pk->p", ga, amp["gradient"])
                       - amp["value"] * la)
            block[near] = -np.exp(1j * self.sigma * self.phase(ss * tg.dt, xs)) * bracket
        values[np.ix_(live, nodes)] = block.reshape(live.size, nodes.size)
        return values

    def to_dict(self) -> Dict:
        return {
            "x0": self.x0.tolist(),
            "y": self.y.tolist(),
            "normal": self.normal.tolist(),
            "delta": self.delta,
            "eta": self.eta,
            "sigma": self.sigma,
            "order": self.order,
            "s": self.s,
            "s_delta": self.s_delta,
            "points_per_wavelength": self.points_per_wavelength,
            "dispersion_phase": self.dispersion_phase,
        }


def _tabulate(potential: Potential, time_grid: TimeGrid, chi: PlateauBump, beta0: np.ndarray,
              normal: np.ndarray, order: int, hz: float,
              last_step: int) -> Tuple[MovingFrame, Tuple[AmplitudeTable, ...]]:
    """Amplitudes a_1..a_order on the moving frame for steps 0..last_step + 2"""
    grid = potential.grid
    n = grid.dimension
    reach = chi.support_radius + 3 * hz
    count = int(math.ceil(reach / hz))
    axis = hz * np.arange(-count, count + 1)
    frame = MovingFrame(tuple(axis for _ in range(n)), hz)
    if order == 0:
        return frame, ()
    z = frame.coordinates()
    times = time_grid.times[:min(last_step + 3, time_grid.steps + 1)]
    dt = time_grid.dt
    ray = beta0 + times[:, None] * normal
    points = z[None] + ray.reshape((len(times),) + (1,) * n + (n,))
    q_at = RegularGridInterpolator(tuple(grid.axes()), potential.values, bounds_error=False,
                                   fill_value=0.0)(points.reshape(-1, n)).reshape(points.shape[:-1])
    c0, _, h0 = chi.derivatives(z)
    box_prev = np.broadcast_to(np.einsum("i,...ij,j->...", normal, h0, normal)
                               - np.trace(h0, axis1=-2, axis2=-1), q_at.shape).astype(complex)
    val_prev = np.broadcast_to(c0, q_at.shape).astype(complex)
    tables: List[AmplitudeTable] = []
    for level in range(1, order + 1):
        forcing = 0.5j * (box_prev + q_at * val_prev)
        value = cumulative_trapezoid(forcing, dx=dt, axis=0, initial=0)
        grads = [np.gradient(value, hz, axis=1 + k, edge_order=2) for k in range(n)]
        hess_nn = np.zeros_like(value)
        lap = np.zeros_like(value)
        for j in range(n):
            for k in range(n):
                second = np.gradient(grads[k], hz, axis=1 + j, edge_order=2)
                hess_nn += normal[j] * normal[k] * second
                if j == k:
                    lap += second
        forcing_t = np.gradient(forcing, dt, axis=0, edge_order=2)
        along = sum(normal[k] * np.gradient(forcing, hz, axis=1 + k, edge_order=2) for k in range(n))
        box = forcing_t - 2 * along + hess_nn - lap
        tables.append(AmplitudeTable(level, value, forcing, np.stack(grads, axis=-1), box))
        val_prev, box_prev = value, box
    logger.debug(f"Tabulated {order} amplitude levels on a {frame.shape} moving frame")
    return frame, tuple(tables)


def default_delta(x0: Sequence[float], omega: Region) -> float:
    """Half the largest r with B(y - r nu, r) inside omega"""
    from ..control.caps import largest_inner_radius
    return 0.5 * largest_inner_radius(x0, omega, factor=1.0)


def build_probe(x0: Sequence[float], omega: Region, q: Potential, time_grid: TimeGrid, sigma: float,
                order: int = 0, delta: Optional[float] = None, eta: float = 0.08,
                outer_transition: Optional[float] = None, frame_refine: int = 2) -> GOProbe:
    """Probe geometry, cutoffs and amplitude tables for x0"""
    if sigma <= 0:
        raise ValueError(f"Frequency must be positive, got {sigma}")
    if order < 0:
        raise ValueError(f"Ansatz order must be nonnegative, got {order}")
    grid = omega.grid
    h = grid.spacing
    if eta < h:
        raise RegionError(f"Probe cutoff eta={eta} below the grid spacing {h}: zero amplitude")
    x0 = np.asarray(x0, dtype=float)
    y_index, y = nearest_boundary_node(omega, x0)
    nu = outward_normal(omega, y_index)
    s = float(np.linalg.norm(x0 - y))
    delta = default_delta(x0, omega) if delta is None else float(delta)
    # s + delta on the time grid
    dt = time_grid.dt
    delta = math.floor((s + delta) / dt + 1e-9) * dt - s
    if delta <= 2 * eta + h:
        raise RegionError(f"Offset delta={delta:g} leaves no room for the cutoffs (needs > 2 eta + h)")
    width = outer_transition if outer_transition is not None else delta - 2 * eta - h
    chi = PlateauBump(eta, eta)
    outer = PlateauBump(2 * eta, width)
    beta0 = x0 - (s + delta) * nu
    ball = BallShape(tuple(beta0), outer.support_radius).mask(grid)
    if np.any(ball & ~omega.mask):
        raise SupportViolationError(f"Outer cutoff of radius {outer.support_radius:g} around "
                                    f"{beta0.tolist()} leaks out of omega")
    if s + delta > time_grid.horizon / 2:
        raise ValueError(f"Probe time s+delta={s + delta:g} beyond T/2={time_grid.horizon / 2:g}")
    spacing = max(h / frame_refine, eta / FRAME_CELLS_PER_ETA)
    frame, tables = _tabulate(q, time_grid, chi, beta0, nu, order, spacing, int(round((s + delta) / dt)))
    probe = GOProbe(x0, np.asarray(y, dtype=float), nu, delta, float(eta), float(sigma), int(order),
                    s, omega, q, time_grid, chi, outer, frame, tables)
    if not probe.resolved:
        logger.warning(f"sigma={sigma:g} is under-resolved: {probe.points_per_wavelength:.1f} points per "
                       f"wavelength, dispersion phase {probe.dispersion_phase:.3g} rad")
    return probe


def _check_support(probe: GOProbe) -> None:
    omega = probe.omega
    grid = omega.grid
    coords_all = grid.coordinates().reshape(-1, grid.dimension)
    leak = probe.outer.support_mask(coords_all, probe.beta(0.0)) & ~omega.mask.reshape(-1)
    if np.any(leak):
        raise SupportViolationError("Probe source support leaks out of omega")


def build_source(probe: GOProbe) -> BoundaryData:
    """h = -(d_t^2 - Delta)(chi_outer A_N e^{i sigma phi}) on (0,T) x omega"""
    _check_support(probe)
    values = probe.source_values(probe.omega.coordinates())
    if not np.any(values):
        raise NumericalFailure("Probe source vanishes identically")
    return BoundaryData(probe.omega, probe.time_grid, values)


def lazy_source(probe: GOProbe) -> DistributedSource:
    """
    The same source as build_source, holding only the steps where it is
    nonzero; fine study grids would not fit the full (steps+1, nodes) array.
    """
    _check_support(probe)
    omega = probe.omega
    grid = omega.grid
    block = probe.source_values(omega.coordinates(), np.arange(probe.source_last_step + 1))
    if not np.any(block):
        raise NumericalFailure("Probe source vanishes identically")
    block = block * (omega.node_weights / grid.cell_volume)[None, :]
    idx = omega.flat_indices
    dt = probe.time_grid.dt

    def at(t, _coords):
        out = np.zeros(grid.size, dtype=complex)
        n = int(round(t / dt))
        if n < len(block):
            out[idx] = block[n]
        return out.reshape(grid.shape)

    return DistributedSource(grid, probe.time_grid, at)


def probe_response(probe: GOProbe, potential: Optional[Potential] = None,
                   settings: Optional[SolverSettings] = None) -> ScalarField:
    """u^h(s_delta) from a direct solve"""
    q = potential if potential is not None else probe.potential
    n = probe.s_delta_step
    sol = WaveSolver(q, probe.time_grid, settings).solve(lazy_source(probe), steps=n, store_steps=[n])
    return sol.snapshot(n)


def source_sobolev_norm(probe: GOProbe, order: int = 2) -> float:
    """
    Discrete H^order norm (order <= 2) of the source over (0,T) x the
    bounding box of omega, all mixed partials by centred differences.
    Steps past source_last_step + 2 hold zeros and add nothing.
    """
    if order not in (0, 1, 2):
        raise ValueError("Source norms are implemented up to order 2")
    grid = probe.omega.grid
    tg = probe.time_grid
    idx = np.argwhere(probe.omega.mask)
    lo = np.maximum(idx.min(axis=0) - 2, 0)
    hi = np.minimum(idx.max(axis=0) + 3, np.array(grid.shape))
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    coords = grid.coordinates()[box]
    sub_shape = coords.shape[:-1]
    steps = np.arange(min(probe.source_last_step + 3, tg.steps) + 1)
    values = probe.source_values(coords.reshape(-1, grid.dimension), steps).reshape((len(steps),) + sub_shape)
    spacings = [tg.dt] + [grid.spacing] * grid.dimension
    terms = [values]
    first = [np.gradient(values, spacings[a], axis=a, edge_order=2) for a in range(values.ndim)]
    if order >= 1:
        terms += first
    if order >= 2:
        for a in range(values.ndim):
            for b in range(a, values.ndim):
                terms.append(np.gradient(first[a], spacings[b], axis=b, edge_order=2))
    density = sum(np.abs(t) ** 2 for t in terms)
    return float(np.sqrt(np.sum(density) * tg.dt * grid.cell_volume))


def phase_residual(probe: GOProbe) -> float:
    """
    Relative residual of the discrete d_t^2 - Delta applied to e^{i sigma phi}:
    |(2cos(sigma dt) - 2)/dt^2 - sum_k (2cos(sigma nu_k h) - 2)/h^2| / sigma^2.
    """
    dt, h, sigma = probe.time_grid.dt, probe.omega.grid.spacing, probe.sigma
    time_part = (2 * math.cos(sigma * dt) - 2) / dt ** 2
    space_part = sum((2 * math.cos(sigma * nk * h) - 2) / h ** 2 for nk in probe.normal)
    return abs(time_part - space_part) / sigma ** 2


@dataclass
class DecayRow:
    sigma: float
    l2_remainder: float
    h2_source_norm: float
    ppw_flag: bool
    l2_raw_remainder: float = float("nan")

    def to_dict(self) -> Dict:
        return {
            "sigma": self.sigma,
            "l2_remainder": self.l2_remainder,
            "h2_source_norm": self.h2_source_norm,
            "ppw_flag": self.ppw_flag,
            "l2_raw_remainder": self.l2_raw_remainder,
        }


@dataclass
class DecayReport:
    order: int
    rows: List[DecayRow]
    remainder_slope: float
    source_slope: float
    raw_slope: float = float("nan")

    def table(self) -> List[Dict]:
        return [r.to_dict() for r in self.rows]


def _slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(np.asarray(xs)), np.log(np.maximum(np.asarray(ys), 1e-300)), 1)
    return float(slope)


def _remainder(probe: GOProbe, q: Optional[Potential], settings: Optional[SolverSettings]) -> np.ndarray:
    u = probe_response(probe, q, settings).values
    return u - probe.ansatz_field(probe.s_delta_step).values


def remainder_check(probe: GOProbe, q: Optional[Potential] = None, sigmas: Sequence[float] = (),
                    settings: Optional[SolverSettings] = None, threads: Optional[int] = None,
                    subtract_free: bool = True) -> DecayReport:
    """
    R_sigma = u^h(s_delta) - (1 - chi_outer) A_N e^{i sigma phi} over a sigma
    sweep; rows below the resolution guard are flagged and left out of the
    fitted slopes.

    With subtract_free the same remainder of the q = 0 probe, solved with
    q = 0, is subtracted. Both carry the same discretization defect of the
    scheme, so the difference keeps only the part of R_sigma due to q.
    l2_raw_remainder always holds the unsubtracted value.
    """
    sweep = list(sigmas) if sigmas else [probe.sigma]
    free = probe.free_space() if subtract_free else None
    volume = probe.omega.grid.cell_volume

    def l2(values: np.ndarray) -> float:
        return math.sqrt(volume * float(np.sum(np.abs(values) ** 2)))

    def row(sigma: float) -> DecayRow:
        p = probe.with_sigma(sigma)
        raw = _remainder(p, q, settings)
        rem = raw if free is None else raw - _remainder(free.with_sigma(sigma), None, settings)
        return DecayRow(float(sigma), l2(rem), source_sobolev_norm(p, 2), not p.resolved, l2(raw))

    rows = parallel_map(row, sweep, threads)
    kept = [r for r in rows if not r.ppw_flag]
    for r in rows:
        if r.ppw_flag:
            logger.warning(f"sigma={r.sigma:g} below the resolution guard, excluded from the fit")
    sig = [r.sigma for r in kept]
    return DecayReport(probe.order, rows,
                       _slope(sig, [r.l2_remainder for r in kept]),
                       _slope(sig, [r.h2_source_norm for r in kept]),
                       _slope(sig, [r.l2_raw_remainder for r in kept]))


@dataclass
class LowerBoundResult:
    sigma0: float
    margin: float
    rows: List[Tuple[float, float, bool]]

    def to_dict(self) -> Dict:
        return {"sigma0": self.sigma0, "margin": self.margin}


def probe_margin(probe: GOProbe, q: Optional[Potential] = None,
                 settings: Optional[SolverSettings] = None) -> float:
    """|u^h(s_delta, x0)| - 1/2 at the probe's own sigma"""
    index = probe.omega.grid.nearest_node(probe.x0)
    return abs(probe_response(probe, q, settings).at(index)) - 0.5


def probe_lower_bound(probe: GOProbe, q: Optional[Potential] = None, sigmas: Sequence[float] = (),
                      settings: Optional[SolverSettings] = None) -> LowerBoundResult:
    """Smallest resolved sigma with |u^h(s_delta, x0)| >= 1/2"""
    rows: List[Tuple[float, float, bool]] = []
    for sigma in sorted(sigmas if sigmas else [probe.sigma]):
        p = probe.with_sigma(sigma)
        if not p.resolved:
            rows.append((float(sigma), float("nan"), False))
            continue
        value = probe_margin(p, q, settings) + 0.5
        rows.append((float(sigma), value, True))
        if value >= 0.5:
            logger.info(f"Probe lower bound met at sigma={sigma:g} with margin {value - 0.5:.3f}")
            return LowerBoundResult(float(sigma), value - 0.5, rows)
    raise NumericalFailure(f"No scheduled sigma reaches |u^h(s_delta, x0)| >= 1/2 at x0={probe.x0.tolist()}")


def probe_localization(probe: GOProbe, q: Optional[Potential] = None,
                       settings: Optional[SolverSettings] = None) -> float:
    """max |u^h(s_delta, x)| outside the ball of radius 2 eta + h around x0"""
    u = probe_response(probe, q, settings)
    coords = u.grid.coordinates()
    far = np.linalg.norm(coords - probe.x0, axis=-1) > probe.chi.support_radius + u.grid.spacing
    return float(np.max(np.abs(u.values[far]))) if np.any(far) else 0.0
