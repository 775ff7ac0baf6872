"""
Boundary Control

Tikhonov-regularised approximate controls from data: minimise

    A_alpha(g) = |u^g(t) - u^f(t)|^2 + alpha |g|^2

over sources g supported in (t - s, t) x omega', using only the connecting
operator. The minimiser drives u^g(t) towards the indicator of the domain of
influence times u^f(t), which gives data-only inner products against
indicators of M(omega', s) and of intersections of such sets.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import SupportViolationError
from ..grid.fields import BoundaryData, ScalarField
from ..grid.regions import Region, influence_region
from ..operators.connecting_operator import (
    ConnectingOperator, inner_product_at_times, shift_to_half,
)
from ..operators.linear_algebra import conjugate_gradient, hermitian_power
from ..operators.source_to_solution import shift_steps
from ..simulation.potential import Potential
from ..simulation.wave_solver import SolverSettings, WaveSolver

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = 500


@dataclass
class ControlProblem:
    """
    Control of u^f(t) towards 1_{M(region, s)} u^f(t).

    region defaults to the whole observation region. tolerance overrides the
    relative CG tolerance min(1e-8, alpha/100). mode is "auto", "matrix-free"
    or "dense"; auto uses the dense Gram when the operator carries one.
    """
    source: BoundaryData
    t: float
    s: float
    alpha: float
    region: Optional[Region] = None
    tolerance: Optional[float] = None
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    mode: str = "auto"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"Regularisation alpha must be positive, got {self.alpha}")
        if self.t <= 0 or self.s <= 0:
            raise ValueError(f"Control times must be positive (t={self.t}, s={self.s})")
        if self.mode not in ("auto", "matrix-free", "dense"):
            raise ValueError(f"Unknown control mode '{self.mode}'")

    @property
    def rtol(self) -> float:
        return self.tolerance if self.tolerance is not None else min(1e-8, self.alpha / 100.0)

    def window_steps(self) -> Tuple[int, int]:
        tg = self.source.time_grid
        i_t, i_s = tg.index_of(self.t), tg.index_of(self.s)
        return max(i_t - i_s, 0), i_t

    def control_region(self) -> Region:
        return self.region if self.region is not None else self.source.region


@dataclass
class ControlSolution:
    """Minimiser g_alpha with its data-only diagnostics"""
    control: BoundaryData
    alpha: float
    a_alpha: float
    gamma_hat: float
    residual_bound: float
    target_norm_sq: float
    control_norm: float
    iterations: int
    residual: float
    converged: bool
    mode: str

    def to_dict(self) -> Dict:
        return {
            "alpha": self.alpha,
            "iters": self.iterations,
            "residual": self.residual,
            "A_alpha": self.a_alpha,
            "gamma_hat": self.gamma_hat,
            "g_norm": self.control_norm,
            "converged": self.converged,
        }


def _node_columns(omega: Region, region: Region) -> np.ndarray:
    omega.grid.require_same(region.grid)
    keep = region.mask.reshape(-1)[omega.flat_indices]
    if not keep.any():
        raise SupportViolationError(f"Control region '{region.name}' does not meet the observation region")
    if np.any(region.mask & ~omega.mask):
        raise SupportViolationError(f"Control region '{region.name}' is not inside the observation region")
    return np.flatnonzero(keep)


def _finish(k: ConnectingOperator, p: ControlProblem, g: BoundaryData, g_kg: float, g_kf: complex,
            f_kf: float, g_norm_sq: float, iterations: int, residual: float, converged: bool,
            mode: str) -> ControlSolution:
    a_alpha = g_kg - 2.0 * g_kf.real + f_kf + p.alpha * g_norm_sq
    gamma = max(a_alpha - p.alpha * g_norm_sq, 0.0)
    solution = ControlSolution(g, p.alpha, float(a_alpha), float(gamma), float(p.alpha * g_norm_sq),
                               float(f_kf), float(np.sqrt(max(g_norm_sq, 0.0))), iterations,
                               residual, converged, mode)
    if not converged:
        logger.warning(f"Control at t={p.t:g}, s={p.s:g}, alpha={p.alpha:g} not converged "
                       f"(residual {residual:.2e})")
    logger.debug(f"Control t={p.t:g} s={p.s:g} alpha={p.alpha:g}: A_alpha={a_alpha:.4e}, "
                 f"gamma_hat={gamma:.4e}, {iterations} CG iterations")
    return solution


def _solve_matrix_free(k: ConnectingOperator, p: ControlProblem) -> ControlSolution:
    f = p.source
    tg = f.time_grid
    first, i_t = p.window_steps()
    kt = k.translated(p.t)
    omega = k.lambda_map.omega
    cols = _node_columns(omega, p.control_region())
    rows = np.arange(first, i_t + 1)
    tw = tg.trapezoid_weights(0, i_t)
    sw = omega.node_weights
    root = np.sqrt(tw[rows][:, None] * sw[cols][None, :]).reshape(-1)
    block = (len(rows), len(cols))

    f_cut = f.restrict_window(*_clip_window(f, i_t))
    kf = kt.apply(f_cut).values
    f_kf = float(np.einsum("n,i,ni->", tw, sw, f_cut.values * np.conj(kf)).real)

    def embed(y: np.ndarray) -> np.ndarray:
        v = np.zeros((tg.steps + 1, omega.node_count), dtype=complex)
        v[np.ix_(rows, cols)] = (y / root).reshape(block)
        return v

    def restrict(v: np.ndarray) -> np.ndarray:
        return root * v[np.ix_(rows, cols)].reshape(-1)

    def matvec(y: np.ndarray) -> np.ndarray:
        return restrict(kt.apply_batch(embed(y)[None])[0]) + p.alpha * y

    result = conjugate_gradient(matvec, restrict(kf), p.rtol, p.max_iterations)
    g_values = embed(result.x)
    kg = kt.apply_batch(g_values[None])[0]
    weight = tw[:, None] * sw[None, :]
    g_kg = float(np.sum(weight * g_values * np.conj(kg)).real)
    g_kf = complex(np.sum(weight * g_values * np.conj(kf)))
    g_norm_sq = float(np.sum(weight * np.abs(g_values) ** 2))
    g = BoundaryData(omega, tg, g_values, (first, i_t))
    return _finish(k, p, g, g_kg, g_kf, f_kf, g_norm_sq, result.iterations, result.residual,
                   result.converged, "matrix-free")


def _clip_window(f: BoundaryData, last: int) -> Tuple[int, int]:
    lo = min(f.window[0], last)
    return lo, last


def _solve_dense(k: ConnectingOperator, p: ControlProblem) -> ControlSolution:
    """Galerkin solve on the coarse basis, in the frame where t is shifted to T/2"""
    gram = k.dense
    basis = gram.basis
    tg = k.time_grid
    half = k.half_steps
    first, i_t = p.window_steps()
    if i_t > half:
        raise SupportViolationError(f"Evaluation time {p.t:g} beyond T/2 = {half * tg.dt:g}")
    d = half - i_t
    _node_columns(k.lambda_map.omega, p.control_region())
    sel = basis.select(first + d, half, p.control_region().mask)
    if sel.size == 0:
        raise SupportViolationError(f"No basis functions fit the window ({p.t - p.s:g}, {p.t:g})")

    f_half = shift_to_half(p.source, i_t, half)
    kf = k.apply(f_half)
    tw = tg.trapezoid_weights(0, half)
    r = basis.pair_values(kf.values, tw)[sel]
    f_kf = float(k.pair(f_half, kf).real)
    g_ss = gram.galerkin[np.ix_(sel, sel)]
    m_ss = gram.mass[np.ix_(sel, sel)]
    root_inv = hermitian_power(m_ss, -0.5)
    whitened = root_inv @ g_ss @ root_inv
    result = conjugate_gradient(lambda y: whitened @ y + p.alpha * y, root_inv @ r,
                                p.rtol, p.max_iterations)
    c = root_inv @ result.x
    g_kg = float(np.real(np.vdot(c, g_ss @ c)))
    g_kf = complex(np.vdot(r, c))
    g_norm_sq = float(np.real(np.vdot(c, m_ss @ c)))
    g_half = basis.synthesize(c, sel)
    g = shift_steps(g_half, -d) if d else g_half
    return _finish(k, p, g, g_kg, g_kf, f_kf, g_norm_sq, result.iterations, result.residual,
                   result.converged, "dense")


def solve_control(k: ConnectingOperator, p: ControlProblem) -> ControlSolution:
    """
    Solve (P K_t P + alpha) g = P K_t f on the control window.

    Non-convergence is reported on the solution, never raised.
    """
    tg = k.time_grid
    i_t = tg.index_of(p.t)
    if not 0 < i_t <= k.half_steps:
        raise SupportViolationError(f"Evaluation time {p.t:g} outside (0, {k.horizon / 2:g}]")
    if p.source.is_zero():
        zero = BoundaryData.zeros(p.source.region, tg)
        return ControlSolution(zero, p.alpha, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0, True, "trivial")
    use_dense = p.mode == "dense" or (p.mode == "auto" and k.dense is not None)
    if use_dense:
        if k.dense is None:
            raise ValueError("Dense control requested but no Gram matrix is assembled")
        return _solve_dense(k, p)
    return _solve_matrix_free(k, p)


def gamma_estimate(k: ConnectingOperator, p: ControlProblem, solution: ControlSolution) -> float:
    """A_alpha(g_alpha) - alpha |g_alpha|^2, clipped at zero"""
    return max(solution.a_alpha - p.alpha * solution.control_norm ** 2, 0.0)


def control_objective(k: ConnectingOperator, p: ControlProblem, g: BoundaryData) -> float:
    """A_alpha(g) from data for any window-supported g (one K application)"""
    kt = k.translated(p.t)
    i_t = k.time_grid.index_of(p.t)
    f = p.source.restrict_window(*_clip_window(p.source, i_t))
    diff = g - f
    a_value = kt.pair(diff, kt.apply(diff)).real
    tw = k.time_grid.trapezoid_weights(0, i_t)
    norm_sq = float(np.einsum("n,i,ni->", tw, g.region.node_weights, np.abs(g.values) ** 2))
    return float(a_value + p.alpha * norm_sq)


@dataclass
class MinimalityCheck:
    """A_alpha at the solution against random window-supported competitors"""
    a_alpha: float
    competitors: List[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        slack = 1e-8 * max(abs(self.a_alpha), 1e-300)
        return all(c >= self.a_alpha - slack for c in self.competitors)


def minimality_check(k: ConnectingOperator, p: ControlProblem, solution: ControlSolution,
                     count: int = 5, scale: float = 0.1, seed: int = 0) -> MinimalityCheck:
    rng = np.random.default_rng(seed)
    first, last = p.window_steps()
    g = solution.control
    a_star = control_objective(k, p, g)
    keep = p.control_region().mask.reshape(-1)[g.region.flat_indices]
    size = max(solution.control_norm, 1e-12) * scale
    values = []
    for _ in range(count):
        noise = rng.standard_normal(g.values.shape) + 1j * rng.standard_normal(g.values.shape)
        noise[:first] = 0.0
        noise[last + 1:] = 0.0
        noise *= keep[None, :]
        bump = g.like(noise, (first, last))
        bump = bump * (size / max(bump.norm(), 1e-300))
        values.append(control_objective(k, p, g + bump))
    return MinimalityCheck(a_star, values)


def indicator_solution(k: ConnectingOperator, f: BoundaryData, t: float, s: float, alpha: float,
                       region: Optional[Region] = None, **kwargs) -> ControlSolution:
    return solve_control(k, ControlProblem(f, t, s, alpha, region, **kwargs))


def indicator_inner(k: ConnectingOperator, f: BoundaryData, h: BoundaryData, t: float,
                    t_prime: float, s: float, alpha: float, region: Optional[Region] = None,
                    **kwargs) -> complex:
    """Data-only estimate of (1_{M(region, s)} u^f(t), u^h(t'))"""
    if f.is_zero() or h.is_zero():
        return 0j
    solution = indicator_solution(k, f, t, s, alpha, region, **kwargs)
    return inner_product_at_times(k, solution.control, h, t, t_prime)


def indicator_inner_intersection(k: ConnectingOperator, f: BoundaryData, h: BoundaryData,
                                 t: float, t_prime: float, outer: Tuple[Optional[Region], float],
                                 inner: Tuple[Optional[Region], float], alpha: float,
                                 **kwargs) -> complex:
    """
    Estimate of (1_{M(outer)} 1_{M(inner)} u^f(t), u^h(t')).

    The first control moves u^f(t) to 1_{M(inner)} u^f(t) with sources in the
    inner region; its control is then the source of the outer indicator.
    """
    if f.is_zero() or h.is_zero():
        return 0j
    inner_region, inner_s = inner
    outer_region, outer_s = outer
    stage = indicator_solution(k, f, t, inner_s, alpha, inner_region, **kwargs)
    if stage.control.is_zero():
        return 0j
    return indicator_inner(k, stage.control, h, t, t_prime, outer_s, alpha, outer_region, **kwargs)


def lcurve_knee(residuals: Sequence[float], norms: Sequence[float]) -> int:
    """
    Knee of the L-curve (log sqrt(A), log |g|): the point farthest from the
    chord joining the first and last points.
    """
    x = 0.5 * np.log(np.maximum(np.asarray(residuals, dtype=float), 1e-300))
    y = np.log(np.maximum(np.asarray(norms, dtype=float), 1e-300))
    if len(x) < 3:
        return len(x) - 1
    p0 = np.array([x[0], y[0]])
    chord = np.array([x[-1], y[-1]]) - p0
    length = np.linalg.norm(chord)
    if length == 0:
        return len(x) - 1
    rel = np.stack([x, y], axis=1) - p0
    dist = np.abs(chord[0] * rel[:, 1] - chord[1] * rel[:, 0]) / length
    return int(np.argmax(dist))


@dataclass
class AlphaSweep:
    solutions: List[ControlSolution]
    knee: int

    @property
    def knee_solution(self) -> ControlSolution:
        return self.solutions[self.knee]

    def rows(self) -> List[Dict]:
        return [s.to_dict() for s in self.solutions]


def solve_alpha_schedule(k: ConnectingOperator, f: BoundaryData, t: float, s: float,
                         alphas: Sequence[float], region: Optional[Region] = None,
                         **kwargs) -> AlphaSweep:
    """Controls along a decreasing alpha schedule with the L-curve knee"""
    solutions = [indicator_solution(k, f, t, s, a, region, **kwargs) for a in alphas]
    a_values = [max(sol.gamma_hat, 1e-300) for sol in solutions]
    knee = lcurve_knee(a_values, [max(sol.control_norm, 1e-300) for sol in solutions])
    logger.info(f"alpha schedule of {len(alphas)} solves, knee at alpha={alphas[knee]:g}")
    return AlphaSweep(solutions, knee)


def field_at(potential: Potential, source, t: float,
             settings: Optional[SolverSettings] = None) -> ScalarField:
    """Direct solve: u^source(t) on the whole box"""
    tg = source.time_grid
    n = tg.index_of(t)
    sol = WaveSolver(potential, tg, settings).solve(source, steps=n, store_steps=[n])
    return sol.snapshot(n)


def _box_inner(a: ScalarField, b: ScalarField) -> complex:
    return complex(a.grid.cell_volume * np.sum(a.values * np.conj(b.values)))


def direct_gamma(potential: Potential, f: BoundaryData, t: float, s: float,
                 region: Optional[Region] = None) -> Tuple[float, float]:
    """(|(1 - 1_M) u^f(t)|^2, |u^f(t)|^2) by a direct solve, M = M(region, s)"""
    u = field_at(potential, f, t)
    inside = influence_region(region if region is not None else f.region, s).mask
    outside = np.where(inside, 0.0, u.values)
    return (float(u.grid.cell_volume * np.sum(np.abs(outside) ** 2)),
            float(u.grid.cell_volume * np.sum(np.abs(u.values) ** 2)))


def direct_indicator_inner(potential: Potential, f: BoundaryData, h: BoundaryData, t: float,
                           t_prime: float, mask: np.ndarray) -> complex:
    """(1_mask u^f(t), u^h(t')) by direct solves"""
    u = field_at(potential, f, t)
    v = field_at(potential, h, t_prime)
    return _box_inner(ScalarField(u.grid, np.where(mask, u.values, 0.0)), v)


def direct_inner(potential: Potential, f: BoundaryData, h: BoundaryData, t: float,
                 t_prime: float) -> complex:
    """(u^f(t), u^h(t')) by direct solves"""
    return _box_inner(field_at(potential, f, t), field_at(potential, h, t_prime))


@dataclass
class IdentityCheck:
    """A(g) = B(g) + Gamma from direct solves"""
    a_value: float
    b_value: float
    gamma: float

    @property
    def defect(self) -> float:
        scale = max(abs(self.a_value), 1e-300)
        return abs(self.a_value - self.b_value - self.gamma) / scale


def identity_check(potential: Potential, f: BoundaryData, g: BoundaryData, t: float, s: float,
                   region: Optional[Region] = None) -> IdentityCheck:
    u_f = field_at(potential, f, t).values
    u_g = field_at(potential, g, t).values
    inside = influence_region(region if region is not None else f.region, s).mask
    hv = potential.grid.cell_volume
    a_value = hv * np.sum(np.abs(u_g - u_f) ** 2)
    b_value = hv * np.sum(np.abs(u_g - np.where(inside, u_f, 0.0)) ** 2)
    gamma = hv * np.sum(np.abs(np.where(inside, 0.0, u_f)) ** 2)
    return IdentityCheck(float(a_value), float(b_value), float(gamma))


