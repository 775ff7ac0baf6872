"""
Invariant Suite

The acceptance checks run by `check`. Each group returns rows
(invariant, measured, budget, status); a group that raises is recorded as a
failed row and the suite moves on. Budgets are absolute numbers in the
units of the measured column.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..control.boundary_control import (
    ControlProblem, direct_gamma, direct_indicator_inner, direct_inner, indicator_inner_intersection,
    solve_alpha_schedule, solve_control,
)
from ..control.caps import direct_point_product, point_value_product
from ..control.cost_of_control import cost_of_control_estimate
from ..errors import NumericalFailure
from ..grid.fields import boundary_inner
from ..grid.grids import SpatialGrid, TimeGrid
from ..grid.regions import distance_field, influence_region
from ..operators.connecting_operator import (
    ConnectingOperator, blago_inner, correlation_solve, inner_product_at_times, min_eigenvalue_ratio,
)
from ..operators.linear_algebra import conjugate_gradient
from ..operators.source_to_solution import SourceToSolutionMap, apply_R, op_norm_diff
from ..optics.geometric_optics import build_probe, probe_lower_bound, remainder_check
from ..reconstruction.reconstruction import illumination_source, reconstruct_potential
from ..reconstruction.stability import (
    LinearResponse, SweepSetup, bump_family, linear_response, stability_sweep,
)
from ..simulation.oracles import (
    dalembert_oracle_1d, manufactured_solution, observed_order, relative_l2_error,
)
from ..simulation.potential import Potential
from ..simulation.wave_solver import DistributedSource, WaveSolver, reach_radius, solve_forward
from .configuration_manager import CHECK_GROUPS
from .experiment_builder import Experiment

logger = logging.getLogger(__name__)

PASS = "pass"
FAIL = "fail"
INFO = "info"


@dataclass
class CheckRow:
    """One measured invariant against its budget"""
    invariant: str
    measured: float
    budget: float
    status: str

    @classmethod
    def judge(cls, invariant: str, measured: float, budget: float, at_least: bool = False) -> "CheckRow":
        """pass when measured <= budget (>= with at_least); NaN always fails"""
        measured = float(measured)
        if not math.isfinite(measured):
            ok = False
        elif at_least:
            ok = measured >= budget
        else:
            ok = measured <= budget
        return cls(invariant, measured, float(budget), PASS if ok else FAIL)

    @classmethod
    def info(cls, invariant: str, measured: float) -> "CheckRow":
        return cls(invariant, float(measured), float("nan"), INFO)

    def to_dict(self) -> Dict:
        return {
            "invariant": self.invariant,
            "measured": self.measured,
            "budget": self.budget,
            "status": self.status,
        }


@dataclass
class SuiteReport:
    rows: List[CheckRow] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.status != FAIL for r in self.rows)

    @property
    def failures(self) -> List[CheckRow]:
        return [r for r in self.rows if r.status == FAIL]

    def table(self) -> List[Dict]:
        return [r.to_dict() for r in self.rows]


def _edge_mask(shape: Sequence[int], layers: int = 2) -> np.ndarray:
    inner = np.zeros(shape, dtype=bool)
    inner[tuple(slice(layers, -layers) for _ in shape)] = True
    return ~inner


class InvariantSuite:
    """
    Runs the check groups on one experiment.

    Groups share the experiment's cached maps and Gram matrices, so
    `spectral` running first makes the dense groups after it cheap.
    """

    def __init__(self, experiment: Experiment):
        self.exp = experiment
        self.config = experiment.config
        self._groups: Dict[str, Callable[[], List[CheckRow]]] = {
            "solver": self.check_solver,
            "speed": self.check_speed,
            "adjoint": self.check_adjoint,
            "blago": self.check_blago,
            "spectral": self.check_spectral,
            "control": self.check_control,
            "indicator": self.check_indicator,
            "point": self.check_point_values,
            "optics": self.check_optics,
            "reconstruction": self.check_reconstruction,
            "stability": self.check_stability,
            "determinism": self.check_determinism,
        }

    def run(self, groups: Optional[Sequence[str]] = None) -> SuiteReport:
        selected = list(groups) if groups is not None else list(self.config.run.check_groups)
        report = SuiteReport()
        for name in CHECK_GROUPS:
            if name not in selected:
                continue
            start = time.perf_counter()
            logger.info(f"Check group '{name}'")
            try:
                rows = self._groups[name]()
            except (ValueError, RuntimeError, np.linalg.LinAlgError) as e:
                logger.error(f"Check group '{name}' failed: {e}")
                rows = [CheckRow(f"{name}_error", float("nan"), float("nan"), FAIL)]
            report.rows.extend(rows)
            report.timings[name] = time.perf_counter() - start
            for r in rows:
                level = logging.WARNING if r.status == FAIL else logging.INFO
                logger.log(level, f"  {r.invariant}: {r.measured:.4e} (budget {r.budget:.4e}) {r.status}")
        return report

    # helpers

    def _potentials(self, count: int = 3) -> List[Potential]:
        """Configured potentials, padded with scaled copies up to count"""
        pots = list(self.exp.potentials.values())
        base = [p for p in pots if not p.is_zero] or pots
        k = 0
        while len(pots) < count:
            pots.append(base[k % len(base)].scaled(-0.5 * (k + 1), pid=f"{base[k % len(base)].pid}_s{k}"))
            k += 1
        return pots

    def _map(self, potential: Potential) -> SourceToSolutionMap:
        if self.exp.potentials.get(potential.pid) is potential:
            return self.exp.lambda_map(potential.pid)
        return SourceToSolutionMap(potential, self.exp.omega, self.exp.time_grid, self.exp.settings,
                                   f"Lambda[{potential.pid}]")

    def _dense_operator(self, pid: str) -> ConnectingOperator:
        return self.exp.connecting_operator(pid, dense=True)

    # groups

    def check_solver(self) -> List[CheckRow]:
        """d'Alembert oracle at 801 nodes, CFL 0.9, and the observed order on a manufactured solution"""
        grid = SpatialGrid.from_bounds([-4.0], [4.0], 0.01)
        tg = TimeGrid(0.9, 100)
        width = 0.2

        def pulse(t, x):
            return np.exp(-x ** 2 / (2 * width ** 2)) * np.sin(5.0 * t)

        source = DistributedSource(grid, tg, lambda t, c: pulse(t, c[..., 0]))
        u = solve_forward(Potential.zero(grid), source, tg, store_steps=[tg.steps]).snapshot(tg.steps)
        oracle = dalembert_oracle_1d(pulse, tg.horizon, grid)
        rows = [CheckRow.judge("solver_dalembert_rel_l2", relative_l2_error(u.values, oracle.values), 1e-2)]

        errors, spacings = [], []
        for h in (0.04, 0.02, 0.01):
            g = SpatialGrid.from_bounds([-3.0], [3.0], h)
            t_grid = TimeGrid.from_cfl(1.0, h, 0.5)
            ms = manufactured_solution(1, 3.0, 0.5, 0.3)
            sol = solve_forward(Potential.constant(g, 0.5), DistributedSource(g, t_grid, ms.source), t_grid,
                                store_steps=[t_grid.steps])
            exact = ms.exact(t_grid.horizon, g.coordinates())
            errors.append(relative_l2_error(sol.snapshot(t_grid.steps).values, exact))
            spacings.append(h)
        order = observed_order(errors, spacings)
        rows.append(CheckRow.judge("solver_order_deviation", abs(order - 2.0), 0.3))
        return rows

    def check_speed(self) -> List[CheckRow]:
        """Exact zeros outside the discrete domain of influence and on the outer box layers"""
        exp = self.exp
        grid = exp.grid
        dist = distance_field(exp.omega).values.real
        edge = _edge_mask(grid.shape)
        worst = {"outside": 0.0, "edge": 0.0}

        def watch(n, u):
            outside = dist > reach_radius(grid.spacing, n)
            if outside.any():
                worst["outside"] = max(worst["outside"], float(np.max(np.abs(u[outside]))))
            worst["edge"] = max(worst["edge"], float(np.max(np.abs(u[edge]))))

        solver = WaveSolver(exp.potential(self.config.run.potential), exp.time_grid, exp.settings)
        solver.solve(exp.default_source(), store_steps=[], callback=watch)
        return [CheckRow.judge("finite_speed_outside_reach", worst["outside"], 0.0),
                CheckRow.judge("padded_box_edge_layers", worst["edge"], 0.0)]

    def adjoint_residuals(self) -> List[Dict]:
        """|<Lambda f, h> - <f, R Lambda R h>| / (|Lambda f| |h|) per pair and potential"""
        count = self.config.run.pairs
        sources = self.exp.random_sources(2 * count)
        fs, hs = sources[:count], sources[count:]
        nt = self.exp.time_grid.steps
        out = []
        for pot in self._potentials(3):
            m = self._map(pot)
            lam_f = m.apply_batch(np.stack([f.values for f in fs]))
            lam_rh = m.apply_batch(np.stack([apply_R(h, nt).values for h in hs]))
            for j, (f, h, lf, lrh) in enumerate(zip(fs, hs, lam_f, lam_rh)):
                a = boundary_inner(f.like(lf), h)
                b = boundary_inner(f, apply_R(h.like(lrh), nt))
                scale = max(f.like(lf).norm() * h.norm(), 1e-300)
                out.append({"kind": "adjoint", "potential": pot.pid, "pair": j,
                            "t": float("nan"), "t_prime": float("nan"), "residual": abs(a - b) / scale})
        return out

    def blago_residuals(self) -> List[Dict]:
        """
        Data-only inner products at T/2, the correlation field W(T/2, T/2) and
        inner products at translated times, each against direct solves.
        """
        exp = self.exp
        count = self.config.run.pairs
        sources = exp.random_sources(2 * count, seed=exp.seed + 1)
        fs, hs = sources[:count], sources[count:]
        half_t = exp.time_grid.horizon / 2
        out = []
        for pot in self._potentials(3):
            lam = self._map(pot)
            k = ConnectingOperator(lam)
            lam_f = lam.apply_batch(np.stack([f.values for f in fs]))
            lam_h = lam.apply_batch(np.stack([h.values for h in hs]))
            for j, (f, h) in enumerate(zip(fs, hs)):
                scale = max(f.norm() * h.norm(), 1e-300)
                direct = direct_inner(pot, f, h, half_t, half_t)
                est = blago_inner(k, f, h)
                out.append({"kind": "blago", "potential": pot.pid, "pair": j, "t": half_t, "t_prime": half_t,
                            "residual": abs(est - direct) / scale})
                w = correlation_solve(f, h, f.like(lam_f[j]), h.like(lam_h[j])).at(half_t, half_t)
                out.append({"kind": "correlation", "potential": pot.pid, "pair": j, "t": half_t,
                            "t_prime": half_t, "residual": abs(w - direct) / scale})

        pot = exp.potential(self.config.run.potential)
        k = exp.connecting_operator(pot.pid)
        half = exp.time_grid.half_steps
        dt = exp.time_grid.dt
        steps = [(half // 5, half // 2), (half // 2, half // 2), (3 * half // 4, half // 4),
                 (half, half // 3), (half // 3, half)]
        f, h = fs[0], hs[0]
        for n, m in steps:
            est = inner_product_at_times(k, f, h, n * dt, m * dt)
            direct = direct_inner(pot, f, h, n * dt, m * dt)
            out.append({"kind": "translated", "potential": pot.pid, "pair": 0, "t": n * dt, "t_prime": m * dt,
                        "residual": abs(est - direct) / max(f.norm() * h.norm(), 1e-300)})
        return out

    def check_adjoint(self) -> List[CheckRow]:
        worst = max(r["residual"] for r in self.adjoint_residuals())
        return [CheckRow.judge("adjoint_identity_rel_residual", worst, 1e-2)]

    def check_blago(self) -> List[CheckRow]:
        rows = self.blago_residuals()
        worst = max(r["residual"] for r in rows if r["kind"] == "blago")
        worst_t = max(r["residual"] for r in rows if r["kind"] == "translated")
        worst_w = max(r["residual"] for r in rows if r["kind"] == "correlation")
        return [CheckRow.judge("blago_identity_abs_over_norms", worst, 1e-2),
                CheckRow.judge("correlation_identity_abs_over_norms", worst_w, 1e-2),
                CheckRow.judge("blago_translated_abs_over_norms", worst_t, 1e-2)]

    def check_spectral(self) -> List[CheckRow]:
        """Positivity of K on the coarse basis and CG against a direct dense solve"""
        k = self._dense_operator(self.config.run.potential)
        gram = k.dense
        lam_min, lam_max = min_eigenvalue_ratio(gram)
        rows = [CheckRow.judge("K_negative_eigenvalue_ratio", max(-lam_min, 0.0) / max(lam_max, 1e-300), 1e-6),
                CheckRow.judge("K_hermitian_defect", gram.hermitian_defect(), 1e-8)]
        mat = gram.matrix()
        mat = 0.5 * (mat + mat.conj().T)
        rng = np.random.default_rng(self.exp.seed)
        b = rng.standard_normal(mat.shape[0]) + 1j * rng.standard_normal(mat.shape[0])
        rhs = mat @ b
        worst = 0.0
        for alpha in (1e-2, 1e-3):
            direct = np.linalg.solve(mat + alpha * np.eye(mat.shape[0]), rhs)
            cg = conjugate_gradient(lambda v, a=alpha: mat @ v + a * v, rhs, rtol=1e-13,
                                    maxiter=20 * mat.shape[0])
            worst = max(worst, float(np.linalg.norm(cg.x - direct) / np.linalg.norm(direct)))
        rows.append(CheckRow.judge("cg_vs_dense_rel_diff", worst, 1e-6))
        return rows

    def _control_geometries(self) -> List[tuple]:
        c = self.config.control
        half = self.exp.time_grid.horizon / 2
        dt = self.exp.time_grid.dt

        def snap(x):
            return round(x / dt) * dt

        geometries = [(snap(c.t), snap(c.s)), (snap(half), snap(half / 4)), (snap(0.75 * half), snap(half / 4))]
        return [(t, s) for t, s in geometries if 0 < s <= t <= half]

    def check_control(self) -> List[CheckRow]:
        """Gamma-hat at the L-curve knee against the direct computation, and the C/alpha bound"""
        exp = self.exp
        c = self.config.control
        pot = exp.potential(self.config.run.potential)
        k = exp.connecting_operator(pot.pid)
        f = exp.default_source()
        f_norm = f.norm()
        worst_gamma, worst_ratio, bound = 0.0, 0.0, 0.0
        for t, s in self._control_geometries():
            sweep = solve_alpha_schedule(k, f, t, s, c.alphas, max_iterations=c.max_iterations,
                                         mode="matrix-free")
            gamma, _ = direct_gamma(pot, f, t, s)
            knee = sweep.knee_solution
            worst_gamma = max(worst_gamma, abs(knee.gamma_hat - gamma) / max(gamma, 1e-300))
            u_norm = math.sqrt(max(knee.target_norm_sq, 0.0))
            bound = max(bound, math.sqrt(max(c.alphas)) * u_norm / f_norm)
            for sol in sweep.solutions:
                worst_ratio = max(worst_ratio, sol.alpha * sol.control_norm / f_norm)
        return [CheckRow.judge("gamma_hat_rel_error_at_knee", worst_gamma, 0.10),
                CheckRow.judge("alpha_control_norm_over_f", worst_ratio, bound)]

    def check_indicator(self) -> List[CheckRow]:
        """Indicator inner products within their data-derived tolerance, monotone tolerances"""
        exp = self.exp
        c = self.config.control
        pot = exp.potential(self.config.run.potential)
        k = exp.connecting_operator(pot.pid)
        f = exp.default_source()
        h = exp.random_sources(1, seed=exp.seed + 2)[0]
        t, s = self._control_geometries()[0]
        mask = influence_region(exp.omega, s).mask
        direct = direct_indicator_inner(pot, f, h, t, t, mask)
        h_norm = math.sqrt(max(inner_product_at_times(k, h, h, t, t).real, 0.0))
        worst, increases, previous = 0.0, 0, None
        for alpha in sorted(c.alphas, reverse=True):
            sol = solve_control(k, ControlProblem(f, t, s, alpha, max_iterations=c.max_iterations,
                                                  mode="matrix-free"))
            est = inner_product_at_times(k, sol.control, h, t, t)
            tol = math.sqrt(max(sol.gamma_hat, 0.0)) * h_norm
            worst = max(worst, abs(est - direct) / max(tol, 1e-300))
            if previous is not None and sol.gamma_hat > previous * (1 + 1e-3):
                increases += 1
            previous = sol.gamma_hat

        alpha = min(c.alphas)
        single = solve_control(k, ControlProblem(f, t, s, alpha, max_iterations=c.max_iterations,
                                                 mode="matrix-free"))
        one = inner_product_at_times(k, single.control, f, t, t)
        both = indicator_inner_intersection(k, f, f, t, t, (None, s), (None, s), alpha,
                                            max_iterations=c.max_iterations, mode="matrix-free")
        consistency = abs(both - one) / max(abs(one), 1e-300)
        return [CheckRow.judge("indicator_error_over_tolerance", worst, 1.0),
                CheckRow.judge("indicator_tolerance_increases", increases, 0),
                CheckRow.judge("intersection_vs_single_rel_diff", consistency, 0.10)]

    def check_point_values(self) -> List[CheckRow]:
        """Cap-averaged point products at five target nodes against direct products"""
        exp = self.exp
        rc = self.config.reconstruction
        cfg = exp.reconstruction_config()
        pot = exp.potential(rc.reference)
        k = self._dense_operator(pot.pid)
        f = illumination_source(exp.omega, exp.time_grid, rc.illumination_width, rc.illumination_ramp)
        t = exp.time_grid.horizon / 2
        nodes = cfg.target_nodes()
        picks = nodes[np.unique(np.linspace(0, len(nodes) - 1, 5).round().astype(int))]
        est, direct = [], []
        for x0 in picks:
            e = point_value_product(k, f, f, t, t, x0, cfg.schedule, rc.cap_radius, tol=cfg.plateau_tolerance)
            est.append(e.value)
            direct.append(direct_point_product(pot, f, f, t, t, x0))
        est, direct = np.array(est), np.array(direct)
        rel = float(np.max(np.abs(est - direct) / np.maximum(np.abs(direct), 1e-300)))
        scale = float(np.max(np.abs(direct)))
        ratio = np.abs(np.diff(est)) / (np.abs(np.diff(direct)) + 0.2 * scale)
        return [CheckRow.judge("point_value_rel_error", rel, 0.10),
                CheckRow.judge("point_value_lipschitz_ratio", float(np.max(ratio)) if ratio.size else 0.0, 1.0),
                CheckRow.info("point_value_nodes", len(picks))]

    def check_optics(self) -> List[CheckRow]:
        """Remainder decay over the sigma schedule, one order higher, and the probe lower bound"""
        study = self.exp.probe_study()
        p = self.config.probe
        q = self.exp.probe_potential()
        slopes, raw = {}, {}
        for order in (p.order, p.order + 1):
            probe = build_probe(p.x0, study.omega, q, study.time_grid, p.sigmas[0], order, p.delta, p.eta,
                                p.outer_transition)
            report = remainder_check(probe, q, p.sigmas, study.settings, study.threads)
            slopes[order], raw[order] = report.remainder_slope, report.raw_slope
        rows = [CheckRow.judge(f"go_remainder_slope_order{p.order}", slopes[p.order], -0.7),
                CheckRow.judge("go_higher_order_slope_gain", slopes[p.order] - slopes[p.order + 1], 0.5,
                               at_least=True),
                CheckRow.info(f"go_raw_remainder_slope_order{p.order}", raw[p.order]),
                CheckRow.info(f"go_raw_remainder_slope_order{p.order + 1}", raw[p.order + 1])]
        base = build_probe(p.x0, study.omega, q, study.time_grid, p.sigmas[0], p.order, p.delta, p.eta,
                           p.outer_transition)
        try:
            margin = probe_lower_bound(base, q, p.sigmas, study.settings).margin
        except NumericalFailure as e:
            logger.warning(str(e))
            margin = float("nan")
        rows.append(CheckRow.judge("probe_lower_bound_margin", margin, 0.1, at_least=True))
        return rows

    def linear_response(self) -> LinearResponse:
        """|d| at the probe node and time for q2 = q1 + tau * bump over the configured taus"""
        exp = self.exp
        rc, sw = self.config.reconstruction, self.config.sweep
        cfg = exp.reconstruction_config()
        p = cfg.probe
        x0 = np.atleast_2d(np.asarray(self.config.probe.x0, dtype=float))
        probe = build_probe(x0[0], exp.omega, cfg.reference, exp.time_grid, p.sigma, p.order, p.delta, p.eta,
                            p.outer_transition, p.frame_refine)
        f = illumination_source(exp.omega, exp.time_grid, rc.illumination_width, rc.illumination_ramp)
        return linear_response(cfg, sw.response_taus, sw.center, sw.width, f, [probe.s_delta], x0,
                               exp.threads)

    def check_reconstruction(self) -> List[CheckRow]:
        """End-to-end error and acceptance, and the identical-map run at the noise floor"""
        exp = self.exp
        rc = self.config.reconstruction
        result = reconstruct_potential(exp.reconstruction_config())
        rows = [CheckRow.judge("reconstruction_rel_l2_error", result.relative_error, 0.15),
                CheckRow.judge("reconstruction_accepted_fraction", 1.0 - result.rejected_fraction, 0.9,
                               at_least=True)]
        same = reconstruct_potential(exp.reconstruction_config(rc.reference, rc.reference))
        rows.append(CheckRow.judge("identical_maps_error", same.relative_error, 1e-10))
        rows.append(CheckRow.judge("difference_field_linear_r2", self.linear_response().r_squared, 0.95,
                                   at_least=True))
        return rows

    def check_stability(self) -> List[CheckRow]:
        """Rank correlation of data and potential distances; monotone cost table"""
        exp = self.exp
        c, sw = self.config.control, self.config.sweep
        pairs = bump_family(exp.potential(sw.base), sw.amplitudes, sw.center, sw.width)
        setup = SweepSetup(exp.omega, exp.target, exp.time_grid, exp.settings, c.norm_iterations,
                           c.norm_tolerance, exp.seed, threads=exp.threads)
        setup.family = exp.family_probe()
        table = stability_sweep(pairs, setup)
        constants = [r.stability_constant for r in table.rows if np.isfinite(r.stability_constant)]
        rows = [CheckRow.judge("sweep_spearman", table.spearman, 0.9, at_least=True),
                CheckRow.info("sweep_fitted_ell", table.ell),
                CheckRow.judge("indicator_difference_spearman", table.indicator_spearman, 0.9, at_least=True),
                CheckRow.info("inner_product_stability_constant_max", max(constants, default=float("nan"))),
                CheckRow.info("inner_product_stability_constant_spread", table.constant_spread),
                CheckRow.info("probe_margin_vs_q_sup_spearman", table.margin_spearman)]
        k = self._dense_operator(self.config.run.potential)
        cost = cost_of_control_estimate(k, exp.default_source(), c.t, c.s, c.epsilons,
                                        bisection_steps=c.bisection_steps)
        rows.append(CheckRow.judge("cost_table_monotone_violations", 0 if cost.is_monotone() else 1, 0))
        if table.double_log:
            rows.append(CheckRow.info("double_log_alpha", table.double_log["alpha"]))
            rows.append(CheckRow.info("double_log_rms_residual", table.double_log["rms_residual"]))
        return rows

    def check_determinism(self) -> List[CheckRow]:
        """Seeded sources and norm estimates repeat exactly"""
        exp = self.exp
        c = self.config.control
        rc = self.config.reconstruction
        a = exp.random_sources(3)
        b = exp.random_sources(3)
        source_diff = max(float(np.max(np.abs(x.values - y.values))) for x, y in zip(a, b))
        m1, m2 = exp.lambda_map(rc.reference), exp.lambda_map(rc.data)
        first = op_norm_diff(m1, m2, c.norm_iterations, c.norm_tolerance, exp.seed)
        second = op_norm_diff(m1, m2, c.norm_iterations, c.norm_tolerance, exp.seed)
        return [CheckRow.judge("seeded_sources_max_diff", source_diff, 0.0),
                CheckRow.judge("norm_estimate_repeat_diff", abs(first.value - second.value), 0.0)]
