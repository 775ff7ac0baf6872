"""
Experiment Runner Service

Dispatches a subcommand on a built experiment and writes its artifacts:
one CSV table, one SVG plot of the primary curve and one JSON summary per
run. All files are written on the calling thread through one
ReportGenerator.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from ..control.boundary_control import (
    ControlProblem, direct_gamma, identity_check, minimality_check, solve_alpha_schedule,
)
from ..control.cost_of_control import cost_of_control_estimate
from ..errors import ConfigValidationError, NumericalFailure
from ..operators.source_to_solution import op_norm_diff
from ..optics.geometric_optics import build_probe, probe_lower_bound, remainder_check
from ..reconstruction.reconstruction import reconstruct_potential
from ..reconstruction.stability import SweepSetup, bump_family, stability_sweep
from ..reporting.plotting import PlotSpec, emit_plot
from ..reporting.report_generator import ReportGenerator
from ..simulation.snapshot_io import write_snapshots
from ..simulation.wave_solver import energy, reach_radius, solve_forward
from .experiment_builder import Experiment
from .invariant_suite import InvariantSuite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class Subcommand(Enum):
    """Supported subcommands"""
    FORWARD = "forward"
    LAMBDA_NORM = "lambda-norm"
    BLAGO_CHECK = "blago-check"
    CONTROL = "control"
    COST = "cost"
    GO_CHECK = "go-check"
    RECONSTRUCT = "reconstruct"
    SWEEP = "sweep"
    CHECK = "check"

    @classmethod
    def names(cls) -> List[str]:
        return [s.value for s in cls]


@dataclass
class RunOutcome:
    """Exit status and artifacts of one subcommand"""
    subcommand: str
    exit_code: int = EXIT_OK
    summary: Dict = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)
    flagged: List[str] = field(default_factory=list)

    def flag(self, message: str) -> None:
        logger.warning(message)
        self.flagged.append(message)
        self.exit_code = EXIT_NUMERICAL


def _double_log_curve(fit: Dict[str, float]) -> Callable[[np.ndarray], np.ndarray]:
    def model(d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.log(np.abs(np.log(d)))
            return np.where((d > 0) & (d < math.exp(-1)), fit["C"] / inner ** fit["alpha"], np.nan)
    return model


class ExperimentRunner:
    """
    Runs one subcommand on a built experiment.

    Handlers return a RunOutcome; flagged rows set exit code 3 after the
    artifacts are written.
    """

    def __init__(self, experiment: Experiment, reporter: ReportGenerator):
        self.exp = experiment
        self.config = experiment.config
        self.reporter = reporter
        self._handlers: Dict[Subcommand, Callable[[RunOutcome], None]] = {
            Subcommand.FORWARD: self._forward,
            Subcommand.LAMBDA_NORM: self._lambda_norm,
            Subcommand.BLAGO_CHECK: self._blago_check,
            Subcommand.CONTROL: self._control,
            Subcommand.COST: self._cost,
            Subcommand.GO_CHECK: self._go_check,
            Subcommand.RECONSTRUCT: self._reconstruct,
            Subcommand.SWEEP: self._sweep,
            Subcommand.CHECK: self._check,
        }

    def run(self, subcommand: str) -> RunOutcome:
        try:
            command = Subcommand(subcommand)
        except ValueError:
            raise ConfigValidationError(f"Unknown subcommand '{subcommand}'; "
                                        f"choose from {', '.join(Subcommand.names())}") from None
        outcome = RunOutcome(command.value)
        logger.info(f"Running '{command.value}'")
        self._handlers[command](outcome)
        outcome.files = list(self.reporter.written)
        return outcome

    def _emit(self, outcome: RunOutcome, rows: List[Dict], spec: PlotSpec,
              plot_rows: List[Dict] = None) -> None:
        name = outcome.subcommand
        self.reporter.write_csv(f"{name}.csv", rows)
        plotted = plot_rows if plot_rows is not None else rows
        if plotted:
            emit_plot(plotted, spec, self.reporter.output_dir / f"{name}.svg")
        else:
            outcome.flag(f"No rows to plot for '{name}'; {name}.svg was not written")
        self.reporter.write_json(f"{name}.json", {**outcome.summary, "flagged": outcome.flagged})

    # subcommands

    def _forward(self, outcome: RunOutcome) -> None:
        exp = self.exp
        run = self.config.run
        tg = exp.time_grid
        pot = exp.potential(run.potential)
        every = max(run.store_every, 1)
        marks = set(range(0, tg.steps, every)) | {min(int(round(t / tg.dt)), tg.steps - 1) for t in run.times}
        store = sorted({m for n in marks for m in (n, n + 1)})
        u = solve_forward(pot, exp.default_source(), tg, exp.settings, store_steps=store)
        path = write_snapshots(self.reporter.output_dir / "forward.bcsnap", u)
        self.reporter.written.append(path)
        hv = exp.grid.cell_volume
        rows = []
        for n in store:
            if not u.has_step(n + 1):
                continue
            values = u.snapshot(n).values
            rows.append({"step": n, "time": n * tg.dt,
                         "l2_norm": math.sqrt(hv * float(np.sum(np.abs(values) ** 2))),
                         "energy": energy(u, pot, n)})
        outcome.summary = {"potential": pot.pid, "steps": tg.steps, "stored_steps": len(store),
                           "grid": exp.grid.to_dict(), "time_grid": tg.to_dict()}
        self._emit(outcome, rows, PlotSpec("time", "l2_norm", title="Forward solve", ylabel="||u(t)||"))

    def _lambda_norm(self, outcome: RunOutcome) -> None:
        exp = self.exp
        c = self.config.control
        ref = exp.potential(self.config.reconstruction.reference)
        others = [p for pid, p in exp.potentials.items() if pid != ref.pid]
        if not others:
            raise ConfigValidationError("lambda-norm needs a second potential besides the reference")
        rows = []
        for pot in others:
            est = op_norm_diff(exp.lambda_map(ref.pid), exp.lambda_map(pot.pid), c.norm_iterations,
                               c.norm_tolerance, exp.seed)
            row = {"pair": f"{ref.pid}-{pot.pid}", **est.to_dict(),
                   "q_diff": ref.l2_distance(pot, exp.target)}
            rows.append(row)
            if not est.converged:
                logger.warning(f"Norm estimate for {row['pair']} stopped at {est.iterations} iterations "
                               f"(relative change {est.relative_change:.2e})")
        outcome.summary = {"reference": ref.pid, "pairs": len(rows)}
        self._emit(outcome, rows, PlotSpec("q_diff", "value", title="Operator norm of the map difference",
                                           xlabel="||q1 - q2||_L2(K)", ylabel="||Lambda1 - Lambda2||",
                                           scatter=True))

    def _blago_check(self, outcome: RunOutcome) -> None:
        suite = InvariantSuite(self.exp)
        rows = suite.adjoint_residuals() + suite.blago_residuals()
        for i, row in enumerate(rows):
            row["index"] = i
        worst = {}
        for row in rows:
            worst[row["kind"]] = max(worst.get(row["kind"], 0.0), row["residual"])
        for kind, value in worst.items():
            if not value <= 1e-2:
                outcome.flag(f"{kind} residual {value:.3e} over 1e-2")
        outcome.summary = {"max_residual": worst, "rows": len(rows)}
        self._emit(outcome, rows, PlotSpec("index", "residual", title="Identity residuals", logy=True,
                                           scatter=True))

    def _control(self, outcome: RunOutcome) -> None:
        exp = self.exp
        c = self.config.control
        pot = exp.potential(self.config.run.potential)
        k = exp.connecting_operator(pot.pid, dense=c.mode == "dense")
        f = exp.default_source()
        sweep = solve_alpha_schedule(k, f, c.t, c.s, c.alphas, max_iterations=c.max_iterations, mode=c.mode)
        gamma, total = direct_gamma(pot, f, c.t, c.s)
        rows = []
        for i, row in enumerate(sweep.rows()):
            row.update(gamma_direct=gamma, knee=i == sweep.knee)
            rows.append(row)
        knee = sweep.knee_solution
        problem = ControlProblem(f, c.t, c.s, knee.alpha, max_iterations=c.max_iterations, mode=c.mode)
        minimal = minimality_check(k, problem, knee, seed=exp.seed)
        # u^g(t) vanishes outside the discrete reach of the control window, which contains M(omega, s)
        window = problem.window_steps()
        reach = reach_radius(exp.grid.spacing, window[1] - window[0])
        defect = identity_check(pot, f, knee.control, c.t, reach).defect
        if not minimal.passed:
            outcome.flag(f"Control at alpha={knee.alpha:g} is beaten by a nearby competitor")
        if defect > 1e-6:
            outcome.flag(f"A = B + Gamma defect {defect:.3e}")
        for sol in sweep.solutions:
            if not sol.converged:
                logger.warning(f"CG did not converge at alpha={sol.alpha:g} ({sol.iterations} iterations)")
        outcome.summary = {
            "t": c.t, "s": c.s, "knee_alpha": knee.alpha, "gamma_hat": knee.gamma_hat,
            "gamma_direct": gamma, "u_norm_sq": total,
            "gamma_rel_error": abs(knee.gamma_hat - gamma) / gamma if gamma > 0 else float("nan"),
            "minimality_passed": minimal.passed, "identity_defect": defect, "identity_reach": reach,
        }
        self._emit(outcome, rows, PlotSpec("alpha", ["gamma_hat", "gamma_direct"], title="Control defect",
                                           logx=True, logy=True))

    def _cost(self, outcome: RunOutcome) -> None:
        exp = self.exp
        c = self.config.control
        pot = exp.potential(self.config.run.potential)
        k = exp.connecting_operator(pot.pid, dense=c.mode == "dense")
        table = cost_of_control_estimate(k, exp.default_source(), c.t, c.s, c.epsilons,
                                         bisection_steps=c.bisection_steps, mode=c.mode)
        rows = [r.to_dict() for r in table.rows]
        if not table.is_monotone():
            outcome.flag("Cost table is not monotone in epsilon")
        for r in table.rows:
            if not r.reachable:
                logger.warning(f"epsilon={r.epsilon:g} not reached by the smallest alpha")
        outcome.summary = {"loglog_slope": table.loglog_slope, "loglog_intercept": table.loglog_intercept,
                           "monotone": table.is_monotone()}
        self._emit(outcome, rows, PlotSpec("epsilon", "cost", title="Cost of control", logx=True,
                                           logy=True, fit_slope=True))

    def _go_check(self, outcome: RunOutcome) -> None:
        exp = self.exp.probe_study()
        p = self.config.probe
        q = self.exp.probe_potential()
        rows, wide = [], {}
        slopes = {}
        for order in (p.order, p.order + 1):
            probe = build_probe(p.x0, exp.omega, q, exp.time_grid, p.sigmas[0], order, p.delta, p.eta,
                                p.outer_transition)
            report = remainder_check(probe, q, p.sigmas, exp.settings, exp.threads)
            slopes[order] = report.remainder_slope
            for r in report.rows:
                rows.append({"order": order, **r.to_dict()})
                entry = wide.setdefault(r.sigma, {"sigma": r.sigma})
                entry[f"remainder_order{order}"] = r.l2_remainder if not r.ppw_flag else float("nan")
        outcome.summary = {"x0": list(p.x0), "spacing": exp.grid.spacing, "dt": exp.time_grid.dt,
                           "remainder_slopes": {str(k): v for k, v in slopes.items()}}
        if not slopes[p.order] <= -0.7:
            outcome.flag(f"Order {p.order} remainder slope {slopes[p.order]:.3f} above -0.7")
        gain = slopes[p.order] - slopes[p.order + 1]
        if not gain >= 0.5:
            outcome.flag(f"Order {p.order + 1} steepens the remainder slope by {gain:.3f}, below 0.5")
        base = build_probe(p.x0, exp.omega, q, exp.time_grid, p.sigmas[0], p.order, p.delta, p.eta,
                           p.outer_transition)
        try:
            outcome.summary["lower_bound"] = probe_lower_bound(base, q, p.sigmas, exp.settings).to_dict()
        except NumericalFailure as e:
            outcome.flag(str(e))
        columns = [f"remainder_order{o}" for o in (p.order, p.order + 1)]
        self._emit(outcome, rows, PlotSpec("sigma", columns, title="Geometric optics remainder", logx=True,
                                           logy=True, fit_slope=True),
                   plot_rows=[wide[s] for s in sorted(wide)])

    def _reconstruct(self, outcome: RunOutcome) -> None:
        result = reconstruct_potential(self.exp.reconstruction_config())
        outcome.summary = result.to_dict()
        self._emit(outcome, result.rows(), PlotSpec("x0", ["q_hat", "q_true", "q_ref"],
                                                    title="Reconstructed potential", ylabel="q"))

    def _sweep(self, outcome: RunOutcome) -> None:
        exp = self.exp
        c, sw = self.config.control, self.config.sweep
        pairs = bump_family(exp.potential(sw.base), sw.amplitudes, sw.center, sw.width)
        setup = SweepSetup(exp.omega, exp.target, exp.time_grid, exp.settings, c.norm_iterations,
                           c.norm_tolerance, exp.seed, threads=exp.threads)
        if sw.family:
            setup.family = exp.family_probe()
        if sw.reconstruct:
            setup.reconstruction = exp.reconstruction_config()
        if sw.cost_table:
            k = exp.connecting_operator(self.config.run.potential, dense=True)
            setup.cost_table = cost_of_control_estimate(k, exp.default_source(), c.t, c.s, c.epsilons,
                                                        bisection_steps=c.bisection_steps)
            setup.cost_table_id = f"cost[{self.config.run.potential}]"
        table = stability_sweep(pairs, setup)
        rows = table.table()
        failed = [r.pair_id for r in table.rows if r.status != "ok"]
        if failed:
            outcome.flag(f"Sweep rows failed: {', '.join(failed)}")
        outcome.summary = table.to_dict()
        y = "recon_error" if sw.reconstruct else "q_diff"
        spec = PlotSpec("lambda_diff", y, title="Stability sweep", xlabel="||Lambda1 - Lambda2||",
                        logx=True, scatter=True)
        if table.double_log:
            spec.model = _double_log_curve(table.double_log)
            spec.model_label = f"C / log|log d|^{table.double_log['alpha']:.2f}"
        self._emit(outcome, rows, spec)

    def _check(self, outcome: RunOutcome) -> None:
        report = InvariantSuite(self.exp).run()
        rows = report.table()
        for r in report.failures:
            outcome.flag(f"{r.invariant}: {r.measured:.4e} against budget {r.budget:.4e}")
        outcome.summary = {"rows": len(rows), "failed": len(report.failures),
                           "timings_s": {k: round(v, 3) for k, v in report.timings.items()}}
        ratios = [{"index": i, "measured_over_budget": r["measured"] / r["budget"]}
                  for i, r in enumerate(rows)
                  if r["status"] != "info" and np.isfinite(r["budget"]) and r["budget"] > 0]
        self._emit(outcome, rows, PlotSpec("index", "measured_over_budget", title="Invariant suite",
                                           logy=True, scatter=True), plot_rows=ratios)
