"""
Stability Sweep

For a family of potential pairs, measures the data distance
|Lambda_1 - Lambda_2| by power iteration against the true distance
|q1 - q2|_{L2(K)} and, optionally, the reconstruction error. The table is
summarised by the Spearman rank correlation of the two distances, the fitted
exponent of a power law between them and a double-logarithmic model
err = C / (log|log delta|)^a.

With a FamilyProbe each row also carries the difference of data-only inner
products (and its ratio to the data distance), the difference of indicator
inner products and the probe margin for the second potential.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import curve_fit
from scipy.stats import linregress, spearmanr

from ..control.boundary_control import indicator_inner
from ..control.cost_of_control import CostTable
from ..grid.fields import BoundaryData
from ..grid.grids import TimeGrid
from ..grid.regions import Region
from ..operators.connecting_operator import ConnectingOperator, inner_product_at_times
from ..operators.source_to_solution import SourceToSolutionMap, op_norm_diff
from ..optics.geometric_optics import build_probe, probe_margin
from ..services.parallel import parallel_map
from ..simulation.potential import GaussianBump, Potential
from ..simulation.wave_solver import SolverSettings
from .reconstruction import (
    ProbeSettings, ReconstructionConfig, prepare_operators, reconstruct_potential, recover_difference_field,
)

logger = logging.getLogger(__name__)


@dataclass
class PotentialPair:
    pair_id: str
    first: Potential
    second: Potential


@dataclass
class FamilyProbe:
    """Sources, control geometry and probe shared by the per-pair measurements"""
    f: BoundaryData
    h: BoundaryData
    t: float
    s: float
    alpha: float
    x0: Sequence[float]
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    max_iterations: int = 500


@dataclass
class SweepSetup:
    omega: Region
    target: Region
    time_grid: TimeGrid
    settings: Optional[SolverSettings] = None
    norm_iterations: int = 50
    norm_tolerance: float = 1e-6
    seed: int = 0
    reconstruction: Optional[ReconstructionConfig] = None
    cost_table: Optional[CostTable] = None
    cost_table_id: str = ""
    threads: Optional[int] = None
    family: Optional[FamilyProbe] = None


@dataclass
class SweepRow:
    pair_id: str
    lambda_diff: float
    q_diff: float
    recon_error: float = float("nan")
    cost_table: str = ""
    threshold_epsilon: float = float("nan")
    norm_converged: bool = True
    status: str = "ok"
    inner_diff: float = float("nan")
    stability_constant: float = float("nan")
    indicator_diff: float = float("nan")
    q_sup: float = float("nan")
    probe_margin: float = float("nan")

    def to_dict(self) -> Dict:
        return {
            "pair_id": self.pair_id,
            "lambda_diff": self.lambda_diff,
            "q_diff": self.q_diff,
            "recon_error": self.recon_error,
            "cost_table": self.cost_table,
            "threshold_epsilon": self.threshold_epsilon,
            "norm_converged": self.norm_converged,
            "status": self.status,
            "inner_diff": self.inner_diff,
            "stability_constant": self.stability_constant,
            "indicator_diff": self.indicator_diff,
            "q_sup": self.q_sup,
            "probe_margin": self.probe_margin,
        }


@dataclass
class StabilityTable:
    rows: List[SweepRow] = field(default_factory=list)
    spearman: float = float("nan")
    ell: float = float("nan")
    double_log: Dict[str, float] = field(default_factory=dict)
    indicator_spearman: float = float("nan")
    margin_spearman: float = float("nan")
    constant_spread: float = float("nan")

    def table(self) -> List[Dict]:
        out = []
        for r in self.rows:
            row = r.to_dict()
            row["ell"] = self.ell
            row["alpha_hat"] = self.double_log.get("alpha", float("nan"))
            out.append(row)
        return out

    def to_dict(self) -> Dict:
        return {"rows": len(self.rows), "spearman": self.spearman, "ell": self.ell,
                "double_log": dict(self.double_log), "indicator_spearman": self.indicator_spearman,
                "margin_spearman": self.margin_spearman, "constant_spread": self.constant_spread}


def threshold_epsilon(lambda_diff: float, ell: float, table: CostTable) -> float:
    """Smallest tabulated epsilon with |dLambda| <= (epsilon / A(epsilon^ell))^ell"""
    if not (np.isfinite(ell) and ell > 0):
        return float("nan")
    for row in sorted((r for r in table.rows if r.reachable and r.epsilon < 1), key=lambda r: r.epsilon):
        cost = table.cost_at(row.epsilon ** ell)
        if np.isfinite(cost) and cost > 0 and lambda_diff <= (row.epsilon / cost) ** ell:
            return row.epsilon
    return float("nan")


def _double_log_model(delta: np.ndarray, c: float, a: float) -> np.ndarray:
    return c / np.log(np.abs(np.log(delta))) ** a


def fit_double_log(deltas: Sequence[float], errors: Sequence[float]) -> Dict[str, float]:
    """Least-squares fit of err = C / (log|log delta|)^a over 0 < delta < 1/e"""
    d = np.asarray(deltas, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = np.isfinite(d) & np.isfinite(e) & (d > 0) & (d < math.exp(-1)) & (e > 0)
    if ok.sum() < 2:
        return {}
    try:
        params, _ = curve_fit(_double_log_model, d[ok], e[ok], p0=(float(e[ok].max()), 1.0),
                              maxfev=20000)
    except RuntimeError as exc:
        logger.warning(f"Double-log fit failed: {exc}")
        return {}
    residuals = e[ok] - _double_log_model(d[ok], *params)
    return {"C": float(params[0]), "alpha": float(params[1]),
            "rms_residual": float(np.sqrt(np.mean(residuals ** 2))), "points": int(ok.sum())}


def _family_columns(row: SweepRow, pair: PotentialPair, lam1: SourceToSolutionMap,
                    lam2: SourceToSolutionMap, setup: SweepSetup) -> None:
    fam = setup.family
    k1, k2 = ConnectingOperator(lam1), ConnectingOperator(lam2)
    scale = max(fam.f.norm() * fam.h.norm(), 1e-300)
    inner = [inner_product_at_times(k, fam.f, fam.h, fam.t, fam.t) for k in (k1, k2)]
    row.inner_diff = abs(inner[0] - inner[1]) / scale
    if row.lambda_diff > 0:
        row.stability_constant = row.inner_diff / row.lambda_diff
    kwargs = {"max_iterations": fam.max_iterations, "mode": "matrix-free"}
    est = [indicator_inner(k, fam.f, fam.h, fam.t, fam.t, fam.s, fam.alpha, **kwargs) for k in (k1, k2)]
    row.indicator_diff = abs(est[0] - est[1]) / scale
    p = fam.probe
    row.q_sup = float(np.max(np.abs(pair.second.values)))
    try:
        probe = build_probe(fam.x0, setup.omega, pair.second, setup.time_grid, p.sigma, p.order, p.delta,
                            p.eta, p.outer_transition, p.frame_refine)
        row.probe_margin = probe_margin(probe, pair.second, setup.settings)
    except ValueError as exc:
        logger.warning(f"Pair {pair.pair_id}: no probe margin ({exc})")


def _row(pair: PotentialPair, setup: SweepSetup) -> SweepRow:
    try:
        lam1 = SourceToSolutionMap(pair.first, setup.omega, setup.time_grid, setup.settings,
                                   f"Lambda[{pair.first.pid}]")
        lam2 = SourceToSolutionMap(pair.second, setup.omega, setup.time_grid, setup.settings,
                                   f"Lambda[{pair.second.pid}]")
        if np.array_equal(pair.first.values, pair.second.values):
            norm_value, converged = 0.0, True
        else:
            estimate = op_norm_diff(lam1, lam2, setup.norm_iterations, setup.norm_tolerance, setup.seed)
            norm_value, converged = estimate.value, estimate.converged
        row = SweepRow(pair.pair_id, norm_value, pair.first.l2_distance(pair.second, setup.target),
                       cost_table=setup.cost_table_id, norm_converged=converged)
        if setup.reconstruction is not None:
            cfg = replace(setup.reconstruction, reference=pair.first, data_map=lam2, truth=pair.second,
                          target=setup.target, threads=1)
            row.recon_error = reconstruct_potential(cfg).relative_error
        if setup.family is not None:
            _family_columns(row, pair, lam1, lam2, setup)
        if not converged:
            logger.warning(f"Pair {pair.pair_id}: norm estimate did not converge")
        return row
    except (ValueError, RuntimeError) as exc:
        logger.warning(f"Pair {pair.pair_id} failed: {exc}")
        return SweepRow(pair.pair_id, float("nan"), float("nan"), status=f"failed: {exc}")


def stability_sweep(pairs: Sequence[PotentialPair], setup: SweepSetup) -> StabilityTable:
    """One row per pair; failed rows are flagged and the sweep continues"""
    if not pairs:
        raise ValueError("Stability sweep needs at least one potential pair")
    rows = parallel_map(lambda p: _row(p, setup), list(pairs), setup.threads)
    table = StabilityTable(rows)
    good = [r for r in rows if r.status == "ok"]
    lam = np.array([r.lambda_diff for r in good])
    dq = np.array([r.q_diff for r in good])
    if len(good) >= 3 and np.ptp(lam) > 0 and np.ptp(dq) > 0:
        table.spearman = float(spearmanr(lam, dq).statistic)
    positive = (lam > 0) & (dq > 0)
    if positive.sum() >= 2:
        # |dLambda| ~ |dq|^ell
        table.ell = float(np.polyfit(np.log(dq[positive]), np.log(lam[positive]), 1)[0])
    errors = np.array([r.recon_error if np.isfinite(r.recon_error) else r.q_diff for r in good])
    table.double_log = fit_double_log(lam, errors)
    if setup.cost_table is not None:
        for r in good:
            r.threshold_epsilon = threshold_epsilon(r.lambda_diff, table.ell, setup.cost_table)
    if setup.family is not None:
        table.indicator_spearman = _rank_correlation(lam, [r.indicator_diff for r in good])
        table.margin_spearman = _rank_correlation([r.q_sup for r in good], [r.probe_margin for r in good])
        constants = np.array([r.stability_constant for r in good])
        constants = constants[np.isfinite(constants) & (constants > 0)]
        if constants.size >= 2:
            table.constant_spread = float(constants.max() / constants.min())
        logger.info(f"Family measurements: indicator Spearman {table.indicator_spearman:.3f}, "
                    f"margin vs |q| Spearman {table.margin_spearman:.3f}, "
                    f"inner product constant spread {table.constant_spread:.3f}")
    logger.info(f"Stability sweep: {len(good)}/{len(rows)} rows, Spearman {table.spearman:.3f}, "
                f"ell {table.ell:.3f}")
    return table


def _rank_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    x, y = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 3 or np.ptp(x[ok]) == 0 or np.ptp(y[ok]) == 0:
        return float("nan")
    return float(spearmanr(x[ok], y[ok]).statistic)


@dataclass
class LinearResponse:
    """|d| over the amplitudes tau of q2 = q1 + tau * bump, with its straight-line fit"""
    taus: np.ndarray
    norms: np.ndarray
    accepted: np.ndarray
    slope: float = float("nan")
    intercept: float = float("nan")
    r_squared: float = float("nan")

    def table(self) -> List[Dict]:
        return [{"tau": float(t), "d_norm": float(n), "accepted": int(a)}
                for t, n, a in zip(self.taus, self.norms, self.accepted)]

    def to_dict(self) -> Dict:
        return {"points": len(self.taus), "slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared}


def linear_response(cfg: ReconstructionConfig, taus: Sequence[float], center: Sequence[float], width: float,
                    f: BoundaryData, times: Sequence[float], nodes: np.ndarray,
                    threads: Optional[int] = None) -> LinearResponse:
    """
    Recovered difference field for q2 = q1 + tau * bump at each tau.

    The reference operator is built once; d is measured by its l2 norm over
    the accepted nodes and fitted by least squares in tau.
    """
    taus = np.asarray(taus, dtype=float)
    if len(taus) < 3:
        raise ValueError(f"Linear response needs at least 3 amplitudes, got {len(taus)}")
    settings = cfg.data_map.solver.settings
    reference: Optional[ConnectingOperator] = None
    norms, accepted = [], []
    for pair in bump_family(cfg.reference, taus, center, width):
        lam2 = SourceToSolutionMap(pair.second, cfg.omega, cfg.time_grid, settings,
                                   f"Lambda[{pair.second.pid}]")
        run = replace(cfg, data_map=lam2, truth=pair.second)
        ops = prepare_operators(run, reference)
        reference = ops.reference
        d = recover_difference_field(run, f, times, nodes, ops, threads)
        values = d.values[:, d.accepted]
        accepted.append(int(np.sum(d.accepted)))
        norms.append(float(np.linalg.norm(values)) if values.size else float("nan"))
    result = LinearResponse(taus, np.array(norms), np.array(accepted))
    ok = np.isfinite(result.norms)
    if ok.sum() >= 3:
        fit = linregress(taus[ok], result.norms[ok])
        result.slope, result.intercept = float(fit.slope), float(fit.intercept)
        result.r_squared = float(fit.rvalue ** 2)
    logger.info(f"Linear response over {int(ok.sum())} amplitudes: slope {result.slope:.4e}, "
                f"R^2 {result.r_squared:.4f}")
    return result


def bump_family(base: Potential, amplitudes: Sequence[float], center: Sequence[float],
                width: float) -> List[PotentialPair]:
    """Pairs (base, base + a * bump) for a one-parameter amplitude family"""
    pairs = []
    for a in amplitudes:
        bump = Potential.from_bumps(base.grid, [GaussianBump(tuple(center), width, a)], pid=f"bump{a:g}")
        second = Potential(base.grid, base.values + bump.values, pid=f"{base.pid}+bump{a:g}",
                           bumps=list(base.bumps) + bump.bumps)
        pairs.append(PotentialPair(f"a={a:g}", base, second))
    return pairs
