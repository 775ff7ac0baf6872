"""
Cost of Control

Empirical cost table: for each relative accuracy epsilon, the control of
smallest norm reaching 1_M u^f(t) within epsilon, found by bisection on
log alpha, and the ratio |g| / |v|_{H^1(M)}.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..grid.fields import BoundaryData, ScalarField, h1_norm
from ..grid.regions import Region, influence_region
from ..operators.connecting_operator import ConnectingOperator
from .boundary_control import ControlProblem, ControlSolution, field_at, solve_control

logger = logging.getLogger(__name__)


@dataclass
class CostRow:
    epsilon: float
    alpha: float
    rel_error: float
    g_norm: float
    v_h1_norm: float
    cost: float
    coupling_alpha: float
    reachable: bool

    def to_dict(self) -> Dict:
        return {
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "rel_error": self.rel_error,
            "g_norm": self.g_norm,
            "v_h1_norm": self.v_h1_norm,
            "cost": self.cost,
            "coupling_alpha": self.coupling_alpha,
            "reachable": self.reachable,
        }


@dataclass
class CostTable:
    rows: List[CostRow] = field(default_factory=list)
    loglog_slope: float = float("nan")
    loglog_intercept: float = float("nan")

    def is_monotone(self, tol: float = 1e-9) -> bool:
        """cost nondecreasing as epsilon decreases, over reachable rows"""
        ordered = sorted((r for r in self.rows if r.reachable), key=lambda r: -r.epsilon)
        costs = [r.cost for r in ordered]
        return all(b >= a * (1 - tol) - tol for a, b in zip(costs, costs[1:]))

    def cost_at(self, epsilon: float) -> float:
        """Cost of the smallest tabulated epsilon >= the request (conservative)"""
        candidates = [r for r in self.rows if r.reachable and r.epsilon >= epsilon]
        if not candidates:
            return float("nan")
        return min(candidates, key=lambda r: r.epsilon).cost


class _Evaluator:
    """Control solve plus direct error against the target, cached per alpha"""

    def __init__(self, k: ConnectingOperator, f: BoundaryData, t: float, s: float,
                 region: Optional[Region], target: ScalarField, mode: str):
        self.k, self.f, self.t, self.s = k, f, t, s
        self.region = region
        self.target = target
        self.mode = mode
        self.potential = k.lambda_map.potential
        self.target_norm = float(np.sqrt(np.sum(np.abs(target.values) ** 2) * target.grid.cell_volume))
        self._cache: Dict[float, Tuple[ControlSolution, float]] = {}

    def __call__(self, alpha: float) -> Tuple[ControlSolution, float]:
        if alpha not in self._cache:
            sol = solve_control(self.k, ControlProblem(self.f, self.t, self.s, alpha, self.region,
                                                       mode=self.mode))
            u = field_at(self.potential, sol.control, self.t) if not sol.control.is_zero() \
                else ScalarField.zeros(self.target.grid)
            err = np.sqrt(np.sum(np.abs(u.values - self.target.values) ** 2) * u.grid.cell_volume)
            self._cache[alpha] = (sol, float(err / self.target_norm))
        return self._cache[alpha]


def cost_of_control_estimate(k: ConnectingOperator, f: BoundaryData, t: float, s: float,
                             epsilons: Sequence[float], region: Optional[Region] = None,
                             alpha_range: Tuple[float, float] = (1e-8, 1.0),
                             bisection_steps: int = 12, mode: str = "auto") -> CostTable:
    """
    Cost table for the target v = 1_{M(region, s)} u^f(t).

    epsilon >= 1 is met by the zero control (cost 0). An epsilon the
    smallest alpha cannot reach is a flagged row with NaN cost.
    """
    control_region = region if region is not None else f.region
    influence = influence_region(control_region, s)
    u_f = field_at(k.lambda_map.potential, f, t)
    target = ScalarField(u_f.grid, np.where(influence.mask, u_f.values, 0.0))
    v_h1 = h1_norm(target, influence)
    evaluate = _Evaluator(k, f, t, s, region, target, mode)
    lo_alpha, hi_alpha = alpha_range
    table = CostTable()
    upper = hi_alpha

    for eps in sorted(epsilons, reverse=True):
        if eps >= 1.0:
            table.rows.append(CostRow(eps, float("inf"), 1.0, 0.0, v_h1, 0.0, float("inf"), True))
            continue
        sol_lo, err_lo = evaluate(lo_alpha)
        if err_lo > eps:
            logger.warning(f"epsilon={eps:g} unreachable: error {err_lo:.3e} at alpha={lo_alpha:g}")
            table.rows.append(CostRow(eps, lo_alpha, err_lo, sol_lo.control_norm, v_h1,
                                      float("nan"), float("nan"), False))
            continue
        sol_hi, err_hi = evaluate(upper)
        if err_hi <= eps:
            best_alpha, best = upper, (sol_hi, err_hi)
        else:
            a, b = math.log(lo_alpha), math.log(upper)
            best_alpha, best = lo_alpha, (sol_lo, err_lo)
            for _ in range(bisection_steps):
                mid = math.exp(0.5 * (a + b))
                sol_mid, err_mid = evaluate(mid)
                if err_mid <= eps:
                    a, best_alpha, best = math.log(mid), mid, (sol_mid, err_mid)
                else:
                    b = math.log(mid)
        upper = best_alpha
        sol, err = best
        cost = sol.control_norm / v_h1 if v_h1 > 0 else float("nan")
        coupling = (eps / cost) ** 2 if cost > 0 else float("inf")
        table.rows.append(CostRow(eps, best_alpha, err, sol.control_norm, v_h1, cost, coupling, True))
        logger.info(f"epsilon={eps:g}: alpha={best_alpha:.3e}, cost={cost:.4e}")

    fit = [(1.0 / r.epsilon, math.log(math.log(r.cost))) for r in table.rows
           if r.reachable and r.cost > 1.0 and r.epsilon < 1.0]
    if len(fit) >= 2:
        x, y = np.array(fit).T
        table.loglog_slope, table.loglog_intercept = (float(v) for v in np.polyfit(x, y, 1))
    return table
