"""
Cap Sets and Point Values

A cap A(eta) = M(B1, s + eta) minus M(B2, s - eta), with B1 = B(y - r nu, r)
and B2 = B(y - 2r nu, 2r) balls inside omega touching the boundary point y
nearest to x0, shrinks onto x0 as eta -> 0. Averaging the product
u^f(t) conj(u^h(t')) over A(eta) takes two indicator inner products; their
difference over |A(eta)| tends to the point value at x0.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import RegionError
from ..grid.fields import BoundaryData
from ..grid.grids import TimeGrid
from ..grid.regions import BallShape, Region, RegionKind, influence_region, nearest_boundary_node, outward_normal
from ..operators.connecting_operator import ConnectingOperator
from ..simulation.potential import Potential
from .boundary_control import field_at, indicator_inner, indicator_inner_intersection

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CapRegion:
    x0: np.ndarray
    y: np.ndarray
    normal: np.ndarray
    r: float
    s: float
    eta: float
    inner_ball: Region
    outer_ball: Region
    cap: Region
    outer_time: float
    inner_time: float

    @property
    def volume(self) -> float:
        """|A(eta)| by node counting"""
        return self.cap.volume

    def to_dict(self) -> Dict:
        return {
            "x0": self.x0.tolist(),
            "y": self.y.tolist(),
            "normal": self.normal.tolist(),
            "r": self.r,
            "s": self.s,
            "eta": self.eta,
            "outer_time": self.outer_time,
            "inner_time": self.inner_time,
            "nodes": self.cap.node_count,
            "volume": self.volume,
        }


def largest_inner_radius(x0: Sequence[float], omega: Region, factor: float = 1.0) -> float:
    """Largest r on the grid with B(y - factor r nu, factor r) inside omega"""
    y_index, y = nearest_boundary_node(omega, x0)
    nu = outward_normal(omega, y_index)
    h = omega.grid.spacing
    best = 0.0
    r = h
    while True:
        ball = BallShape(tuple(y - factor * r * nu), factor * r).mask(omega.grid)
        if not ball.any() or np.any(ball & ~omega.mask):
            return best
        best = r
        r += h


def cap_build(x0: Sequence[float], omega: Region, r: float, eta: float,
              time_grid: Optional[TimeGrid] = None) -> CapRegion:
    """
    Cap around x0 on the side of omega facing it.

    With a time grid the two influence times s + eta and s - eta are moved
    outwards to grid times (up and down respectively), so they can serve as
    control times; x0 stays inside the cap.
    """
    if eta <= 0:
        raise ValueError(f"Cap thickness must be positive, got {eta}")
    if eta >= r:
        raise ValueError(f"Cap thickness {eta} must be below the ball radius {r}")
    grid = omega.grid
    x0 = np.asarray(x0, dtype=float)
    y_index, y = nearest_boundary_node(omega, x0)
    nu = outward_normal(omega, y_index)
    s = float(np.linalg.norm(x0 - y))
    if s <= eta:
        raise RegionError(f"Point {x0.tolist()} is within eta={eta} of omega")
    balls = []
    for scale in (1.0, 2.0):
        mask = BallShape(tuple(y - scale * r * nu), scale * r).mask(grid)
        if not mask.any() or np.any(mask & ~omega.mask):
            raise RegionError(f"Ball of radius {scale * r:g} at the boundary point {y.tolist()} "
                              f"is not inside omega")
        balls.append(Region(grid, mask, RegionKind.DOMAIN, f"B({scale * r:g})"))
    outer_time, inner_time = s + eta, s - eta
    if time_grid is not None:
        outer_time = time_grid.snap(outer_time, up=True)
        inner_time = time_grid.snap(inner_time, up=False)
    if inner_time <= 0:
        raise RegionError(f"Cap around {x0.tolist()}: s - eta = {s - eta:g} is below one time step")
    outer = influence_region(balls[0], outer_time)
    inner = influence_region(balls[1], inner_time)
    cap = outer.difference(inner).with_kind(RegionKind.CAP, f"A({eta:g})")
    if cap.is_empty:
        raise RegionError(f"Cap around {x0.tolist()} with eta={eta} is empty")
    return CapRegion(x0, np.asarray(y, dtype=float), nu, float(r), s, float(eta),
                     balls[0], balls[1], cap, float(outer_time), float(inner_time))


@dataclass
class ScheduleEntry:
    eta: float
    alpha: float
    epsilon: float


def default_schedule(etas: Sequence[float], alphas: Sequence[float], dimension: int,
                     spacing: Optional[float] = None) -> List[ScheduleEntry]:
    """(eta, alpha, epsilon) triples with epsilon = eta^((n+2)/2)"""
    if len(etas) != len(alphas):
        raise ValueError("Cap schedule needs one alpha per eta")
    if not etas:
        raise ValueError("Cap schedule is empty")
    entries = []
    for eta, alpha in zip(etas, alphas):
        if spacing is not None and eta < 4 * spacing:
            logger.warning(f"Cap thickness {eta:g} below 4h = {4 * spacing:g}")
        entries.append(ScheduleEntry(float(eta), float(alpha), float(eta) ** ((dimension + 2) / 2.0)))
    return entries


@dataclass
class CapStage:
    eta: float
    alpha: float
    epsilon: float
    volume: float
    outer: complex
    intersection: complex

    @property
    def value(self) -> complex:
        return (self.outer - self.intersection) / self.volume


@dataclass
class PointValueEstimate:
    value: complex
    converged: bool
    stages: List[CapStage] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "re": self.value.real,
            "im": self.value.imag,
            "converged": self.converged,
            "stages": len(self.stages),
            "eta": self.stages[-1].eta if self.stages else float("nan"),
        }


def _plateau(values: List[complex], count: int, tol: float) -> bool:
    if len(values) < count:
        return False
    tail = np.array(values[-count:])
    scale = max(np.max(np.abs(tail)), 1e-300)
    return bool(np.max(np.abs(tail[:, None] - tail[None, :])) <= tol * scale)


def point_value_product(k: ConnectingOperator, f: BoundaryData, h: BoundaryData, t: float,
                        t_prime: float, x0: Sequence[float], schedule: Sequence[ScheduleEntry],
                        r: Optional[float] = None, plateau: int = 3, tol: float = 0.05,
                        mode: str = "auto") -> PointValueEstimate:
    """
    Data-only estimate of u^f(t, x0) conj(u^h(t', x0)).

    Runs the schedule until `plateau` successive estimates agree to tol
    relative; an exhausted schedule returns the last estimate, flagged.
    """
    if f.is_zero() or h.is_zero():
        return PointValueEstimate(0j, True, [])
    omega = k.lambda_map.omega
    radius = r if r is not None else largest_inner_radius(x0, omega, factor=2.0)
    stages: List[CapStage] = []
    values: List[complex] = []
    for entry in schedule:
        cap = cap_build(x0, omega, radius, entry.eta, f.time_grid)
        if t <= cap.outer_time:
            raise ValueError(f"Evaluation time {t:g} must exceed s + eta = {cap.outer_time:g}")
        tolerance = min(entry.epsilon, entry.alpha / 100.0)
        kwargs = {"tolerance": tolerance, "mode": mode}
        outer = indicator_inner(k, f, h, t, t_prime, cap.outer_time, entry.alpha,
                                cap.inner_ball, **kwargs)
        both = indicator_inner_intersection(k, f, h, t, t_prime,
                                            (cap.inner_ball, cap.outer_time),
                                            (cap.outer_ball, cap.inner_time),
                                            entry.alpha, **kwargs)
        stage = CapStage(entry.eta, entry.alpha, entry.epsilon, cap.volume, outer, both)
        stages.append(stage)
        values.append(stage.value)
        logger.debug(f"x0={list(x0)} eta={entry.eta:g}: estimate {stage.value:.6e}")
        if _plateau(values, plateau, tol):
            return PointValueEstimate(stage.value, True, stages)
    logger.warning(f"Point value at x0={list(x0)} did not reach a plateau over {len(schedule)} stages")
    return PointValueEstimate(values[-1], False, stages)


def direct_point_product(potential: Potential, f: BoundaryData, h: BoundaryData, t: float,
                         t_prime: float, x0: Sequence[float]) -> complex:
    """u^f(t, x0) conj(u^h(t', x0)) by direct solves"""
    index = potential.grid.nearest_node(x0)
    u = field_at(potential, f, t).at(index)
    v = field_at(potential, h, t_prime).at(index)
    return u * np.conj(v)


def direct_cap_average(potential: Potential, f: BoundaryData, h: BoundaryData, t: float,
                       t_prime: float, cap: CapRegion) -> complex:
    """Node average of u^f(t) conj(u^h(t')) over the cap"""
    u = field_at(potential, f, t).values
    v = field_at(potential, h, t_prime).values
    return complex(np.mean((u * np.conj(v))[cap.cap.mask]))
