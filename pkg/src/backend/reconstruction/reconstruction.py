"""
Potential Reconstruction

Recovers q2 on the target region from its measurement map against a known
reference potential q1. For each target node x0 a geometric optics probe h
focuses at (s_delta, x0) and a smooth illumination f lights the whole
region. Cap-averaged point values of u_j^f conj(u_j^h), computed from each
map's data alone, differ by (u1^f - u2^f) conj(u1^h) up to the control
errors, and dividing by the directly computed probe field gives the
difference field d = u1^f - u2^f. Then

    q2 - q1 = ((d_t^2 - Delta) d + q1 d) / (u1^f - d)   at (s_delta, x0).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import savgol_coeffs

from ..control.boundary_control import field_at
from ..control.caps import (
    PointValueEstimate, ScheduleEntry, cap_build, default_schedule, largest_inner_radius,
    point_value_product,
)
from ..errors import ConfigValidationError, NumericalFailure
from ..grid.fields import BoundaryData
from ..grid.regions import Region, max_distance, signed_distance
from ..operators.basis import CoarseBasis
from ..operators.connecting_operator import ConnectingOperator, assemble_gram
from ..operators.source_to_solution import SourceToSolutionMap
from ..optics.bump import smooth_step
from ..optics.geometric_optics import GOProbe, build_probe, build_source, probe_response, source_sobolev_norm
from ..services.parallel import parallel_map
from ..simulation.potential import Potential

logger = logging.getLogger(__name__)


@dataclass
class ProbeSettings:
    """Probe parameters shared by every target node"""
    sigma: float = 40.0
    order: int = 0
    delta: Optional[float] = 0.25
    eta: float = 0.08
    outer_transition: Optional[float] = None
    frame_refine: int = 2

    def to_dict(self) -> Dict:
        return {
            "sigma": self.sigma,
            "order": self.order,
            "delta": self.delta,
            "eta": self.eta,
            "outer_transition": self.outer_transition,
        }


@dataclass
class ReconstructionConfig:
    """
    Inputs of one reconstruction.

    data_map is only ever applied; truth, when given, is used for oracle
    diagnostics and the final error, never by the pipeline itself.
    """
    reference: Potential
    data_map: SourceToSolutionMap
    target: Region
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    schedule: List[ScheduleEntry] = field(default_factory=list)
    cap_radius: Optional[float] = None
    stencil_points: int = 5
    stencil_stride: int = 2
    laplacian_offset: int = 2
    guard_tolerance: float = 0.05
    max_rejected_fraction: float = 0.25
    plateau_tolerance: float = 0.05
    illumination_width: float = 0.2
    illumination_ramp: float = 1.0
    mode: str = "dense"
    basis_strides: Tuple[int, int] = (5, 5)
    node_stride: int = 1
    truth: Optional[Potential] = None
    stage_budget: float = 0.2
    threads: Optional[int] = None

    def __post_init__(self):
        if not self.schedule:
            h = self.reference.grid.spacing
            self.schedule = default_schedule([0.12, 0.10, 0.08], [1e-4, 1e-5, 1e-6],
                                             self.reference.grid.dimension, h)

    @property
    def omega(self) -> Region:
        return self.data_map.omega

    @property
    def time_grid(self):
        return self.data_map.time_grid

    def target_nodes(self) -> np.ndarray:
        """Coordinates of the reconstructed nodes, every node_stride-th along each axis"""
        idx = np.argwhere(self.target.mask)
        keep = np.all((idx - idx.min(axis=0)) % self.node_stride == 0, axis=1)
        grid = self.target.grid
        return np.array([grid.node_coordinate(i) for i in idx[keep]])

    def validate(self) -> None:
        issues = []
        tg = self.time_grid
        reach = max_distance(self.omega, self.target)
        if tg.horizon <= 2 * reach:
            issues.append(f"T={tg.horizon:g} must exceed 2 L(K, omega) = {2 * reach:g}")
        if self.stencil_points < 3 or self.stencil_points % 2 == 0:
            issues.append(f"Time stencil needs an odd number >= 3 of points, got {self.stencil_points}")
        half_width = (self.stencil_points // 2) * self.stencil_stride * tg.dt
        delta = self.probe.delta if self.probe.delta is not None else 0.0
        if reach + delta + half_width > tg.horizon / 2:
            issues.append(f"Probe times up to {reach + delta + half_width:g} pass T/2 = {tg.horizon / 2:g}")
        if half_width >= self.probe.eta:
            issues.append(f"Time stencil half-width {half_width:g} leaves the probe plateau eta={self.probe.eta:g}")
        if not 0 < self.max_rejected_fraction <= 1:
            issues.append("max_rejected_fraction must lie in (0, 1]")
        if self.mode not in ("dense", "matrix-free"):
            issues.append(f"Unknown reconstruction mode '{self.mode}'")
        self.reference.grid.require_same(self.data_map.potential.grid)
        if issues:
            raise ConfigValidationError("; ".join(issues), issues)

    def to_dict(self) -> Dict:
        return {
            "reference": self.reference.pid,
            "data_map": self.data_map.name,
            "target_nodes": self.target.node_count,
            "probe": self.probe.to_dict(),
            "schedule": [vars(e) for e in self.schedule],
            "stencil": [self.stencil_points, self.stencil_stride],
            "laplacian_offset": self.laplacian_offset,
            "mode": self.mode,
        }


@dataclass
class OperatorPair:
    """Connecting operators of the reference and the data map"""
    reference: ConnectingOperator
    data: ConnectingOperator

    @property
    def identical(self) -> bool:
        return self.reference is self.data


def prepare_operators(cfg: ReconstructionConfig,
                      reference: Optional[ConnectingOperator] = None) -> OperatorPair:
    """K1 from the reference potential (or the one given), K2 from the data map; Gram in dense mode"""
    data_map = cfg.data_map
    if reference is not None:
        lam1 = reference.lambda_map
    elif data_map.potential is cfg.reference:
        lam1 = data_map
    else:
        lam1 = SourceToSolutionMap(cfg.reference, cfg.omega, cfg.time_grid, data_map.solver.settings,
                                   name="Lambda_ref")
    k1 = reference if reference is not None else ConnectingOperator(lam1)
    k2 = k1 if lam1 is data_map else ConnectingOperator(data_map)
    if cfg.mode == "dense":
        tg = cfg.time_grid
        ts, ss = cfg.basis_strides
        basis = CoarseBasis(cfg.omega, tg, 0, k1.half_steps, ts, ss)
        for k in {id(k1): k1, id(k2): k2}.values():
            if k.dense is None or k.dense.basis.size != basis.size:
                assemble_gram(k, basis, cfg.threads)
    return OperatorPair(k1, k2)


def illumination_source(omega: Region, time_grid, width: float = 0.2, ramp: float = 1.0) -> BoundaryData:
    """
    Smooth nonnegative source S(depth / width) S(t / ramp), depth the
    distance to the edge of omega.
    """
    if width <= 0 or ramp <= 0:
        raise ValueError("Illumination width and ramp must be positive")
    depth = -signed_distance(omega).reshape(-1)[omega.flat_indices]
    space = smooth_step(depth / width)
    time = smooth_step(time_grid.times / ramp)
    if not np.any(space):
        raise ValueError(f"omega is thinner than the illumination width {width}")
    return BoundaryData(omega, time_grid, (time[:, None] * space[None, :]).astype(complex))


@dataclass
class DifferenceField:
    """d(t, x) = (u1^f - u2^f)(t, x) recovered on a times x nodes stencil"""
    times: np.ndarray
    nodes: np.ndarray
    values: np.ndarray
    probe_divisor: np.ndarray
    accepted: np.ndarray
    converged: np.ndarray
    oracle: Optional[np.ndarray] = None
    reasons: List[str] = field(default_factory=list)

    def oracle_error(self) -> float:
        """max relative deviation from the direct difference, over accepted nodes"""
        if self.oracle is None or not np.any(self.accepted):
            return float("nan")
        ref = self.oracle[:, self.accepted]
        scale = max(float(np.max(np.abs(ref))), 1e-300)
        return float(np.max(np.abs(self.values[:, self.accepted] - ref)) / scale)


@dataclass
class _NodeProbe:
    probe: Optional[GOProbe]
    source: Optional[BoundaryData]
    reason: str = ""


def _probe_for(cfg: ReconstructionConfig, x: np.ndarray) -> _NodeProbe:
    p = cfg.probe
    try:
        probe = build_probe(x, cfg.omega, cfg.reference, cfg.time_grid, p.sigma, p.order,
                            p.delta, p.eta, p.outer_transition, p.frame_refine)
        return _NodeProbe(probe, build_source(probe))
    except (ValueError, RuntimeError) as e:
        return _NodeProbe(None, None, f"probe: {e}")


def _divisor(cfg: ReconstructionConfig, node: _NodeProbe, estimate: PointValueEstimate, radius: float) -> complex:
    """Cap average of conj(u1^h(s_delta)) over the last cap of the schedule"""
    probe = node.probe
    eta = estimate.stages[-1].eta if estimate.stages else cfg.schedule[-1].eta
    cap = cap_build(probe.x0, cfg.omega, radius, eta, cfg.time_grid)
    u_h = probe_response(probe, cfg.reference).values
    return complex(np.conj(np.mean(u_h[cap.cap.mask])))


def recover_difference_field(cfg: ReconstructionConfig, f: BoundaryData, times: Sequence[float],
                             nodes: np.ndarray, operators: Optional[OperatorPair] = None,
                             threads: Optional[int] = None) -> DifferenceField:
    """
    d at every (time, node) pair from the two maps' data.

    Nodes whose probe fails or whose divisor falls under 1/2 - tol are
    rejected and keep NaN values.
    """
    ops = operators or prepare_operators(cfg)
    times = np.asarray(times, dtype=float)
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    shape = (len(times), len(nodes))
    values = np.full(shape, np.nan + 0j)
    converged = np.zeros(shape, dtype=bool)
    divisors = np.full(len(nodes), np.nan + 0j)
    accepted = np.zeros(len(nodes), dtype=bool)
    reasons = [""] * len(nodes)
    oracle = None
    if cfg.truth is not None:
        u1 = [field_at(cfg.reference, f, t) for t in times]
        u2 = [field_at(cfg.truth, f, t) for t in times]
        where = [cfg.reference.grid.nearest_node(x) for x in nodes]
        oracle = np.array([[a.at(i) - b.at(i) for i in where] for a, b in zip(u1, u2)])

    def run(j: int):
        x = nodes[j]
        node = _probe_for(cfg, x)
        if node.probe is None:
            return j, None, None, None, node.reason
        radius = cfg.cap_radius or largest_inner_radius(x, cfg.omega, factor=2.0)
        row, flags, last = [], [], None
        for t in times:
            est = [point_value_product(k, f, node.source, t, node.probe.s_delta, x, cfg.schedule, radius,
                                       tol=cfg.plateau_tolerance, mode=cfg.mode)
                   for k in ((ops.reference,) if ops.identical else (ops.reference, ops.data))]
            if ops.identical:
                est = est * 2
            row.append(est[0].value - est[1].value)
            flags.append(est[0].converged and est[1].converged)
            last = est[0]
        divisor = _divisor(cfg, node, last, radius)
        return j, np.array(row), np.array(flags), divisor, ""

    workers = cfg.threads if threads is None else threads
    for j, row, flags, divisor, reason in parallel_map(run, list(range(len(nodes))), workers):
        if row is None:
            reasons[j] = reason
            continue
        divisors[j] = divisor
        if abs(divisor) < 0.5 - cfg.guard_tolerance:
            reasons[j] = f"probe divisor {abs(divisor):.3f} below guard"
            continue
        values[:, j] = row / divisor
        converged[:, j] = flags
        accepted[j] = True

    result = DifferenceField(times, nodes, values, divisors, accepted, converged, oracle, reasons)
    if oracle is not None:
        err = result.oracle_error()
        status = "within" if err <= cfg.stage_budget else "over"
        logger.info(f"Difference field vs direct solves: relative error {err:.3e} "
                    f"({status} budget {cfg.stage_budget:g})")
    return result


@dataclass
class ReconstructionResult:
    nodes: np.ndarray
    q_hat: np.ndarray
    q_reference: np.ndarray
    divisor: np.ndarray
    probe_divisor: np.ndarray
    accepted: np.ndarray
    q_true: Optional[np.ndarray] = None
    relative_error: float = float("nan")
    interpolation_estimate: float = float("nan")
    diagnostics: List[Dict] = field(default_factory=list)

    @property
    def rejected_fraction(self) -> float:
        return 1.0 - float(np.mean(self.accepted)) if len(self.accepted) else 0.0

    def rows(self) -> List[Dict]:
        out = []
        for i, x in enumerate(self.nodes):
            row = {f"x{k}": float(v) for k, v in enumerate(x)}
            row.update({
                "q_hat": float(self.q_hat[i]),
                "q_ref": float(self.q_reference[i]),
                "q_true": float(self.q_true[i]) if self.q_true is not None else float("nan"),
                "divisor": float(self.divisor[i]),
                "accepted": bool(self.accepted[i]),
            })
            out.append(row)
        return out

    def to_dict(self) -> Dict:
        return {
            "nodes": len(self.nodes),
            "accepted": int(np.sum(self.accepted)),
            "rejected_fraction": self.rejected_fraction,
            "relative_error": self.relative_error,
            "interpolation_estimate": self.interpolation_estimate,
        }


def _stencil(cfg: ReconstructionConfig, s_delta: float) -> np.ndarray:
    dt = cfg.time_grid.dt
    half = cfg.stencil_points // 2
    return s_delta + cfg.stencil_stride * dt * np.arange(-half, half + 1)


def _neighbours(cfg: ReconstructionConfig, x0: np.ndarray) -> np.ndarray:
    step = cfg.laplacian_offset * cfg.reference.grid.spacing
    out = []
    for k in range(len(x0)):
        for sign in (1.0, -1.0):
            x = x0.copy()
            x[k] += sign * step
            out.append(x)
    return np.array(out)


def _reconstruct_node(cfg: ReconstructionConfig, ops: OperatorPair, f_raw: BoundaryData,
                      x0: np.ndarray) -> Dict:
    grid = cfg.reference.grid
    index = grid.nearest_node(x0)
    q1 = cfg.reference.at(index)
    diag: Dict = {"x0": x0.tolist(), "accepted": False}
    node = _probe_for(cfg, x0)
    if node.probe is None:
        diag["reason"] = node.reason
        return diag
    s_delta = node.probe.s_delta
    u1_raw = field_at(cfg.reference, f_raw, s_delta).at(index)
    if abs(u1_raw) == 0:
        diag["reason"] = "illumination does not reach the node"
        return diag
    scale = 1.0 / abs(u1_raw)
    f = f_raw * scale
    u1 = u1_raw * scale
    times = _stencil(cfg, s_delta)
    centre = recover_difference_field(cfg, f, times, x0[None], ops, threads=1)
    around = recover_difference_field(cfg, f, [s_delta], _neighbours(cfg, x0), ops, threads=1)
    diag.update(ppw=node.probe.points_per_wavelength, probe_divisor=abs(centre.probe_divisor[0]),
                converged=bool(np.all(centre.converged)),
                h2_source_norm=source_sobolev_norm(node.probe, 2))
    if not centre.accepted[0] or not np.all(around.accepted):
        diag["reason"] = centre.reasons[0] or next(r for r in around.reasons if r)
        return diag
    d = centre.values[:, 0]
    mid = len(times) // 2
    dtt = savgol_coeffs(len(times), 2, deriv=2, delta=times[1] - times[0], use="dot") @ d
    m_h = cfg.laplacian_offset * grid.spacing
    neigh = around.values[0]
    lap = sum(neigh[2 * k] + neigh[2 * k + 1] - 2 * d[mid] for k in range(grid.dimension)) / m_h ** 2
    divisor = u1 - d[mid]
    diag.update(d=complex(d[mid]), divisor=abs(divisor))
    if centre.oracle is not None:
        diag["oracle_error"] = centre.oracle_error()
    if abs(divisor) < 0.5 - cfg.guard_tolerance:
        diag["reason"] = f"divisor {abs(divisor):.3f} below guard"
        return diag
    q_hat = q1 + (dtt - lap + q1 * d[mid]) / divisor
    diag.update(accepted=True, q_hat=float(q_hat.real), imag=float(abs(q_hat.imag)))
    return diag


def reconstruct_potential(cfg: ReconstructionConfig) -> ReconstructionResult:
    """q-hat on the target nodes; aborts when too many nodes are rejected"""
    cfg.validate()
    ops = prepare_operators(cfg)
    f_raw = illumination_source(cfg.omega, cfg.time_grid, cfg.illumination_width, cfg.illumination_ramp)
    nodes = cfg.target_nodes()
    logger.info(f"Reconstructing on {len(nodes)} nodes of '{cfg.target.name}' "
                f"(sigma={cfg.probe.sigma:g}, {len(cfg.schedule)} cap stages, mode={cfg.mode})")
    diagnostics = parallel_map(lambda x: _reconstruct_node(cfg, ops, f_raw, x), list(nodes), cfg.threads)

    grid = cfg.reference.grid
    idx = [grid.nearest_node(x) for x in nodes]
    q_ref = np.array([cfg.reference.at(i) for i in idx])
    accepted = np.array([d["accepted"] for d in diagnostics], dtype=bool)
    q_hat = np.array([d.get("q_hat", np.nan) for d in diagnostics])
    divisor = np.array([d.get("divisor", np.nan) for d in diagnostics])
    probe_div = np.array([d.get("probe_divisor", np.nan) for d in diagnostics])
    result = ReconstructionResult(nodes, q_hat, q_ref, divisor, probe_div, accepted, diagnostics=diagnostics)

    for d in diagnostics:
        if not d["accepted"]:
            logger.warning(f"Node {d['x0']} rejected: {d.get('reason', 'unknown')}")
    if result.rejected_fraction > cfg.max_rejected_fraction:
        raise NumericalFailure(f"{int(np.sum(~accepted))} of {len(nodes)} nodes rejected "
                               f"(limit {cfg.max_rejected_fraction:.0%})")

    if cfg.truth is not None:
        result.q_true = np.array([cfg.truth.at(i) for i in idx])
        # node spacing along each axis after the stride
        w = (cfg.node_stride * grid.spacing) ** grid.dimension
        diff = result.q_hat[accepted] - result.q_true[accepted]
        truth_diff = result.q_true[accepted] - q_ref[accepted]
        num = math.sqrt(w * float(np.sum(diff ** 2)))
        den = math.sqrt(w * float(np.sum(truth_diff ** 2)))
        result.relative_error = num / den if den > 0 else num
        logger.info(f"Relative L2(K) error {result.relative_error:.3e}")

    d_values = np.array([abs(d.get("d", 0.0)) for d in diagnostics if d["accepted"]])
    h2 = [d["h2_source_norm"] for d in diagnostics if "h2_source_norm" in d]
    if d_values.size and h2:
        d_norm = math.sqrt((cfg.node_stride * grid.spacing) ** grid.dimension * float(np.sum(d_values ** 2)))
        result.interpolation_estimate = d_norm ** (1.0 / 3.0) * max(h2) ** (2.0 / 3.0)
    return result
