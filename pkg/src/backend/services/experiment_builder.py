"""
Experiment Builder Service

Turns a validated ExperimentConfig into the numerical objects of a run:
grids, regions, potentials, measurement maps and connecting operators,
default sources and the reconstruction configuration. Maps and operators
are built on first use and cached per potential id.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from ..control.caps import default_schedule
from ..grid.fields import BoundaryData
from ..grid.grids import SpatialGrid, TimeGrid
from ..grid.regions import BallShape, BoxShape, Region, RegionKind
from ..operators.basis import CoarseBasis
from ..operators.connecting_operator import ConnectingOperator, assemble_gram
from ..operators.source_to_solution import SourceToSolutionMap
from ..reconstruction.reconstruction import ProbeSettings, ReconstructionConfig
from ..reconstruction.stability import FamilyProbe
from ..simulation.potential import GaussianBump, Potential
from ..simulation.wave_solver import SolverSettings, padded_box
from .configuration_manager import ExperimentConfig, ShapeConfig

logger = logging.getLogger(__name__)


def shape_of(spec: ShapeConfig):
    if spec.shape == "box":
        return BoxShape(tuple(spec.lower), tuple(spec.upper))
    if spec.shape == "ball":
        if spec.center is None or spec.radius is None:
            raise ValueError("Ball shape needs center and radius")
        return BallShape(tuple(spec.center), float(spec.radius))
    raise ValueError(f"Unknown shape '{spec.shape}'")


@dataclass
class Experiment:
    config: ExperimentConfig
    grid: SpatialGrid
    time_grid: TimeGrid
    omega: Region
    target: Region
    potentials: Dict[str, Potential]
    settings: SolverSettings
    _maps: Dict[str, SourceToSolutionMap] = field(default_factory=dict, repr=False)
    _operators: Dict[str, ConnectingOperator] = field(default_factory=dict, repr=False)
    _study: Optional["Experiment"] = field(default=None, repr=False)

    @property
    def threads(self) -> int:
        return self.config.system.threads

    @property
    def seed(self) -> int:
        return self.config.run.seed

    def potential(self, pid: str) -> Potential:
        if pid not in self.potentials:
            raise KeyError(f"Unknown potential id: {pid}")
        return self.potentials[pid]

    def lambda_map(self, pid: str) -> SourceToSolutionMap:
        if pid not in self._maps:
            self._maps[pid] = SourceToSolutionMap(self.potential(pid), self.omega, self.time_grid,
                                                  self.settings, name=f"Lambda[{pid}]")
        return self._maps[pid]

    def connecting_operator(self, pid: str, dense: bool = False) -> ConnectingOperator:
        """K for the potential; dense assembles the Gram matrix on the control basis"""
        if pid not in self._operators:
            self._operators[pid] = ConnectingOperator(self.lambda_map(pid))
        k = self._operators[pid]
        if dense and k.dense is None:
            assemble_gram(k, self.control_basis(), self.threads)
        return k

    def probe_study(self) -> "Experiment":
        """
        The experiment the geometric optics decay study runs on: spacing
        h / probe.refine and CFL probe.cfl, same horizon and potentials.
        Returns self when neither differs.
        """
        p = self.config.probe
        cfl = p.cfl if p.cfl is not None else self.config.time.cfl
        if p.refine == 1 and cfl == self.config.time.cfl:
            return self
        if self._study is None:
            g = self.config.geometry
            study = replace(self.config, geometry=replace(g, spacing=g.spacing / p.refine),
                            time=replace(self.config.time, cfl=cfl))
            logger.info(f"Probe study grid: h={g.spacing / p.refine:g}, cfl={cfl:g}")
            self._study = build_experiment(study)
        return self._study

    def probe_potential(self) -> Potential:
        """Potential the decay study and lower bound are measured for"""
        p = self.config.probe
        return self.probe_study().potential(p.potential or self.config.reconstruction.data)

    def control_basis(self) -> CoarseBasis:
        c = self.config.control
        return CoarseBasis(self.omega, self.time_grid, 0, self.time_grid.half_steps,
                           c.basis_time_stride, c.basis_space_stride)

    def default_source(self, scale: float = 1.0) -> BoundaryData:
        """Smooth pulse: Gaussian in space on omega, ramped sine in time"""
        run = self.config.run
        coords = self.omega.coordinates()
        center = np.asarray(run.source_center if run.source_center is not None else coords.mean(axis=0))
        width, freq = run.source_width, run.source_frequency

        def fn(t, x):
            r2 = np.sum((x - center) ** 2, axis=-1)
            ramp = np.minimum(t / 0.5, 1.0) ** 3
            return scale * np.exp(-r2 / (2 * width ** 2)) * np.sin(freq * t) * ramp

        return BoundaryData.from_function(self.omega, self.time_grid, fn)

    def random_sources(self, count: int, seed: Optional[int] = None) -> List[BoundaryData]:
        """Smooth random pulses: random centres in omega, widths, frequencies and phases"""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        coords = self.omega.coordinates()
        lo, hi = coords.min(axis=0), coords.max(axis=0)
        out = []
        for _ in range(count):
            center = rng.uniform(lo, hi)
            width = rng.uniform(0.05, 0.2)
            freq = rng.uniform(2.0, 8.0)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.standard_normal() + 1j * rng.standard_normal()

            def fn(t, x, c=center, w=width, k=freq, p=phase, a=amp):
                r2 = np.sum((x - c) ** 2, axis=-1)
                ramp = np.minimum(t / 0.5, 1.0) ** 3
                return a * np.exp(-r2 / (2 * w ** 2)) * np.sin(k * t + p) * ramp

            out.append(BoundaryData.from_function(self.omega, self.time_grid, fn))
        return out

    def probe_settings(self) -> ProbeSettings:
        """Probe used for reconstruction: the configured probe at the reconstruction sigma"""
        pc = self.config.probe
        return ProbeSettings(sigma=self.config.reconstruction.sigma, order=pc.order, delta=pc.delta,
                             eta=pc.eta, outer_transition=pc.outer_transition)

    def family_probe(self) -> FamilyProbe:
        """Shared setup of the per-pair sweep measurements at the configured control geometry"""
        c, tg = self.config.control, self.time_grid
        t = tg.snap(c.t, up=False)
        s = min(tg.snap(c.s, up=False), t)
        h = self.random_sources(1, seed=self.seed + 2)[0]
        return FamilyProbe(self.default_source(), h, t, s, min(c.alphas), list(self.config.probe.x0),
                           self.probe_settings(), c.max_iterations)

    def reconstruction_config(self, reference: Optional[str] = None, data: Optional[str] = None,
                              truth: bool = True) -> ReconstructionConfig:
        rc = self.config.reconstruction
        ref_id = reference or rc.reference
        data_id = data or rc.data
        schedule = default_schedule(rc.cap_etas, rc.cap_alphas, self.grid.dimension, self.grid.spacing)
        probe = self.probe_settings()
        return ReconstructionConfig(
            reference=self.potential(ref_id),
            data_map=self.lambda_map(data_id),
            target=self.target,
            probe=probe,
            schedule=schedule,
            cap_radius=rc.cap_radius,
            stencil_points=rc.stencil_points,
            stencil_stride=rc.stencil_stride,
            laplacian_offset=rc.laplacian_offset,
            guard_tolerance=rc.guard_tolerance,
            max_rejected_fraction=rc.max_rejected_fraction,
            illumination_width=rc.illumination_width,
            illumination_ramp=rc.illumination_ramp,
            mode=rc.mode,
            basis_strides=(self.config.control.basis_time_stride, self.config.control.basis_space_stride),
            node_stride=rc.node_stride,
            truth=self.potential(data_id) if truth else None,
            stage_budget=rc.stage_budget,
            threads=self.threads,
        )


def build_potentials(config: ExperimentConfig, grid: SpatialGrid) -> Dict[str, Potential]:
    out = {}
    for p in config.potentials:
        bumps = [GaussianBump(tuple(b.center), float(b.width), float(b.amplitude)) for b in p.bumps]
        out[p.id] = Potential.from_bumps(grid, bumps, pid=p.id, bound=p.bound)
    return out


def build_experiment(config: ExperimentConfig) -> Experiment:
    """Grids, regions and potentials for a configuration"""
    g = config.geometry
    omega_shape = shape_of(g.omega)
    target_shape = shape_of(g.target)
    time_grid = TimeGrid.from_cfl(config.time.horizon, g.spacing, config.time.cfl)
    grid = padded_box(target_shape, omega_shape, config.time.horizon, g.spacing, config.time.cfl,
                      g.padding_cells)
    time_grid.check_cfl(grid)
    omega = Region.from_shape(grid, omega_shape, RegionKind.OMEGA, "omega")
    target = Region.from_shape(grid, target_shape, RegionKind.TARGET_K, "K")
    settings = SolverSettings(storage=config.solver.storage, max_full_steps=config.solver.max_full_steps,
                              batch_size=config.solver.batch_size)
    potentials = build_potentials(config, grid)
    logger.info(f"Experiment grid {grid.counts} (h={g.spacing}), {time_grid.steps} steps, "
                f"|omega|={omega.node_count} nodes, |K|={target.node_count} nodes")
    return Experiment(config, grid, time_grid, omega, target, potentials, settings)
