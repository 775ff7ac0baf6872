"""
Config Validator Service

Checks an ExperimentConfig before any solve. Issues carry the dotted path
of the offending key and, when the configuration came from a file, the
line where that key is written.
"""

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

from ..errors import ConfigValidationError
from ..grid.regions import max_distance, min_distance
from .configuration_manager import CHECK_GROUPS, ExperimentConfig
from .experiment_builder import build_experiment


class ValidationLevel(Enum):
    """Validation severity levels"""
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


@dataclass
class ValidationIssue:
    """Represents a validation issue"""
    level: ValidationLevel
    path: str
    message: str
    suggestion: Optional[str] = None
    line: Optional[int] = None

    def format(self, source: str = "config") -> str:
        where = f"{source}:{self.line}" if self.line is not None else source
        return f"{where}: {self.path}: {self.message}"


def line_of(text: str, path: str) -> Optional[int]:
    """1-based line of the last key of a dotted path, searching keys in order"""
    if not text:
        return None
    pos = 0
    found = None
    for part in path.split("."):
        key = re.sub(r"\[\d+\]$", "", part)
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            return found
        pos = m.end()
        found = text.count("\n", 0, m.start()) + 1
    return found


class ConfigValidator:
    """Validates experiment configurations"""

    def __init__(self, source_text: str = ""):
        self.source_text = source_text
        self.issues: List[ValidationIssue] = []

    def _add(self, level: ValidationLevel, path: str, message: str, suggestion: Optional[str] = None):
        self.issues.append(ValidationIssue(level, path, message, suggestion, line_of(self.source_text, path)))

    def _error(self, path: str, message: str, suggestion: Optional[str] = None):
        self._add(ValidationLevel.ERROR, path, message, suggestion)

    def validate(self, config: ExperimentConfig) -> Tuple[bool, List[ValidationIssue]]:
        """
        Validate entire configuration

        Returns:
            Tuple of (is_valid, issues_list)
        """
        self.issues = []
        self._check_geometry(config)
        self._check_time(config)
        self._check_potentials(config)
        self._check_schedules(config)
        self._check_probe(config)
        self._check_run(config)
        if not any(i.level == ValidationLevel.ERROR for i in self.issues):
            self._check_regions(config)
        is_valid = not any(issue.level == ValidationLevel.ERROR for issue in self.issues)
        return is_valid, self.issues

    def require_valid(self, config: ExperimentConfig) -> None:
        ok, issues = self.validate(config)
        if not ok:
            errors = [i for i in issues if i.level == ValidationLevel.ERROR]
            raise ConfigValidationError("; ".join(i.format() for i in errors), errors)

    def _check_geometry(self, config: ExperimentConfig):
        g = config.geometry
        if g.dimension not in (1, 2):
            self._error("geometry.dimension", f"must be 1 or 2, got {g.dimension}")
        if not g.spacing > 0:
            self._error("geometry.spacing", f"must be positive, got {g.spacing}")
        for name in ("omega", "target"):
            shape = getattr(g, name)
            path = f"geometry.{name}"
            if shape.shape == "box":
                if len(shape.lower) != g.dimension or len(shape.upper) != g.dimension:
                    self._error(f"{path}.lower", f"box bounds need {g.dimension} entries")
                elif any(hi <= lo for lo, hi in zip(shape.lower, shape.upper)):
                    self._error(f"{path}.upper", "box upper bound must exceed the lower bound")
            elif shape.shape == "ball":
                if shape.center is None or len(shape.center) != g.dimension:
                    self._error(f"{path}.center", f"ball center needs {g.dimension} entries")
                if shape.radius is None or not shape.radius > 0:
                    self._error(f"{path}.radius", "ball radius must be positive")
            else:
                self._error(f"{path}.shape", f"unknown shape '{shape.shape}'", "Use 'box' or 'ball'")
        if g.padding_cells < 2:
            self._error("geometry.padding_cells", "need at least 2 padding cells")

    def _check_time(self, config: ExperimentConfig):
        t, g = config.time, config.geometry
        if not t.horizon > 0:
            self._error("time.horizon", f"must be positive, got {t.horizon}")
            return
        if not t.cfl > 0:
            self._error("time.cfl", f"must be positive, got {t.cfl}")
            return
        if g.dimension in (1, 2) and t.cfl > 1 / math.sqrt(g.dimension) + 1e-12:
            self._error("time.cfl", f"dt = cfl*h exceeds h/sqrt(n) (cfl={t.cfl})",
                        f"Use cfl <= {1 / math.sqrt(g.dimension):.4f}")
        if g.spacing > 0:
            exact = t.horizon / (t.cfl * g.spacing)
            steps = round(exact)
            if abs(exact - steps) > 1e-6 * max(1.0, exact):
                self._error("time.horizon", f"T/(cfl*h) = {exact:.6f} is not a whole number of steps")
            elif steps % 2:
                self._error("time.horizon", f"T/(cfl*h) = {steps} steps is odd; T/2 must be a grid time",
                            "Adjust T or cfl so the step count is even")

    def _check_potentials(self, config: ExperimentConfig):
        ids = [p.id for p in config.potentials]
        if not ids:
            self._error("potentials", "at least one potential is required")
        for i, pid in enumerate(ids):
            if ids.count(pid) > 1 and ids.index(pid) == i:
                self._error(f"potentials[{i}].id", f"duplicate potential id '{pid}'")
            for j, b in enumerate(config.potentials[i].bumps):
                if len(b.center) != config.geometry.dimension:
                    self._error(f"potentials[{i}].bumps[{j}].center",
                                f"needs {config.geometry.dimension} entries")
                if not b.width > 0:
                    self._error(f"potentials[{i}].bumps[{j}].width", "must be positive")
        refs = [("reconstruction.reference", config.reconstruction.reference),
                ("reconstruction.data", config.reconstruction.data),
                ("sweep.base", config.sweep.base),
                ("run.potential", config.run.potential)]
        for path, pid in refs:
            if pid not in ids:
                self._error(path, f"unknown potential '{pid}'", f"Known ids: {', '.join(ids)}")

    def _check_schedules(self, config: ExperimentConfig):
        c, rc = config.control, config.reconstruction
        for path, values in (("control.alphas", c.alphas), ("reconstruction.cap_alphas", rc.cap_alphas)):
            if not values:
                self._error(path, "schedule is empty")
            elif any(not 0 < a < 1 for a in values):
                self._error(path, "every alpha must lie in (0, 1)")
        if not c.epsilons:
            self._error("control.epsilons", "schedule is empty")
        elif any(not e > 0 for e in c.epsilons):
            self._error("control.epsilons", "every epsilon must be positive")
        if not rc.cap_etas:
            self._error("reconstruction.cap_etas", "schedule is empty")
        elif len(rc.cap_etas) != len(rc.cap_alphas):
            self._error("reconstruction.cap_alphas", "needs one alpha per cap eta")
        elif any(not e > 0 for e in rc.cap_etas):
            self._error("reconstruction.cap_etas", "every eta must be positive")
        if not config.sweep.amplitudes:
            self._error("sweep.amplitudes", "schedule is empty")
        taus = config.sweep.response_taus
        if len(taus) < 3 or any(not t > 0 for t in taus) or len(set(taus)) != len(taus):
            self._error("sweep.response_taus", "need at least 3 distinct positive amplitudes")
        if c.mode not in ("auto", "matrix-free", "dense"):
            self._error("control.mode", f"unknown mode '{c.mode}'")
        if rc.mode not in ("dense", "matrix-free"):
            self._error("reconstruction.mode", f"unknown mode '{rc.mode}'")
        if c.s <= 0 or c.t <= 0:
            self._error("control.t", "control times must be positive")
        elif c.t > config.time.horizon / 2:
            self._error("control.t", f"t={c.t} beyond T/2={config.time.horizon / 2}")

    def _check_probe(self, config: ExperimentConfig):
        p = config.probe
        if not p.sigmas or any(not s > 0 for s in p.sigmas):
            self._error("probe.sigmas", "sigma schedule must be nonempty and positive")
        if not config.reconstruction.sigma > 0:
            self._error("reconstruction.sigma", "must be positive")
        if not p.eta > 0:
            self._error("probe.eta", f"must be positive, got {p.eta}")
        if not isinstance(p.order, int) or p.order < 0:
            self._error("probe.order", f"must be a nonnegative integer, got {p.order}")
        if p.delta is not None and not p.delta > 2 * p.eta:
            self._error("probe.delta", f"delta={p.delta} must exceed 2 eta={2 * p.eta}")
        if p.potential is not None and p.potential not in [q.id for q in config.potentials]:
            self._error("probe.potential", f"unknown potential '{p.potential}'")
        if p.refine < 1:
            self._error("probe.refine", f"must be at least 1, got {p.refine}")
            return
        h = config.geometry.spacing / p.refine
        cfl = p.cfl if p.cfl is not None else config.time.cfl
        if p.cfl is not None:
            limit = 1 / math.sqrt(max(config.geometry.dimension, 1))
            if not 0 < p.cfl <= limit + 1e-12:
                self._error("probe.cfl", f"must lie in (0, {limit:.4f}], got {p.cfl}")
                return
        if h > 0 and config.time.horizon > 0 and (p.refine > 1 or p.cfl is not None):
            exact = config.time.horizon / (cfl * h)
            steps = round(exact)
            if abs(exact - steps) > 1e-6 * max(1.0, exact) or steps % 2:
                self._error("probe.refine", f"study grid gives T/(cfl*h) = {exact:.6f}, "
                                            "not an even whole number of steps")
        if h > 0:
            for s in p.sigmas:
                if s > 0 and 2 * math.pi / (s * h) < 10:
                    self._add(ValidationLevel.WARNING, "probe.sigmas",
                              f"sigma={s:g} has fewer than 10 points per wavelength at h={h:g}")

    def _check_run(self, config: ExperimentConfig):
        if not isinstance(config.run.seed, int) or isinstance(config.run.seed, bool):
            self._error("run.seed", f"seed must be an integer, got {config.run.seed!r}")
        unknown = [g for g in config.run.check_groups if g not in CHECK_GROUPS]
        if unknown:
            self._error("run.check_groups", f"unknown check groups {unknown}",
                        f"Known groups: {', '.join(CHECK_GROUPS)}")
        if config.run.pairs < 1:
            self._error("run.pairs", "need at least one source pair")
        if any(not 0 <= t < config.time.horizon for t in config.run.times):
            self._error("run.times", f"times must lie in [0, T) with T={config.time.horizon}")
        if config.system.threads < 1:
            self._error("system.threads", "must be at least 1")
        if config.system.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            self._error("system.log_level", f"unknown level '{config.system.log_level}'")

    def _check_regions(self, config: ExperimentConfig):
        try:
            exp = build_experiment(config)
        except ValueError as e:
            self._error("geometry", str(e))
            return
        if exp.target.is_empty:
            self._error("geometry.target", "K contains no grid nodes")
            return
        if min_distance(exp.omega, exp.target) <= 0:
            self._error("geometry.target", "K must keep a positive distance from omega")
        reach = max_distance(exp.omega, exp.target)
        if config.time.horizon <= 2 * reach:
            self._error("time.horizon",
                        f"T={config.time.horizon} must exceed 2 L(K, omega) = {2 * reach:.4g}",
                        f"Use T > {2 * reach:.4g}")
