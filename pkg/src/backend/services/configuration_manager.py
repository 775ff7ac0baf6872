"""
Configuration Manager Service

Loads experiment configurations from JSON, applies them section by section
onto dataclasses with defaults, and writes them back in a canonical form
(sorted keys, two-space indent) so that load -> save -> load is idempotent.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Any, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

from ..errors import ConfigValidationError

logger = logging.getLogger(__name__)

CHECK_GROUPS = ("solver", "speed", "adjoint", "blago", "spectral", "control", "indicator", "point",
                "optics", "reconstruction", "stability", "determinism")


@dataclass
class ShapeConfig:
    """Box (lower/upper) or ball (center/radius)"""
    shape: str = "box"
    lower: List[float] = field(default_factory=lambda: [2.0])
    upper: List[float] = field(default_factory=lambda: [3.0])
    center: Optional[List[float]] = None
    radius: Optional[float] = None


@dataclass
class GeometryConfig:
    """Spatial setting"""
    dimension: int = 1
    spacing: float = 0.02
    omega: ShapeConfig = field(default_factory=ShapeConfig)
    target: ShapeConfig = field(default_factory=lambda: ShapeConfig("box", [-1.0], [0.0]))
    padding_cells: int = 4


@dataclass
class TimeConfig:
    horizon: float = 8.0
    cfl: float = 0.8


@dataclass
class BumpConfig:
    center: List[float] = field(default_factory=lambda: [-0.5])
    width: float = 0.15
    amplitude: float = 1.0


@dataclass
class PotentialConfig:
    id: str = "q"
    bumps: List[BumpConfig] = field(default_factory=list)
    bound: Optional[float] = None


@dataclass
class SolverConfig:
    storage: str = "auto"  # auto, full, steps
    max_full_steps: int = 4000
    batch_size: int = 32


@dataclass
class ControlConfig:
    """Control, cost and norm estimation settings"""
    t: float = 4.0
    s: float = 2.0
    alphas: List[float] = field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5])
    epsilons: List[float] = field(default_factory=lambda: [0.5, 0.3, 0.2, 0.1])
    max_iterations: int = 500
    mode: str = "auto"  # auto, matrix-free, dense
    basis_time_stride: int = 5
    basis_space_stride: int = 5
    norm_iterations: int = 50
    norm_tolerance: float = 1e-6
    bisection_steps: int = 12


@dataclass
class ProbeConfig:
    x0: List[float] = field(default_factory=lambda: [-0.5])
    sigmas: List[float] = field(default_factory=lambda: [10.0, 14.0, 20.0, 28.0])
    order: int = 0
    delta: Optional[float] = 0.4
    eta: float = 0.1
    outer_transition: Optional[float] = None
    # decay study on a grid refined by this factor, at its own CFL number
    refine: int = 1
    cfl: Optional[float] = None
    potential: Optional[str] = None


@dataclass
class ReconstructionSectionConfig:
    reference: str = "q1"
    data: str = "q2"
    sigma: float = 10.0
    cap_etas: List[float] = field(default_factory=lambda: [0.12, 0.10, 0.08])
    cap_alphas: List[float] = field(default_factory=lambda: [1e-4, 1e-5, 1e-6])
    cap_radius: Optional[float] = None
    node_stride: int = 5
    stencil_points: int = 5
    stencil_stride: int = 2
    laplacian_offset: int = 2
    guard_tolerance: float = 0.05
    max_rejected_fraction: float = 0.1
    illumination_width: float = 0.2
    illumination_ramp: float = 1.0
    mode: str = "dense"
    stage_budget: float = 0.2


@dataclass
class SweepConfig:
    base: str = "q1"
    center: List[float] = field(default_factory=lambda: [-0.5])
    width: float = 0.15
    amplitudes: List[float] = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0, 8.0])
    reconstruct: bool = False
    cost_table: bool = False
    # per-pair inner product, indicator and probe margin columns
    family: bool = True
    response_taus: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4])


@dataclass
class RunConfig:
    seed: int = 0
    output: str = "out"
    potential: str = "q1"
    source_center: Optional[List[float]] = None
    source_width: float = 0.1
    source_frequency: float = 6.0
    store_every: int = 50
    times: List[float] = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    pairs: int = 20
    check_groups: List[str] = field(default_factory=lambda: list(CHECK_GROUPS))


@dataclass
class SystemConfig:
    """Overall system configuration"""
    log_level: str = "INFO"  # DEBUG, INFO, WARNING, ERROR
    threads: int = 1


@dataclass
class ExperimentConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    potentials: List[PotentialConfig] = field(
        default_factory=lambda: [PotentialConfig("q1"), PotentialConfig("q2", [BumpConfig()])])
    solver: SolverConfig = field(default_factory=SolverConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    reconstruction: ReconstructionSectionConfig = field(default_factory=ReconstructionSectionConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    run: RunConfig = field(default_factory=RunConfig)
    system: SystemConfig = field(default_factory=SystemConfig)

    def potential(self, pid: str) -> PotentialConfig:
        for p in self.potentials:
            if p.id == pid:
                return p
        raise KeyError(f"Unknown potential id: {pid}")


SECTIONS = ("geometry", "time", "potentials", "solver", "control", "probe", "reconstruction",
            "sweep", "run", "system")

_TYPE_NAMES = {bool: "a boolean", int: "an integer", float: "a number", str: "a string"}


class _Mismatch(ValueError):
    pass


def _kind(value: Any) -> str:
    return "null" if value is None else type(value).__name__


def _coerce(value: Any, tp: Any, path: str, errors: List[str]) -> Any:
    """Value checked against a field annotation; ints widen to float, nothing else converts"""
    origin = get_origin(tp)
    if origin is Union:
        if value is None:
            return None
        (inner,) = [a for a in get_args(tp) if a is not type(None)]
        return _coerce(value, inner, path, errors)
    if origin is list:
        (item,) = get_args(tp)
        if not isinstance(value, list):
            raise _Mismatch(f"expected a list, got {_kind(value)} {value!r}")
        return [_coerce(v, item, f"{path}[{i}]", errors) for i, v in enumerate(value)]
    if is_dataclass(tp):
        return _build(tp, value, path, errors)
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, tp) and not (tp is int and isinstance(value, bool)):
        return value
    raise _Mismatch(f"expected {_TYPE_NAMES.get(tp, tp.__name__)}, got {_kind(value)} {value!r}")


def _build(cls, data: Dict[str, Any], path: str, errors: List[str]):
    """Dataclass from a mapping; unknown keys and wrong types are collected as errors"""
    obj = cls()
    if not isinstance(data, dict):
        errors.append(f"{path}: expected an object")
        return obj
    hints = get_type_hints(cls)
    for key, value in data.items():
        if key not in hints:
            errors.append(f"{path}.{key}: unknown key")
            continue
        try:
            setattr(obj, key, _coerce(value, hints[key], f"{path}.{key}", errors))
        except _Mismatch as e:
            errors.append(f"{path}.{key}: {e}")
    return obj


def _potentials(data: Any, errors: List[str]) -> List[PotentialConfig]:
    if not isinstance(data, list):
        errors.append("potentials: expected a list")
        return []
    return [_build(PotentialConfig, item, f"potentials[{i}]", errors) for i, item in enumerate(data)]


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """ExperimentConfig from parsed JSON; raises ConfigValidationError on unknown keys or wrong types"""
    errors: List[str] = []
    config = ExperimentConfig()
    for key, value in data.items():
        if key not in SECTIONS:
            errors.append(f"{key}: unknown section")
        elif key == "potentials":
            config.potentials = _potentials(value, errors)
        else:
            cls = type(getattr(config, key))
            setattr(config, key, _build(cls, value, key, errors))
    if errors:
        raise ConfigValidationError("; ".join(errors), errors)
    return config


class ConfigurationManager:
    """
    Holds one experiment configuration with support for:
    - Loading from a JSON file (defaults when no file is given)
    - Runtime updates by section and key
    - Canonical re-serialization
    """

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file
        self.source_text = ""
        self.config = ExperimentConfig()
        if config_file is not None:
            self._load_configuration()

    def _load_configuration(self) -> None:
        """Load configuration from file"""
        if not os.path.exists(self.config_file):
            raise ConfigValidationError(f"Config file not found: {self.config_file}")
        with open(self.config_file, "r", encoding="utf-8") as f:
            self.source_text = f.read()
        try:
            data = json.loads(self.source_text)
        except json.JSONDecodeError as e:
            raise ConfigValidationError(f"{self.config_file}:{e.lineno}: invalid JSON: {e.msg}") from e
        if not isinstance(data, dict):
            raise ConfigValidationError(f"{self.config_file}: top level must be an object")
        self.config = config_from_dict(data)
        logger.debug(f"Loaded configuration from {self.config_file}")

    def get_geometry_config(self) -> GeometryConfig:
        return self.config.geometry

    def get_time_config(self) -> TimeConfig:
        return self.config.time

    def get_solver_config(self) -> SolverConfig:
        return self.config.solver

    def get_control_config(self) -> ControlConfig:
        return self.config.control

    def get_probe_config(self) -> ProbeConfig:
        return self.config.probe

    def get_reconstruction_config(self) -> ReconstructionSectionConfig:
        return self.config.reconstruction

    def get_sweep_config(self) -> SweepConfig:
        return self.config.sweep

    def get_run_config(self) -> RunConfig:
        return self.config.run

    def get_system_config(self) -> SystemConfig:
        return self.config.system

    def set_config(self, section: str, key: str, value: Any) -> None:
        """Update one key at runtime"""
        if section not in SECTIONS or section == "potentials":
            raise KeyError(f"Unknown config section: {section}")
        target = getattr(self.config, section)
        if hasattr(target, key):
            setattr(target, key, value)
        else:
            raise KeyError(f"Unknown {section} config key: {key}")

    def get_all_config(self) -> Dict[str, Any]:
        """Get all configuration as dictionary"""
        return asdict(self.config)

    def canonical_text(self) -> str:
        return json.dumps(self.get_all_config(), indent=2, sort_keys=True) + "\n"

    def save_configuration(self, filepath: Optional[str] = None) -> str:
        """Save current configuration in canonical form"""
        filepath = filepath or self.config_file
        if filepath is None:
            raise ValueError("No path to save the configuration to")
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(filepath, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.canonical_text())
        logger.info(f"Saved configuration to {filepath}")
        return filepath
