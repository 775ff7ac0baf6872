"""Shared fixtures: a small 1D experiment that solves in milliseconds"""
import copy
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import pytest

from backend.services.configuration_manager import config_from_dict
from backend.services.experiment_builder import build_experiment

CONFIG_DIR = Path(__file__).parent.parent / "config"

# omega = [1, 1.5], K = [-0.5, 0], L(K, omega) = 1.5, T = 3.2 > 3
# h = 0.05, dt = 0.04: 80 steps, T/2 at step 40
TINY_CONFIG = {
    "geometry": {
        "dimension": 1,
        "spacing": 0.05,
        "omega": {"shape": "box", "lower": [1.0], "upper": [1.5]},
        "target": {"shape": "box", "lower": [-0.5], "upper": [0.0]},
    },
    "time": {"horizon": 3.2, "cfl": 0.8},
    "potentials": [
        {"id": "q1", "bumps": []},
        {"id": "q2", "bumps": [{"center": [-0.25], "width": 0.1, "amplitude": 1.0}]},
    ],
    "control": {
        "t": 1.6,
        "s": 0.8,
        "alphas": [1e-2, 1e-3, 1e-4],
        "epsilons": [0.6, 0.4],
        "basis_time_stride": 4,
        "basis_space_stride": 2,
        "norm_iterations": 30,
        "norm_tolerance": 1e-4,
        "bisection_steps": 6,
    },
    "probe": {"x0": [-0.25], "sigmas": [6.0, 8.0, 10.0, 12.0], "delta": 0.3, "eta": 0.08},
    "reconstruction": {"reference": "q1", "data": "q2", "sigma": 8.0},
    "sweep": {"base": "q1", "center": [-0.25], "width": 0.1, "amplitudes": [0.5, 1.0, 2.0]},
    "run": {"seed": 3, "potential": "q1", "source_width": 0.1, "source_frequency": 5.0,
            "store_every": 20, "times": [0.4, 1.2], "pairs": 3},
}


def tiny_config_dict(**sections):
    """Deep copy of the tiny configuration with sections updated key by key"""
    data = copy.deepcopy(TINY_CONFIG)
    for name, values in sections.items():
        if isinstance(values, dict) and isinstance(data.get(name), dict):
            data[name].update(values)
        else:
            data[name] = values
    return data


@pytest.fixture
def tiny_config():
    return config_from_dict(tiny_config_dict())


@pytest.fixture
def tiny_experiment(tiny_config):
    return build_experiment(tiny_config)


@pytest.fixture(scope="module")
def shared_experiment():
    """One experiment per test module, for tests that reuse cached maps"""
    return build_experiment(config_from_dict(tiny_config_dict()))
