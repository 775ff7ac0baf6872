"""
Coarse Source Basis

Tensor products of time profiles (piecewise-linear hats, or boxes) and
spatial hats on a coarse lattice of observation nodes. Basis function
j = a * n_space + b is time profile a times space profile b.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..grid.fields import BoundaryData
from ..grid.grids import TimeGrid
from ..grid.regions import Region

logger = logging.getLogger(__name__)

DEFAULT_BASIS_CAP = 600


def _time_profiles(steps: int, first: int, last: int, stride: int,
                   profile: str) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    n = np.arange(steps + 1)
    rows, supports = [], []
    if profile == "hat":
        centre = first + stride
        while centre + stride <= last:
            rows.append(np.clip(1.0 - np.abs(n - centre) / stride, 0.0, None))
            supports.append((centre - stride, centre + stride))
            centre += stride
    elif profile == "box":
        start = first
        while start <= last:
            stop = min(start + stride - 1, last)
            rows.append(((n >= start) & (n <= stop)).astype(float))
            supports.append((start, stop))
            start = stop + 1
    else:
        raise ValueError(f"Unknown time profile '{profile}' (hat or box)")
    return np.array(rows).reshape(len(rows), steps + 1), supports


def _space_profiles(region: Region, stride: int) -> np.ndarray:
    idx = np.array(np.unravel_index(region.flat_indices, region.grid.shape)).T
    if stride <= 1:
        return np.eye(region.node_count)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    axes = [np.arange(l, h + stride, stride) for l, h in zip(lo, hi)]
    centres = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T
    rows = []
    for c in centres:
        if not region.mask[tuple(np.minimum(c, np.array(region.grid.shape) - 1))]:
            continue
        values = np.prod(np.clip(1.0 - np.abs(idx - c) / stride, 0.0, None), axis=1)
        if np.any(values > 0):
            rows.append(values)
    return np.array(rows).reshape(len(rows), region.node_count)


@dataclass(frozen=True, eq=False)
class CoarseBasis:
    """Tensor basis over steps [first, last] x region"""
    region: Region
    time_grid: TimeGrid
    first: int
    last: int
    time_stride: int
    space_stride: int
    profile: str = "hat"
    cap: int = DEFAULT_BASIS_CAP
    _parts: Dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0 <= self.first < self.last <= self.time_grid.steps:
            raise ValueError(f"Basis window [{self.first}, {self.last}] is not inside the time grid")
        if self.time_stride < 1 or self.space_stride < 1:
            raise ValueError("Basis strides must be positive")
        t_rows, supports = _time_profiles(self.time_grid.steps, self.first, self.last,
                                          self.time_stride, self.profile)
        s_rows = _space_profiles(self.region, self.space_stride)
        if len(t_rows) == 0 or len(s_rows) == 0:
            raise ValueError("Basis is empty: window or region too small for the strides")
        size = len(t_rows) * len(s_rows)
        if size > self.cap:
            raise ValueError(f"Basis size {size} exceeds the cap {self.cap}")
        self._parts.update(time=t_rows, space=s_rows, supports=supports)
        logger.debug(f"Coarse basis: {len(t_rows)} time x {len(s_rows)} space = {size}")

    @classmethod
    def over_window(cls, region: Region, time_grid: TimeGrid, window: Tuple[float, float],
                    time_stride: int, space_stride: int, profile: str = "hat",
                    cap: int = DEFAULT_BASIS_CAP) -> "CoarseBasis":
        first, last = time_grid.index_of(window[0]), time_grid.index_of(window[1])
        return cls(region, time_grid, first, last, time_stride, space_stride, profile, cap)

    @property
    def time_profiles(self) -> np.ndarray:
        return self._parts["time"]

    @property
    def space_profiles(self) -> np.ndarray:
        return self._parts["space"]

    @property
    def n_time(self) -> int:
        return len(self.time_profiles)

    @property
    def n_space(self) -> int:
        return len(self.space_profiles)

    @property
    def size(self) -> int:
        return self.n_time * self.n_space

    def batch(self, indices: Sequence[int]) -> np.ndarray:
        """Values of the selected functions, shape (len(indices), steps+1, nodes)"""
        indices = np.asarray(indices, dtype=int)
        a, b = np.divmod(indices, self.n_space)
        return (self.time_profiles[a][:, :, None] * self.space_profiles[b][:, None, :]).astype(complex)

    def element(self, j: int) -> BoundaryData:
        a = j // self.n_space
        first, last = self._parts["supports"][a]
        return BoundaryData(self.region, self.time_grid, self.batch([j])[0], (first, last))

    def synthesize(self, coeffs: np.ndarray, indices: Optional[Sequence[int]] = None) -> BoundaryData:
        """sum_j c_j b_j, optionally over a subset of indices"""
        full = np.zeros(self.size, dtype=complex)
        if indices is None:
            full[:] = coeffs
        else:
            full[np.asarray(indices, dtype=int)] = coeffs
        c = full.reshape(self.n_time, self.n_space)
        values = self.time_profiles.T @ c @ self.space_profiles
        return BoundaryData(self.region, self.time_grid, values, (self.first, self.last))

    def pair_values(self, values: np.ndarray, time_weights: np.ndarray) -> np.ndarray:
        """<v, b_j> for v of shape (steps+1, nodes) or a batch (B, steps+1, nodes)"""
        tw = self.time_profiles * time_weights[None, :]
        sw = self.space_profiles * self.region.node_weights[None, :]
        if values.ndim == 2:
            return (tw @ values @ sw.T).reshape(-1)
        return np.einsum("an,knx,bx->kab", tw, values, sw).reshape(values.shape[0], -1)

    def pair(self, data: BoundaryData, time_weights: Optional[np.ndarray] = None) -> np.ndarray:
        tw = self.time_grid.trapezoid_weights() if time_weights is None else time_weights
        return self.pair_values(data.values, tw)

    def mass(self, time_weights: Optional[np.ndarray] = None) -> np.ndarray:
        tw = self.time_grid.trapezoid_weights() if time_weights is None else time_weights
        m_time = (self.time_profiles * tw[None, :]) @ self.time_profiles.T
        m_space = (self.space_profiles * self.region.node_weights[None, :]) @ self.space_profiles.T
        return np.kron(m_time, m_space)

    def select(self, first: int, last: int, node_mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Indices of functions supported inside steps [first, last] and inside node_mask"""
        supports = self._parts["supports"]
        t_ok = np.array([s[0] >= first and s[1] <= last for s in supports])
        if node_mask is None:
            s_ok = np.ones(self.n_space, dtype=bool)
        else:
            inside = node_mask.reshape(-1)[self.region.flat_indices]
            s_ok = np.all((self.space_profiles == 0) | inside[None, :], axis=1)
        a = np.flatnonzero(t_ok)
        b = np.flatnonzero(s_ok)
        return (a[:, None] * self.n_space + b[None, :]).reshape(-1)

    def describe(self) -> Dict:
        return {
            "window_steps": [self.first, self.last],
            "time_stride": self.time_stride,
            "space_stride": self.space_stride,
            "profile": self.profile,
            "n_time": self.n_time,
            "n_space": self.n_space,
            "size": self.size,
        }
