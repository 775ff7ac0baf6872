"""
Regions

Node masks over a SpatialGrid (observation set, target set, domains of
influence, caps) together with their trapezoid quadrature weights and the
distance computations used to build domains of influence.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..errors import GridMismatchError, RegionError
from .fields import ScalarField
from .grids import SpatialGrid


class RegionKind(Enum):
    """Role of a region in an experiment"""
    OMEGA = "omega"
    TARGET_K = "targetK"
    INFLUENCE = "influence"
    CAP = "cap"
    DOMAIN = "domain"


@dataclass(frozen=True)
class BoxShape:
    """Closed axis-aligned box"""
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def bounds(self) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        return tuple(self.lower), tuple(self.upper)

    def mask(self, grid: SpatialGrid) -> np.ndarray:
        tol = 1e-9 * grid.spacing
        coords = grid.coordinates()
        inside = np.ones(grid.shape, dtype=bool)
        for k in range(grid.dimension):
            inside &= (coords[..., k] >= self.lower[k] - tol) & (coords[..., k] <= self.upper[k] + tol)
        return inside


@dataclass(frozen=True)
class BallShape:
    """Closed Euclidean ball"""
    center: Tuple[float, ...]
    radius: float

    def bounds(self) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        return (tuple(c - self.radius for c in self.center),
                tuple(c + self.radius for c in self.center))

    def mask(self, grid: SpatialGrid) -> np.ndarray:
        tol = 1e-9 * grid.spacing
        coords = grid.coordinates()
        dist = np.linalg.norm(coords - np.asarray(self.center, dtype=float), axis=-1)
        return dist <= self.radius + tol


@dataclass(frozen=True, eq=False)
class Region:
    """Boolean node mask with trapezoid weights (half weight per axis on mask boundary)"""
    grid: SpatialGrid
    mask: np.ndarray
    kind: RegionKind = RegionKind.DOMAIN
    name: str = ""
    _cache: Dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != self.grid.shape:
            raise GridMismatchError(f"Mask shape {mask.shape} does not match grid {self.grid.shape}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if self.kind in (RegionKind.OMEGA, RegionKind.TARGET_K) and not self.mask.any():
            raise RegionError(f"Region '{self.name or self.kind.value}' is empty")

    @classmethod
    def from_shape(cls, grid: SpatialGrid, shape, kind: RegionKind = RegionKind.DOMAIN,
                   name: str = "") -> "Region":
        return cls(grid, shape.mask(grid), kind, name)

    @classmethod
    def full(cls, grid: SpatialGrid) -> "Region":
        return cls(grid, np.ones(grid.shape, dtype=bool), RegionKind.DOMAIN, "domain")

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    @property
    def node_count(self) -> int:
        return int(self.mask.sum())

    @property
    def flat_indices(self) -> np.ndarray:
        """Row-major indices of the member nodes; fixes the ordering of boundary data columns"""
        if "flat" not in self._cache:
            self._cache["flat"] = np.flatnonzero(self.mask)
        return self._cache["flat"]

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights on the full grid, zero outside the mask"""
        if "weights" not in self._cache:
            w = np.where(self.mask, self.grid.cell_volume, 0.0)
            for axis in range(self.grid.dimension):
                m = self.mask
                left = np.zeros_like(m)
                right = np.zeros_like(m)
                sl_lo = [slice(None)] * m.ndim
                sl_hi = [slice(None)] * m.ndim
                sl_lo[axis] = slice(1, None)
                sl_hi[axis] = slice(None, -1)
                left[tuple(sl_lo)] = m[tuple(sl_hi)]
                right[tuple(sl_hi)] = m[tuple(sl_lo)]
                one_sided = m & (left ^ right)
                w = np.where(one_sided, 0.5 * w, w)
            self._cache["weights"] = w
        return self._cache["weights"]

    @property
    def node_weights(self) -> np.ndarray:
        """Weights of the member nodes in flat_indices order"""
        return self.weights.reshape(-1)[self.flat_indices]

    @property
    def volume(self) -> float:
        """Node-counting volume |r| = #nodes * h^n"""
        return self.node_count * self.grid.cell_volume

    @property
    def quadrature_volume(self) -> float:
        return float(self.weights.sum())

    def coordinates(self) -> np.ndarray:
        """Coordinates of the member nodes, shape (nodes, n)"""
        return self.grid.coordinates().reshape(-1, self.grid.dimension)[self.flat_indices]

    def contains_point(self, point: Sequence[float]) -> bool:
        return bool(self.mask[self.grid.nearest_node(point)])

    def with_kind(self, kind: RegionKind, name: str = "") -> "Region":
        return Region(self.grid, self.mask, kind, name or self.name)

    def _check(self, other: "Region") -> None:
        self.grid.require_same(other.grid)

    def union(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.grid, self.mask | other.mask, RegionKind.DOMAIN)

    def intersection(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.grid, self.mask & other.mask, RegionKind.DOMAIN)

    def difference(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.grid, self.mask & ~other.mask, RegionKind.DOMAIN)

    def complement(self) -> "Region":
        return Region(self.grid, ~self.mask, RegionKind.DOMAIN)

    def is_subset(self, other: "Region") -> bool:
        self._check(other)
        return bool(np.all(other.mask[self.mask]))

    def axis_widths(self) -> Tuple[int, ...]:
        """Number of distinct node positions occupied along each axis"""
        idx = np.nonzero(self.mask)
        return tuple(len(np.unique(i)) for i in idx)

    def indicator(self) -> ScalarField:
        return ScalarField(self.grid, self.mask.astype(complex))


def distance_field(region: Region) -> ScalarField:
    """Euclidean distance from every node to the nearest node of region"""
    if region.is_empty:
        raise RegionError("Distance to an empty region is undefined")
    if "distance" not in region._cache:
        region._cache["distance"] = ndimage.distance_transform_edt(
            ~region.mask, sampling=region.grid.spacing)
    return ScalarField(region.grid, region._cache["distance"].astype(complex))


def _distance_values(region: Region) -> np.ndarray:
    return distance_field(region).values.real


def influence_region(omega: Region, s: float) -> Region:
    """Domain of influence M(omega, s) with a half-cell membership tolerance"""
    if s < 0:
        raise ValueError(f"Influence time must be nonnegative, got {s}")
    dist = _distance_values(omega)
    mask = dist <= s + 0.5 * omega.grid.spacing
    return Region(omega.grid, mask, RegionKind.INFLUENCE, f"M({omega.name},{s:g})")


def max_distance(source: Region, target: Region) -> float:
    """sup over target nodes of the distance to source"""
    target._check(source)
    if target.is_empty:
        raise RegionError("Target region is empty")
    return float(_distance_values(source)[target.mask].max())


def min_distance(source: Region, target: Region) -> float:
    target._check(source)
    if target.is_empty:
        raise RegionError("Target region is empty")
    return float(_distance_values(source)[target.mask].min())


def signed_distance(region: Region) -> np.ndarray:
    """Positive outside the mask, negative inside"""
    if "signed" not in region._cache:
        h = region.grid.spacing
        outside = ndimage.distance_transform_edt(~region.mask, sampling=h)
        inside = ndimage.distance_transform_edt(region.mask, sampling=h)
        region._cache["signed"] = outside - inside
    return region._cache["signed"]


def boundary_nodes(region: Region) -> Region:
    """Member nodes with at least one axis neighbour outside the mask or off the grid"""
    padded = np.pad(region.mask, 1, constant_values=False)
    eroded = ndimage.binary_erosion(padded, structure=ndimage.generate_binary_structure(
        region.grid.dimension, 1))
    core = eroded[tuple(slice(1, -1) for _ in range(region.grid.dimension))]
    return Region(region.grid, region.mask & ~core, RegionKind.DOMAIN, f"boundary({region.name})")


def nearest_boundary_node(region: Region, point: Sequence[float]) -> Tuple[Tuple[int, ...], np.ndarray]:
    """Index and coordinate of the boundary node of region closest to point"""
    edge = boundary_nodes(region)
    coords = edge.coordinates()
    if len(coords) == 0:
        raise RegionError(f"Region '{region.name}' has no boundary nodes")
    d = np.linalg.norm(coords - np.asarray(point, dtype=float), axis=1)
    k = int(np.argmin(d))
    flat = edge.flat_indices[k]
    index = np.unravel_index(flat, region.grid.shape)
    return tuple(int(i) for i in index), coords[k]


def outward_normal(region: Region, index: Sequence[int]) -> np.ndarray:
    """Unit outward normal at a node from the centred gradient of the signed distance"""
    sd = signed_distance(region)
    h = region.grid.spacing
    grad = np.zeros(region.grid.dimension)
    for axis in range(region.grid.dimension):
        hi = list(index)
        lo = list(index)
        hi[axis] = min(index[axis] + 1, region.grid.shape[axis] - 1)
        lo[axis] = max(index[axis] - 1, 0)
        span = (hi[axis] - lo[axis]) * h
        grad[axis] = (sd[tuple(hi)] - sd[tuple(lo)]) / span if span > 0 else 0.0
    norm = np.linalg.norm(grad)
    if norm == 0.0:
        raise RegionError(f"Normal undefined at node {tuple(index)}: flat signed distance")
    return grad / norm


def region_from_mask(grid: SpatialGrid, mask: np.ndarray, kind: RegionKind,
                     name: Optional[str] = None) -> Region:
    return Region(grid, np.asarray(mask, dtype=bool), kind, name or kind.value)
