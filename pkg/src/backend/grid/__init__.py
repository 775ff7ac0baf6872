"""Grids, regions, fields and discrete quadrature"""
from .grids import SpatialGrid, TimeGrid
from .fields import (
    BoundaryData, ScalarField, boundary_inner, boundary_inner_steps, h1_norm, l2_inner,
    l2_norm, time_weights,
)
from .regions import (
    BallShape, BoxShape, Region, RegionKind, boundary_nodes, distance_field,
    influence_region, max_distance, min_distance, nearest_boundary_node, outward_normal,
    signed_distance,
)

__all__ = [
    "SpatialGrid", "TimeGrid", "BoundaryData", "ScalarField", "boundary_inner",
    "boundary_inner_steps", "h1_norm", "l2_inner", "l2_norm", "time_weights",
    "BallShape", "BoxShape", "Region", "RegionKind", "boundary_nodes", "distance_field",
    "influence_region", "max_distance", "min_distance", "nearest_boundary_node",
    "outward_normal", "signed_distance",
]
