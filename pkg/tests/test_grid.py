"""Test suite for grids, regions and boundary data"""
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import pytest
import numpy as np
from hypothesis import given, settings, strategies as st

from backend.errors import CFLViolationError, GridMismatchError, RegionError, SupportViolationError
from backend.grid.fields import BoundaryData, ScalarField, boundary_inner, h1_norm, l2_norm
from backend.grid.grids import SpatialGrid, TimeGrid
from backend.grid.regions import (
    BallShape, BoxShape, Region, RegionKind, distance_field, influence_region, max_distance, min_distance,
)


def _line(spacing=0.1):
    grid = SpatialGrid.from_bounds([-1.0], [2.0], spacing)
    omega = Region.from_shape(grid, BoxShape((1.0,), (1.5,)), RegionKind.OMEGA, "omega")
    return grid, omega


class TestSpatialGrid:
    """Test grid construction"""

    def test_from_bounds_aligns_on_spacing(self):
        """Test nodes sit on multiples of the spacing"""
        grid = SpatialGrid.from_bounds([-0.23], [0.41], 0.1)
        assert grid.lower == pytest.approx((-0.3,))
        assert grid.upper == pytest.approx((0.5,))
        assert grid.counts == (9,)

    def test_coordinates_shape(self):
        """Test coordinate array layout in 2D"""
        grid = SpatialGrid.from_bounds([0.0, 0.0], [1.0, 0.5], 0.25)
        coords = grid.coordinates()
        assert coords.shape == (5, 3, 2)
        assert coords[4, 2] == pytest.approx([1.0, 0.5])

    def test_rejects_three_dimensions(self):
        """Test only n = 1, 2 are supported"""
        with pytest.raises(ValueError):
            SpatialGrid(3, 0.1, (0, 0, 0), (5, 5, 5))

    def test_nearest_node_clips(self):
        """Test nearest node of a point outside the box"""
        grid = SpatialGrid.from_bounds([0.0], [1.0], 0.1)
        assert grid.nearest_node([0.42]) == (4,)
        assert grid.nearest_node([5.0]) == (10,)

    def test_require_same(self):
        """Test grid mismatch detection"""
        a = SpatialGrid.from_bounds([0.0], [1.0], 0.1)
        b = SpatialGrid.from_bounds([0.0], [1.0], 0.05)
        with pytest.raises(GridMismatchError):
            a.require_same(b)


class TestTimeGrid:
    """Test time grid"""

    def test_from_cfl(self):
        """Test dt = cfl * h and the step count"""
        tg = TimeGrid.from_cfl(3.2, 0.05, 0.8)
        assert tg.steps == 80
        assert tg.dt == pytest.approx(0.04)
        assert tg.half_steps == 40

    def test_from_cfl_rejects_partial_step(self):
        """Test horizon that is not a whole number of steps"""
        with pytest.raises(ValueError):
            TimeGrid.from_cfl(3.21, 0.05, 0.8)

    def test_odd_steps_have_no_half(self):
        """Test T/2 must be a grid time"""
        with pytest.raises(ValueError):
            TimeGrid(1.0, 11).half_steps

    def test_index_of(self):
        """Test lookup of grid times"""
        tg = TimeGrid(1.0, 10)
        assert tg.index_of(0.3) == 3
        with pytest.raises(ValueError):
            tg.index_of(0.35)

    def test_trapezoid_weights(self):
        """Test half weights at the window ends"""
        tg = TimeGrid(1.0, 10)
        w = tg.trapezoid_weights(2, 5)
        assert w[2] == pytest.approx(0.05)
        assert w[3] == pytest.approx(0.1)
        assert w[5] == pytest.approx(0.05)
        assert w.sum() == pytest.approx(0.3)
        assert w[:2].sum() == 0 and w[6:].sum() == 0

    def test_cfl_check(self):
        """Test dt above h / sqrt(n) is rejected"""
        grid = SpatialGrid.from_bounds([0.0, 0.0], [1.0, 1.0], 0.1)
        TimeGrid(1.0, 15).check_cfl(grid)
        with pytest.raises(CFLViolationError):
            TimeGrid(1.0, 10).check_cfl(grid)


class TestRegions:
    """Test regions and distances"""

    def test_box_and_ball_masks(self):
        """Test node membership of shapes"""
        grid = SpatialGrid.from_bounds([-1.0, -1.0], [1.0, 1.0], 0.1)
        box = Region.from_shape(grid, BoxShape((0.0, 0.0), (0.5, 0.5)))
        ball = Region.from_shape(grid, BallShape((0.0, 0.0), 0.3))
        assert box.node_count == 36
        assert ball.contains_point([0.3, 0.0])
        assert not ball.contains_point([0.3, 0.1])

    def test_empty_omega_rejected(self):
        """Test empty observation region"""
        grid = SpatialGrid.from_bounds([0.0], [1.0], 0.1)
        with pytest.raises(RegionError):
            Region.from_shape(grid, BoxShape((2.0,), (3.0,)), RegionKind.OMEGA, "omega")

    def test_trapezoid_weights_of_interval(self):
        """Test quadrature volume equals the interval length"""
        grid, omega = _line()
        assert omega.node_count == 6
        assert omega.quadrature_volume == pytest.approx(0.5)
        assert omega.node_weights[0] == pytest.approx(0.05)
        assert omega.node_weights[2] == pytest.approx(0.1)

    def test_distances(self):
        """Test max and min distance between intervals"""
        grid, omega = _line()
        target = Region.from_shape(grid, BoxShape((-0.5,), (0.0,)), RegionKind.TARGET_K, "K")
        assert max_distance(omega, target) == pytest.approx(1.5)
        assert min_distance(omega, target) == pytest.approx(1.0)
        assert distance_field(omega).values.real[grid.nearest_node([1.2])] == 0

    def test_influence_region(self):
        """Test M(omega, s) grows by s on each side"""
        grid, omega = _line()
        m = influence_region(omega, 0.3)
        assert m.contains_point([0.7]) and m.contains_point([1.8])
        assert not m.contains_point([0.6]) and not m.contains_point([1.9])
        with pytest.raises(ValueError):
            influence_region(omega, -0.1)

    def test_h1_norm_needs_width(self):
        """Test H1 norm on a region narrower than the stencil"""
        grid = SpatialGrid.from_bounds([0.0], [1.0], 0.1)
        thin = Region.from_shape(grid, BoxShape((0.5,), (0.6,)))
        with pytest.raises(RegionError):
            h1_norm(ScalarField.zeros(grid), thin)

    def test_l2_norm_of_constant(self):
        """Test L2 norm of 1 on [1, 1.5]"""
        grid, omega = _line()
        one = ScalarField(grid, np.ones(grid.shape))
        assert l2_norm(one, omega) == pytest.approx(np.sqrt(0.5))


class TestBoundaryData:
    """Test space-time data on omega"""

    def test_window_enforced(self):
        """Test values outside the window are rejected"""
        grid, omega = _line()
        tg = TimeGrid(1.0, 10)
        values = np.ones((11, omega.node_count))
        with pytest.raises(SupportViolationError):
            BoundaryData(omega, tg, values, (2, 5))
        data = BoundaryData(omega, tg, values).restrict_window(2, 5)
        assert data.window == (2, 5)
        assert data.support_steps() == (2, 5)

    def test_shape_checked(self):
        """Test wrong value shape"""
        grid, omega = _line()
        with pytest.raises(GridMismatchError):
            BoundaryData(omega, TimeGrid(1.0, 10), np.zeros((10, omega.node_count)))

    def test_from_function_window(self):
        """Test sampling with a time window"""
        grid, omega = _line()
        tg = TimeGrid(1.0, 10)
        data = BoundaryData.from_function(omega, tg, lambda t, x: 1.0 + 0 * t * x[..., 0], (0.2, 0.4))
        assert data.window == (2, 4)
        assert np.all(data.values[2:5] == 1.0)
        # full-horizon trapezoid: steps 2..4 are interior, weight dt each
        assert data.norm() == pytest.approx(np.sqrt(0.3 * 0.5))

    def test_arithmetic_joins_windows(self):
        """Test sum of data with different windows"""
        grid, omega = _line()
        tg = TimeGrid(1.0, 10)
        ones = BoundaryData(omega, tg, np.ones((11, omega.node_count)))
        total = ones.restrict_window(0, 3) + ones.restrict_window(6, 8)
        assert total.window == (0, 8)
        assert (2 * total).values[7, 0] == 2.0
        assert (-total).is_zero() is False

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1))
    def test_boundary_inner_is_hermitian(self, seed):
        """Test <f, g> = conj <g, f> for random complex data"""
        grid, omega = _line()
        tg = TimeGrid(1.0, 10)
        rng = np.random.default_rng(seed)
        shape = (11, omega.node_count)
        f = BoundaryData(omega, tg, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        g = BoundaryData(omega, tg, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        assert boundary_inner(f, g) == pytest.approx(np.conj(boundary_inner(g, f)), rel=1e-12, abs=1e-14)
        assert boundary_inner(f, f).real >= 0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
