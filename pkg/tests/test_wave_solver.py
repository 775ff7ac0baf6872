"""Test suite for the leapfrog wave solver"""
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import pytest
import numpy as np

from backend.errors import CFLViolationError, SupportViolationError
from backend.grid.fields import BoundaryData
from backend.grid.grids import SpatialGrid, TimeGrid
from backend.grid.regions import BoxShape, Region, RegionKind, distance_field
from backend.simulation.oracles import (
    dalembert_oracle_1d, manufactured_solution, observed_order, relative_l2_error,
)
from backend.simulation.potential import GaussianBump, Potential
from backend.simulation.snapshot_io import read_snapshots, write_snapshots
from backend.simulation.wave_solver import (
    DistributedSource, SolverSettings, WaveSolver, energy, reach_radius, solve_forward,
)


class TestOracles:
    """Test the solver against solutions computed without it"""

    def test_dalembert_1d(self):
        """Test q = 0 against d'Alembert quadrature, 801 nodes, CFL 0.9"""
        grid = SpatialGrid.from_bounds([-4.0], [4.0], 0.01)
        tg = TimeGrid(0.9, 100)

        def pulse(t, x):
            return np.exp(-x ** 2 / (2 * 0.2 ** 2)) * np.sin(5.0 * t)

        source = DistributedSource(grid, tg, lambda t, c: pulse(t, c[..., 0]))
        u = solve_forward(Potential.zero(grid), source, tg, store_steps=[tg.steps]).snapshot(tg.steps)
        oracle = dalembert_oracle_1d(pulse, tg.horizon, grid)
        assert relative_l2_error(u.values, oracle.values) <= 1e-2

    @pytest.mark.slow
    def test_second_order_convergence(self):
        """Test observed order on a manufactured solution"""
        errors, spacings = [], []
        for h in (0.04, 0.02, 0.01):
            grid = SpatialGrid.from_bounds([-3.0], [3.0], h)
            tg = TimeGrid.from_cfl(1.0, h, 0.5)
            ms = manufactured_solution(1, 3.0, 0.5, 0.3)
            sol = solve_forward(Potential.constant(grid, 0.5), DistributedSource(grid, tg, ms.source), tg,
                                store_steps=[tg.steps])
            errors.append(relative_l2_error(sol.snapshot(tg.steps).values,
                                            ms.exact(tg.horizon, grid.coordinates())))
            spacings.append(h)
        assert errors[0] > errors[1] > errors[2]
        assert abs(observed_order(errors, spacings) - 2.0) <= 0.3

    def test_manufactured_forcing(self):
        """Test the symbolic forcing of u* = sin^2(w t) phi(x)"""
        ms = manufactured_solution(1, 2.0, 0.0, 1.0)
        coords = np.array([[0.0]])
        # phi(0) = 1, phi''(0) = -1: f(t, 0) = 8 cos(4t) + sin^2(2t)
        t = 0.3
        expected = 8 * np.cos(4 * t) + np.sin(2 * t) ** 2
        assert ms.source(t, coords)[0] == pytest.approx(expected)


class TestWaveSolver:
    """Test solver properties on the small experiment"""

    def test_finite_speed(self, tiny_experiment):
        """Test exact zeros outside the discrete reach of omega"""
        exp = tiny_experiment
        dist = distance_field(exp.omega).values.real
        worst = [0.0]

        def watch(n, u):
            outside = dist > reach_radius(exp.grid.spacing, n)
            if outside.any():
                worst[0] = max(worst[0], float(np.max(np.abs(u[outside]))))

        WaveSolver(exp.potential("q2"), exp.time_grid).solve(exp.default_source(), store_steps=[],
                                                              callback=watch)
        assert worst[0] == 0.0

    def test_padded_box(self, tiny_experiment):
        """Test the box covers the wave reach plus the padding cells"""
        grid = tiny_experiment.grid
        assert grid.counts == (209,)
        assert grid.lower[0] == pytest.approx(-4.7)
        assert grid.upper[0] == pytest.approx(5.7)

    def test_energy_conserved_after_source(self, tiny_experiment):
        """Test the discrete energy is constant once the source is off"""
        exp = tiny_experiment
        center = exp.omega.coordinates().mean(axis=0)

        def fn(t, x):
            return np.exp(-np.sum((x - center) ** 2, axis=-1) / 0.02) * np.sin(6.0 * t)

        f = BoundaryData.from_function(exp.omega, exp.time_grid, fn, window=(0.0, 0.8))
        q = exp.potential("q2")
        u = solve_forward(q, f, exp.time_grid, SolverSettings(storage="full"))
        e_early, e_late = energy(u, q, 25), energy(u, q, 70)
        assert e_early > 0
        assert e_late == pytest.approx(e_early, rel=1e-10)

    def test_complex_source_is_linear(self, tiny_experiment):
        """Test u^{a f} = a u^f for complex a"""
        exp = tiny_experiment
        f = exp.default_source()
        q = exp.potential("q2")
        n = exp.time_grid.steps
        u = solve_forward(q, f, exp.time_grid, store_steps=[n]).snapshot(n).values
        v = solve_forward(q, f * (2 - 1j), exp.time_grid, store_steps=[n]).snapshot(n).values
        assert np.allclose(v, (2 - 1j) * u, rtol=1e-12, atol=1e-14)

    def test_cfl_violation(self):
        """Test dt > h / sqrt(n) is rejected"""
        grid = SpatialGrid.from_bounds([0.0, 0.0], [1.0, 1.0], 0.1)
        with pytest.raises(CFLViolationError):
            WaveSolver(Potential.zero(grid), TimeGrid(1.0, 10))

    def test_source_too_close_to_edge(self):
        """Test sources whose reach hits the box edge"""
        grid = SpatialGrid.from_bounds([0.0], [1.0], 0.05)
        omega = Region.from_shape(grid, BoxShape((0.4,), (0.6,)), RegionKind.OMEGA, "omega")
        tg = TimeGrid.from_cfl(1.0, 0.05, 0.8)
        solver = WaveSolver(Potential.zero(grid), tg)
        with pytest.raises(SupportViolationError):
            solver.observe_batch(np.ones((tg.steps + 1, omega.node_count)), omega)

    def test_potential_bound(self):
        """Test a potential above its sup-norm bound"""
        grid = SpatialGrid.from_bounds([-1.0], [1.0], 0.1)
        with pytest.raises(ValueError):
            Potential.from_bumps(grid, [GaussianBump((0.0,), 0.2, 3.0)], bound=2.0)

    def test_snapshot_dump(self, tiny_experiment, tmp_path):
        """Test the binary dump reads back with its grids"""
        exp = tiny_experiment
        u = solve_forward(exp.potential("q1"), exp.default_source(), exp.time_grid, store_steps=[0, 20, 40])
        back = read_snapshots(write_snapshots(tmp_path / "forward.bcsnap", u))
        assert back.grid == exp.grid
        assert back.time_grid.steps == exp.time_grid.steps
        assert list(back.steps) == [0, 20, 40]
        assert np.array_equal(back.values, u.values)

    def test_snapshot_dump_rejects_other_files(self, tmp_path):
        """Test the magic header check"""
        path = tmp_path / "bad.bcsnap"
        path.write_bytes(b"not a dump")
        with pytest.raises(ValueError):
            read_snapshots(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
