"""Test suite for plateau bumps and geometric optics probes"""
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import pytest
import numpy as np

from backend.errors import NumericalFailure, RegionError, SupportViolationError
from backend.services.configuration_manager import config_from_dict
from backend.services.experiment_builder import build_experiment
from backend.simulation.wave_solver import WaveSolver
from backend.optics.bump import PlateauBump, smooth_step
from backend.optics.geometric_optics import (
    MAX_DISPERSION_PHASE, MIN_POINTS_PER_WAVELENGTH, build_probe, build_source, phase_residual,
    probe_localization, probe_lower_bound, probe_margin, probe_response, remainder_check,
    source_sobolev_norm,
)


def _probe(exp, sigma=8.0, **kwargs):
    args = dict(delta=0.3, eta=0.08)
    args.update(kwargs)
    return build_probe([-0.25], exp.omega, exp.potential("q1"), exp.time_grid, sigma, **args)


from tests.conftest import tiny_config_dict


class TestPlateauBump:
    """Test smooth cutoffs"""

    def test_smooth_step(self):
        """Test S = 0 below 0, 1 above 1 and 1/2 at the midpoint"""
        x = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
        s = smooth_step(x)
        assert s[0] == 0.0 and s[1] == 0.0
        assert s[2] == pytest.approx(0.5)
        assert s[3] == 1.0 and s[4] == 1.0
        assert np.all(smooth_step(np.array([-1.0, 2.0]), 1) == 0.0)

    def test_plateau_and_support(self):
        """Test chi = 1 on the plateau and 0 past the support radius"""
        chi = PlateauBump(0.1, 0.2)
        assert chi.support_radius == pytest.approx(0.3)
        z = np.array([[0.0], [0.05], [-0.08], [0.31], [-0.5]])
        assert np.array_equal(chi.value(z), [1.0, 1.0, 1.0, 0.0, 0.0])
        assert 0.0 < chi.value(np.array([[0.2]]))[0] < 1.0

    def test_gradient_vanishes_on_plateau(self):
        """Test derivatives on the plateau and outside the support"""
        chi = PlateauBump(0.1, 0.2)
        value, grad, hess = chi.derivatives(np.array([[0.0, 0.05], [0.4, 0.0]]))
        assert np.array_equal(value, [1.0, 0.0])
        assert np.all(grad == 0.0)
        assert np.all(hess == 0.0)

    def test_invalid_bumps(self):
        """Test negative plateau and empty transition"""
        with pytest.raises(ValueError):
            PlateauBump(-0.1, 0.2)
        with pytest.raises(ValueError):
            PlateauBump(0.1, 0.0)


class TestBuildProbe:
    """Test probe geometry on the small experiment"""

    def test_geometry(self, shared_experiment):
        """Test boundary point, normal and the offset snapped to the time grid"""
        probe = _probe(shared_experiment)
        assert probe.y == pytest.approx([1.0])
        assert probe.normal == pytest.approx([-1.0])
        assert probe.s == pytest.approx(1.25)
        # s + delta = 1.55 snaps down to step 38
        assert probe.s_delta == pytest.approx(1.52)
        assert probe.s_delta_step == 38
        assert probe.delta == pytest.approx(0.27)

    def test_points_per_wavelength(self, shared_experiment):
        """Test the resolution guard"""
        probe = _probe(shared_experiment)
        assert probe.points_per_wavelength == pytest.approx(2 * np.pi / (8.0 * 0.05))
        assert probe.resolved
        coarse = probe.with_sigma(60.0)
        assert coarse.points_per_wavelength < MIN_POINTS_PER_WAVELENGTH
        assert not coarse.resolved
        with pytest.raises(ValueError):
            probe.with_sigma(0.0)

    def test_dispersion_phase(self, shared_experiment):
        """Test the leapfrog phase drift over s_delta and its part in the guard"""
        probe = _probe(shared_experiment)
        # (2/dt) asin(0.8 sin(0.2)) = 7.98052, times s_delta = 1.52
        assert probe.dispersion_phase == pytest.approx(0.0296, rel=1e-2)
        edge = probe.with_sigma(12.0)
        assert edge.points_per_wavelength >= MIN_POINTS_PER_WAVELENGTH
        assert edge.dispersion_phase > MAX_DISPERSION_PHASE
        assert not edge.resolved

    def test_no_dispersion_at_unit_cfl(self):
        """Test the 1D scheme at dt = h carries the plane wave exactly"""
        exp = build_experiment(config_from_dict(tiny_config_dict(time={"horizon": 3.2, "cfl": 1.0})))
        probe = _probe(exp, sigma=12.0)
        assert probe.dispersion_phase == pytest.approx(0.0, abs=1e-9)
        assert probe.resolved

    def test_cutoff_below_spacing(self, shared_experiment):
        """Test eta < h gives a zero amplitude"""
        with pytest.raises(RegionError):
            _probe(shared_experiment, eta=0.04)

    def test_offset_too_small(self, shared_experiment):
        """Test delta <= 2 eta + h after snapping"""
        with pytest.raises(RegionError):
            _probe(shared_experiment, delta=0.1)

    def test_outer_cutoff_leaks(self, shared_experiment):
        """Test a wide outer transition reaching past omega"""
        with pytest.raises(SupportViolationError):
            _probe(shared_experiment, outer_transition=0.2)

    def test_probe_time_past_half(self, shared_experiment):
        """Test s + delta > T/2"""
        exp = shared_experiment
        with pytest.raises(ValueError, match="T/2"):
            build_probe([-0.5], exp.omega, exp.potential("q1"), exp.time_grid, 8.0, delta=0.25, eta=0.08)

    def test_invalid_frequency_and_order(self, shared_experiment):
        """Test sigma <= 0 and negative order"""
        with pytest.raises(ValueError):
            _probe(shared_experiment, sigma=0.0)
        with pytest.raises(ValueError):
            _probe(shared_experiment, order=-1)


class TestProbeSource:
    """Test probe sources and their norms"""

    def test_source_on_omega(self, shared_experiment):
        """Test the source is nonzero data on omega"""
        exp = shared_experiment
        h = build_source(_probe(exp))
        assert h.values.shape == (exp.time_grid.steps + 1, exp.omega.node_count)
        assert not h.is_zero()

    def test_source_stops_after_outer_cutoff(self, shared_experiment):
        """Test the source is zero once the ray cutoff has left the outer cutoff"""
        probe = _probe(shared_experiment)
        h = build_source(probe)
        assert probe.source_last_step < shared_experiment.time_grid.steps
        assert not np.any(h.values[probe.source_last_step + 1:])
        assert np.any(h.values[:probe.source_last_step + 1])

    def test_lazy_source_matches_boundary_data(self, shared_experiment):
        """Test the response to the windowed source equals the solve with full boundary data"""
        probe = _probe(shared_experiment)
        n = probe.s_delta_step
        direct = WaveSolver(probe.potential, probe.time_grid).solve(build_source(probe), steps=n, store_steps=[n])
        np.testing.assert_allclose(probe_response(probe).values, direct.snapshot(n).values,
                                   rtol=1e-10, atol=1e-12)

    def test_sobolev_norms_nest(self, shared_experiment):
        """Test H0 <= H1 <= H2 and the order limit"""
        probe = _probe(shared_experiment)
        norms = [source_sobolev_norm(probe, k) for k in (0, 1, 2)]
        assert 0 < norms[0] <= norms[1] <= norms[2]
        with pytest.raises(ValueError):
            source_sobolev_norm(probe, 3)

    def test_phase_residual(self, shared_experiment):
        """Test the discrete phase error sigma^2 (h^2 - dt^2) / 12 to leading order"""
        probe = _probe(shared_experiment)
        assert phase_residual(probe) == pytest.approx(8.0 ** 2 * (0.05 ** 2 - 0.04 ** 2) / 12, rel=0.05)
        assert phase_residual(probe.with_sigma(12.0)) > phase_residual(probe)


class TestProbeResponse:
    """Test solves driven by the probe source"""

    def test_remainder_rows(self, shared_experiment):
        """Test one row per sigma, unresolved rows flagged"""
        exp = shared_experiment
        report = remainder_check(_probe(exp), exp.potential("q1"), [6.0, 8.0, 30.0])
        assert [r.sigma for r in report.rows] == [6.0, 8.0, 30.0]
        assert [r.ppw_flag for r in report.rows] == [False, False, True]
        assert all(np.isfinite(r.l2_remainder) and r.h2_source_norm > 0 for r in report.rows)
        assert np.isfinite(report.remainder_slope)
        assert len(report.table()) == 3

    def test_free_reference_cancels_scheme_defect(self, shared_experiment):
        """Test a probe for q = 0 has zero subtracted remainder but a nonzero raw one"""
        exp = shared_experiment
        report = remainder_check(_probe(exp), exp.potential("q1"), [6.0, 8.0])
        assert all(r.l2_remainder == 0.0 for r in report.rows)
        assert all(r.l2_raw_remainder > 0.0 for r in report.rows)
        assert "l2_raw_remainder" in report.table()[0]

    def test_free_reference_keeps_potential_part(self, shared_experiment):
        """Test the subtracted remainder for q2 is nonzero and differs from the raw one"""
        exp = shared_experiment
        q = exp.potential("q2")
        probe = build_probe([-0.25], exp.omega, q, exp.time_grid, 8.0, order=1, delta=0.3, eta=0.08)
        subtracted = remainder_check(probe, q, [8.0]).rows[0]
        raw = remainder_check(probe, q, [8.0], subtract_free=False).rows[0]
        assert subtracted.l2_remainder > 0.0
        assert raw.l2_remainder == pytest.approx(subtracted.l2_raw_remainder)
        assert subtracted.l2_remainder != pytest.approx(raw.l2_remainder)

    def test_free_space_probe(self, shared_experiment):
        """Test the q = 0 twin keeps the geometry and drops the potential from a_1"""
        exp = shared_experiment
        probe = build_probe([-0.25], exp.omega, exp.potential("q2"), exp.time_grid, 8.0, order=1,
                            delta=0.3, eta=0.08)
        free = probe.free_space()
        assert free.potential.sup_norm() == 0.0
        assert free.s_delta == probe.s_delta
        assert free.frame.spacing == probe.frame.spacing
        assert np.any(probe.tables[0].value != 0)
        # in 1D the box of a_0 vanishes along the ray, so a_1 is zero without q
        assert np.allclose(free.tables[0].value, 0.0)

    def test_margin_matches_response(self, shared_experiment):
        """Test the margin is |u^h(s_delta, x0)| - 1/2 at the probe's own sigma"""
        exp = shared_experiment
        probe = _probe(exp)
        q = exp.potential("q1")
        index = exp.grid.nearest_node(probe.x0)
        value = abs(probe_response(probe, q).at(index))
        assert probe_margin(probe, q) == pytest.approx(value - 0.5, abs=1e-14)
        assert value > 0

    def test_lower_bound_needs_resolved_sigma(self, shared_experiment):
        """Test a schedule of unresolved frequencies fails"""
        exp = shared_experiment
        with pytest.raises(NumericalFailure):
            probe_lower_bound(_probe(exp), exp.potential("q1"), [60.0, 80.0])

    def test_localization_is_finite(self, shared_experiment):
        """Test the off-ball maximum is a finite nonnegative number"""
        exp = shared_experiment
        value = probe_localization(_probe(exp), exp.potential("q1"))
        assert np.isfinite(value) and value >= 0.0


class TestProbeStudy:
    """Test the refined experiment the decay study runs on"""

    def test_same_experiment_without_refinement(self, tiny_experiment):
        """Test refine 1 at the run CFL reuses the experiment"""
        assert tiny_experiment.probe_study() is tiny_experiment
        assert tiny_experiment.probe_potential() is tiny_experiment.potential("q2")

    def test_refined_study(self):
        """Test spacing, step and potential of a refined study, built once"""
        exp = build_experiment(config_from_dict(tiny_config_dict(probe={"refine": 2, "cfl": 0.5,
                                                                        "potential": "q1"})))
        study = exp.probe_study()
        assert study is not exp
        assert study.grid.spacing == pytest.approx(0.025)
        assert study.time_grid.dt == pytest.approx(0.0125)
        assert study.time_grid.horizon == pytest.approx(exp.time_grid.horizon)
        assert exp.probe_study() is study
        assert exp.probe_potential().grid is study.grid
        assert exp.probe_potential().pid == "q1"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
