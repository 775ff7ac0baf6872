"""Test suite for reconstruction inputs, cap schedules and the stability sweep"""
import sys
from dataclasses import replace
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import pytest
import numpy as np

from backend.control.caps import default_schedule
from backend.control.cost_of_control import CostRow, CostTable
from backend.errors import ConfigValidationError
from backend.grid.regions import BoxShape, Region
from backend.reconstruction.reconstruction import (
    illumination_source, prepare_operators, reconstruct_potential, recover_difference_field,
)
from backend.reconstruction.stability import (
    LinearResponse, SweepSetup, bump_family, fit_double_log, linear_response, stability_sweep,
    threshold_epsilon,
)


class TestCapSchedule:
    """Test (eta, alpha, epsilon) schedules"""

    def test_epsilon_from_eta(self):
        """Test epsilon = eta^((n+2)/2)"""
        entries = default_schedule([0.1, 0.05], [1e-4, 1e-5], 2)
        assert entries[0].epsilon == pytest.approx(0.01)
        assert entries[1].epsilon == pytest.approx(0.0025)
        assert default_schedule([0.04], [1e-4], 1)[0].epsilon == pytest.approx(0.04 ** 1.5)

    def test_invalid_schedules(self):
        """Test length mismatch and empty schedules"""
        with pytest.raises(ValueError):
            default_schedule([0.1, 0.05], [1e-4], 1)
        with pytest.raises(ValueError):
            default_schedule([], [], 1)


class TestReconstructionConfig:
    """Test reconstruction settings built from the experiment"""

    def test_target_nodes_follow_stride(self, tiny_experiment):
        """Test every fifth node of K"""
        cfg = tiny_experiment.reconstruction_config()
        assert cfg.target_nodes()[:, 0] == pytest.approx([-0.5, -0.25, 0.0])

    def test_probe_times_must_fit(self, tiny_experiment):
        """Test probe times past T/2 and a stencil wider than the plateau"""
        cfg = tiny_experiment.reconstruction_config()
        with pytest.raises(ConfigValidationError) as info:
            cfg.validate()
        assert len(info.value.issues) == 2
        assert any("T/2" in issue for issue in info.value.issues)

    def test_even_stencil(self, tiny_experiment):
        """Test the time stencil needs an odd point count"""
        cfg = replace(tiny_experiment.reconstruction_config(), stencil_points=4)
        with pytest.raises(ConfigValidationError) as info:
            cfg.validate()
        assert any("odd" in issue for issue in info.value.issues)

    def test_illumination(self, tiny_experiment):
        """Test the illumination source is nonnegative and vanishes at t = 0"""
        exp = tiny_experiment
        f = illumination_source(exp.omega, exp.time_grid, 0.2, 1.0)
        assert np.all(f.values.real >= 0) and not np.any(f.values.imag)
        assert not np.any(f.values[0])
        assert f.values[-1].max() == pytest.approx(1.0)
        with pytest.raises(ValueError):
            illumination_source(exp.omega, exp.time_grid, 0.0, 1.0)


class TestDifferenceField:
    """Test d = u1^f - u2^f recovered from the two maps"""

    NODE = np.array([[-0.25]])
    TIMES = [1.44, 1.48]

    def test_identical_maps(self, tiny_experiment):
        """Test one potential on both sides gives d = 0 at an accepted node"""
        exp = tiny_experiment
        cfg = replace(exp.reconstruction_config(data="q1"), guard_tolerance=0.5)
        field = recover_difference_field(cfg, exp.default_source(), self.TIMES, self.NODE, threads=1)
        assert field.accepted[0]
        assert np.all(field.values == 0)
        assert field.oracle_error() == 0.0
        assert np.isfinite(field.probe_divisor[0])

    def test_linear_in_source(self, tiny_experiment):
        """Test d for 2f is twice d for f and the probe divisor does not move"""
        exp = tiny_experiment
        cfg = replace(exp.reconstruction_config(), guard_tolerance=0.5)
        ops = prepare_operators(cfg)
        f = exp.default_source()
        one = recover_difference_field(cfg, f, self.TIMES, self.NODE, ops, threads=1)
        two = recover_difference_field(cfg, 2 * f, self.TIMES, self.NODE, ops, threads=1)
        assert one.accepted[0] and two.accepted[0]
        assert np.max(np.abs(one.values)) > 0
        np.testing.assert_allclose(two.values, 2 * one.values, rtol=1e-10)
        assert two.probe_divisor[0] == one.probe_divisor[0]
        assert two.oracle.shape == (len(self.TIMES), 1)

    def test_guard_rejects(self, tiny_experiment):
        """Test a guard no probe can meet rejects the node and keeps NaN"""
        exp = tiny_experiment
        cfg = replace(exp.reconstruction_config(), guard_tolerance=-10.0)
        field = recover_difference_field(cfg, exp.default_source(), self.TIMES, self.NODE, threads=1)
        assert not field.accepted[0]
        assert "guard" in field.reasons[0]
        assert np.all(np.isnan(field.values))
        assert np.isnan(field.oracle_error())


class TestReconstructPotential:
    """Test the end-to-end pipeline on a target close to omega"""

    def _config(self, exp, reference="q2", data="q2"):
        near = Region.from_shape(exp.grid, BoxShape((-0.1,), (0.0,)))
        return replace(exp.reconstruction_config(reference, data), target=near, node_stride=2,
                       stencil_points=3, stencil_stride=1, guard_tolerance=0.5)

    def test_identical_maps_return_reference(self, tiny_experiment):
        """Test q-hat = q1 when the data map is the reference map"""
        cfg = self._config(tiny_experiment)
        result = reconstruct_potential(cfg)
        assert len(result.nodes) >= 1
        assert np.all(result.accepted)
        assert result.q_hat == pytest.approx(result.q_reference, abs=1e-14)
        assert np.any(result.q_reference != 0)
        assert result.relative_error == pytest.approx(0.0, abs=1e-14)
        assert result.to_dict()["rejected_fraction"] == 0.0
        assert {"x0", "q_hat", "q_ref", "q_true", "divisor", "accepted"} <= set(result.rows()[0])

    def test_invalid_config_is_refused(self, tiny_experiment):
        """Test the default target is too deep for the probe times"""
        with pytest.raises(ConfigValidationError):
            reconstruct_potential(tiny_experiment.reconstruction_config())


class TestDoubleLogFit:
    """Test the double-logarithmic stability model"""

    def test_recovers_exponent(self):
        """Test the fit on exact model data"""
        deltas = np.logspace(-8, -2, 7)
        errors = 2.0 / np.log(np.abs(np.log(deltas))) ** 1.5
        fit = fit_double_log(deltas, errors)
        assert fit["C"] == pytest.approx(2.0, rel=1e-3)
        assert fit["alpha"] == pytest.approx(1.5, rel=1e-3)
        assert fit["points"] == 7
        assert fit["rms_residual"] < 1e-6

    def test_too_few_points(self):
        """Test deltas outside (0, 1/e) are dropped"""
        assert fit_double_log([0.5, 0.9, 1e-3], [0.1, 0.2, 0.3]) == {}


class TestThresholdEpsilon:
    """Test the stability threshold read off a cost table"""

    def test_threshold(self):
        """Test the smallest epsilon meeting |dLambda| <= (eps / A)^ell"""
        table = CostTable([CostRow(0.5, 1e-2, 0.4, 1.0, 1.0, 1.0, 1.0, True),
                           CostRow(0.2, 1e-4, 0.2, 2.0, 1.0, 2.0, 0.1, True)])
        assert threshold_epsilon(0.05, 1.0, table) == 0.2
        assert threshold_epsilon(0.3, 1.0, table) == 0.5
        assert np.isnan(threshold_epsilon(0.9, 1.0, table))
        assert np.isnan(threshold_epsilon(0.05, float("nan"), table))


class TestStabilitySweep:
    """Test the sweep over a bump family"""

    def test_bump_family(self, tiny_experiment):
        """Test pairs (q, q + a bump)"""
        base = tiny_experiment.potential("q1")
        pairs = bump_family(base, [0.5, 2.0], [-0.25], 0.1)
        assert [p.pair_id for p in pairs] == ["a=0.5", "a=2"]
        assert all(p.first is base for p in pairs)
        diff = pairs[1].second.values - 4.0 * pairs[0].second.values
        assert np.max(np.abs(diff)) == pytest.approx(0.0, abs=1e-12)

    def test_sweep_rows(self, tiny_experiment):
        """Test one row per pair, |q1 - q2| linear in the amplitude"""
        exp = tiny_experiment
        pairs = bump_family(exp.potential("q1"), [0.5, 1.0, 2.0], [-0.25], 0.1)
        setup = SweepSetup(exp.omega, exp.target, exp.time_grid, exp.settings, norm_iterations=10,
                           norm_tolerance=1e-4, seed=2)
        table = stability_sweep(pairs, setup)
        assert len(table.rows) == 3
        assert all(r.status == "ok" and r.lambda_diff > 0 for r in table.rows)
        q = [r.q_diff for r in table.rows]
        assert q[1] == pytest.approx(2 * q[0], rel=1e-12)
        assert q[2] == pytest.approx(4 * q[0], rel=1e-12)
        assert np.isfinite(table.ell)
        assert all("ell" in row and "alpha_hat" in row for row in table.table())

    def test_identical_pair(self, tiny_experiment):
        """Test a pair with equal potentials has zero distances"""
        exp = tiny_experiment
        pairs = bump_family(exp.potential("q1"), [0.0], [-0.25], 0.1)
        table = stability_sweep(pairs, SweepSetup(exp.omega, exp.target, exp.time_grid))
        assert table.rows[0].lambda_diff == 0.0
        assert table.rows[0].q_diff == 0.0

    def test_family_columns(self, tiny_experiment):
        """Test the per-pair inner product, indicator and probe margin columns"""
        exp = tiny_experiment
        pairs = bump_family(exp.potential("q1"), [0.5, 1.0, 2.0], [-0.25], 0.1)
        setup = SweepSetup(exp.omega, exp.target, exp.time_grid, exp.settings, norm_iterations=10,
                           norm_tolerance=1e-4, seed=2, family=exp.family_probe())
        table = stability_sweep(pairs, setup)
        for row in table.rows:
            assert row.status == "ok"
            assert np.isfinite(row.inner_diff) and row.inner_diff >= 0
            assert np.isfinite(row.indicator_diff) and row.indicator_diff >= 0
            assert row.stability_constant == pytest.approx(row.inner_diff / row.lambda_diff)
            assert np.isfinite(row.probe_margin)
        sups = [r.q_sup for r in table.rows]
        assert sups[1] == pytest.approx(2 * sups[0], rel=1e-12)
        assert -1.0 <= table.indicator_spearman <= 1.0
        assert table.constant_spread >= 1.0
        assert {"inner_diff", "indicator_diff", "probe_margin"} <= set(table.table()[0])

    def test_family_columns_identical_pair(self, tiny_experiment):
        """Test equal potentials give zero differences and no constant"""
        exp = tiny_experiment
        pairs = bump_family(exp.potential("q1"), [0.0], [-0.25], 0.1)
        setup = SweepSetup(exp.omega, exp.target, exp.time_grid, family=exp.family_probe())
        row = stability_sweep(pairs, setup).rows[0]
        assert row.inner_diff == 0.0
        assert row.indicator_diff == 0.0
        assert np.isnan(row.stability_constant)
        assert row.q_sup == 0.0

    def test_empty_sweep(self, tiny_experiment):
        """Test a sweep needs pairs"""
        exp = tiny_experiment
        with pytest.raises(ValueError):
            stability_sweep([], SweepSetup(exp.omega, exp.target, exp.time_grid))


class TestLinearResponse:
    """Test |d| against the bump amplitude tau for q2 = q1 + tau * bump"""

    TAUS = [0.05, 0.1, 0.15, 0.2]

    def test_response_is_linear(self, tiny_experiment):
        """Test a small-amplitude family gives a near-linear |d|"""
        exp = tiny_experiment
        cfg = replace(exp.reconstruction_config(), guard_tolerance=0.5)
        result = linear_response(cfg, self.TAUS, [-0.25], 0.1, exp.default_source(), [1.44],
                                 np.array([[-0.25]]), threads=1)
        assert isinstance(result, LinearResponse)
        assert list(result.accepted) == [1, 1, 1, 1]
        assert np.all(result.norms > 0)
        assert np.all(np.diff(result.norms) > 0)
        assert result.slope > 0
        assert 0.9 <= result.r_squared <= 1.0
        assert len(result.table()) == 4
        assert result.to_dict()["r_squared"] == result.r_squared

    def test_too_few_amplitudes(self, tiny_experiment):
        """Test the fit needs three amplitudes"""
        exp = tiny_experiment
        with pytest.raises(ValueError):
            linear_response(exp.reconstruction_config(), [0.1, 0.2], [-0.25], 0.1, exp.default_source(),
                            [1.44], np.array([[-0.25]]))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
