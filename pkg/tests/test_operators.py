"""Test suite for the measurement map, the connecting operator and the linear algebra helpers"""
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import pytest
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from backend.control.boundary_control import direct_inner
from backend.errors import SupportViolationError
from backend.grid.fields import BoundaryData, boundary_inner
from backend.grid.regions import BoxShape, Region
from backend.operators.basis import CoarseBasis
from backend.operators.connecting_operator import (
    ConnectingOperator, apply_J, blago_inner, correlation_forcing, correlation_solve,
    inner_product_at_times, min_eigenvalue_ratio, shift_to_half,
)
from backend.operators.linear_algebra import (
    conjugate_gradient, hermitian_defect, hermitian_power, power_iteration,
)
from backend.operators.source_to_solution import (
    MapMode, apply_R, assemble_dense, op_norm_diff, shift_steps, translate,
)


def _rel(a, b, scale):
    return abs(a - b) / max(scale, 1e-300)


class TestSourceToSolutionMap:
    """Test Lambda and its adjoint"""

    def test_adjoint_identity(self, shared_experiment):
        """Test <Lambda f, h> = <f, R Lambda R h> in the trapezoid pairing"""
        exp = shared_experiment
        lam = exp.lambda_map("q2")
        sources = exp.random_sources(4)
        for f, h in zip(sources[:2], sources[2:]):
            lf = lam.apply(f)
            a = boundary_inner(lf, h)
            b = boundary_inner(f, lam.apply_adjoint(h))
            assert _rel(a, b, lf.norm() * h.norm()) <= 1e-8

    def test_reversal_is_an_involution(self, shared_experiment):
        """Test R R f = f"""
        f = shared_experiment.default_source()
        assert np.array_equal(apply_R(apply_R(f)).values, f.values)

    def test_zero_source(self, shared_experiment):
        """Test Lambda 0 = 0 without a solve"""
        exp = shared_experiment
        lam = exp.lambda_map("q1")
        before = lam.forward_solves
        zero = exp.default_source() * 0
        assert lam.apply(zero).is_zero()
        assert lam.forward_solves == before

    def test_data_on_another_region(self, shared_experiment):
        """Test data not supported on omega is rejected"""
        exp = shared_experiment
        other = Region.from_shape(exp.grid, BoxShape((1.0,), (1.3,)))
        data = BoundaryData.zeros(other, exp.time_grid)
        with pytest.raises(SupportViolationError):
            exp.lambda_map("q1").apply(data)

    def test_translation_round_trip(self, shared_experiment):
        """Test tau_{-s} tau_s f = f for f supported early"""
        exp = shared_experiment
        f = exp.default_source().restrict_window(0, 30)
        shifted = translate(f, 0.4)
        assert shifted.support_steps()[0] >= 10
        assert np.array_equal(translate(shifted, -0.4).values, f.values)

    def test_shift_past_horizon(self, shared_experiment):
        """Test a shift that moves the support off the grid"""
        f = shared_experiment.default_source()
        with pytest.raises(SupportViolationError):
            shift_steps(f, 5)

    def test_norm_of_identical_maps(self, shared_experiment):
        """Test |Lambda_q - Lambda_q| = 0"""
        lam = shared_experiment.lambda_map("q1")
        estimate = op_norm_diff(lam, lam, iters=5, seed=1)
        assert estimate.value == 0.0
        assert estimate.converged
        assert estimate.mode == MapMode.MATRIX_FREE.value

    def test_norm_estimate_deterministic(self, shared_experiment):
        """Test one seed gives one value"""
        exp = shared_experiment
        m1, m2 = exp.lambda_map("q1"), exp.lambda_map("q2")
        a = op_norm_diff(m1, m2, iters=4, tol=0.0, seed=7)
        b = op_norm_diff(m1, m2, iters=4, tol=0.0, seed=7)
        assert a.value > 0
        assert a.value == b.value
        assert a.iterations == 4

    def test_dense_norm_matches_svd(self, tiny_experiment):
        """Test power iteration on the assembled matrices against their SVD"""
        exp = tiny_experiment
        m1, m2 = exp.lambda_map("q1"), exp.lambda_map("q2")
        basis = CoarseBasis(exp.omega, exp.time_grid, 0, exp.time_grid.steps, 8, 5)
        assemble_dense(m1, basis)
        assemble_dense(m2, basis)
        estimate = op_norm_diff(m1, m2, iters=3000, tol=1e-14, seed=4, use_dense=True)
        top = np.linalg.svd(m1.dense.matrix() - m2.dense.matrix(), compute_uv=False)[0]
        assert estimate.mode == MapMode.DENSE.value
        assert estimate.value == pytest.approx(top, rel=1e-6)

    def test_dense_norm_needs_one_basis(self, tiny_experiment):
        """Test the dense estimate refuses unassembled maps"""
        exp = tiny_experiment
        with pytest.raises(ValueError):
            op_norm_diff(exp.lambda_map("q1"), exp.lambda_map("q2"), use_dense=True)


class TestJ:
    """Test the time integration operator J"""

    def test_constant_source(self, shared_experiment):
        """Test Jf(s) = (T - 2s)/2 below T/2 and zero above for f = 1"""
        exp = shared_experiment
        tg = exp.time_grid
        f = exp.default_source().like(np.ones((tg.steps + 1, exp.omega.node_count), dtype=complex))
        jf = apply_J(f)
        s = tg.dt * np.arange(tg.half_steps)
        assert jf.values[:tg.half_steps, 0].real == pytest.approx((tg.horizon - 2 * s) / 2, rel=1e-12)
        assert not np.any(jf.values[tg.half_steps:])

    def test_odd_and_even_sources(self, shared_experiment):
        """Test J kills sources odd about T/2 and integrates even ones up to T/2"""
        exp = shared_experiment
        tg = exp.time_grid
        t = tg.dt * np.arange(tg.steps + 1)
        nodes = exp.omega.node_count
        odd = exp.default_source().like(np.outer(np.sin(t - tg.horizon / 2), np.ones(nodes)) + 0j)
        even = exp.default_source().like(np.outer(np.cos(t - tg.horizon / 2), np.ones(nodes)) + 0j)
        assert np.max(np.abs(apply_J(odd).values)) == pytest.approx(0.0, abs=1e-12)
        s = t[:tg.half_steps]
        quadrature = np.sin(tg.horizon / 2 - s)
        assert apply_J(even).values[:tg.half_steps, 0].real == pytest.approx(quadrature, abs=1e-3)

    def test_zero_source(self, shared_experiment):
        """Test J0 = 0"""
        assert apply_J(shared_experiment.default_source() * 0).is_zero()

    def test_odd_step_count(self, shared_experiment):
        """Test J needs an even horizon"""
        with pytest.raises(ValueError):
            apply_J(shared_experiment.default_source(), 41)


class TestConnectingOperator:
    """Test K and the data-only inner products"""

    def test_blago_identity(self, shared_experiment):
        """Test <f, K h> against (u^f(T/2), u^h(T/2)) from direct solves"""
        exp = shared_experiment
        q = exp.potential("q2")
        k = exp.connecting_operator("q2")
        half_t = exp.time_grid.horizon / 2
        sources = exp.random_sources(4, seed=11)
        for f, h in zip(sources[:2], sources[2:]):
            est = blago_inner(k, f, h)
            direct = direct_inner(q, f, h, half_t, half_t)
            assert _rel(est, direct, f.norm() * h.norm()) <= 1e-6

    def test_inner_product_at_other_times(self, shared_experiment):
        """Test (u^f(t), u^h(t')) for t != t'"""
        exp = shared_experiment
        q = exp.potential("q2")
        k = exp.connecting_operator("q2")
        dt = exp.time_grid.dt
        f, h = exp.random_sources(2, seed=5)
        for n, m in ((10, 25), (40, 8)):
            est = inner_product_at_times(k, f, h, n * dt, m * dt)
            direct = direct_inner(q, f, h, n * dt, m * dt)
            assert _rel(est, direct, f.norm() * h.norm()) <= 1e-6

    def test_time_beyond_half_horizon(self, shared_experiment):
        """Test t > T/2 is rejected"""
        exp = shared_experiment
        k = exp.connecting_operator("q1")
        f = exp.default_source()
        with pytest.raises(SupportViolationError):
            inner_product_at_times(k, f, f, 0.6 * exp.time_grid.horizon, 0.4)
        with pytest.raises(SupportViolationError):
            shift_to_half(f, k.half_steps + 1, k.half_steps)

    def test_k_is_hermitian_and_nonnegative(self, shared_experiment):
        """Test <f, K h> = conj <h, K f> and <f, K f> >= 0"""
        exp = shared_experiment
        k = exp.connecting_operator("q2")
        f, h = exp.random_sources(2, seed=3)
        kf, kh = k.apply(f), k.apply(h)
        scale = f.norm() * h.norm()
        assert _rel(k.pair(f, kh), np.conj(k.pair(h, kf)), scale) <= 1e-8
        assert k.pair(f, kf).real >= -1e-10 * f.norm() ** 2

    def test_dense_gram(self, shared_experiment):
        """Test the Gram matrix on the control basis is Hermitian positive"""
        k = shared_experiment.connecting_operator("q2", dense=True)
        assert k.dense is not None
        assert k.dense.hermitian_defect() <= 1e-8
        lam_min, lam_max = min_eigenvalue_ratio(k.dense)
        assert lam_max > 0
        assert lam_min >= -1e-6 * lam_max

    def test_odd_horizon_rejected(self, shared_experiment):
        """Test K needs an even number of steps"""
        with pytest.raises(ValueError):
            ConnectingOperator(shared_experiment.lambda_map("q1"), 41)

    def test_translated_operator(self, shared_experiment):
        """Test translation to t halves the pairing window"""
        k = shared_experiment.connecting_operator("q1")
        kt = k.translated(0.8)
        assert kt.steps == 40 and kt.half_steps == 20
        assert k.translated(k.horizon / 2) is k
        with pytest.raises(ValueError):
            k.translated(2.0)


class TestCorrelationField:
    """Test W(t, s) marched from the data against the connecting operator"""

    def test_half_horizon_matches_blago(self, shared_experiment):
        """Test W(T/2, T/2) = <f, K h>"""
        exp = shared_experiment
        lam = exp.lambda_map("q2")
        k = exp.connecting_operator("q2")
        half_t = exp.time_grid.horizon / 2
        f, h = exp.random_sources(2, seed=13)
        w = correlation_solve(f, h, lam.apply(f), lam.apply(h))
        assert _rel(w.at(half_t, half_t), blago_inner(k, f, h), f.norm() * h.norm()) <= 1e-6
        assert w.at(0.0, half_t) == 0

    def test_matches_direct_solves_off_diagonal(self, shared_experiment):
        """Test W(t, s) against (u^f(t), u^h(s)) inside the determined region"""
        exp = shared_experiment
        lam = exp.lambda_map("q2")
        dt = exp.time_grid.dt
        f, h = exp.random_sources(2, seed=17)
        w = correlation_solve(f, h, lam.apply(f), lam.apply(h))
        for n, m in ((12, 30), (35, 20)):
            direct = direct_inner(exp.potential("q2"), f, h, n * dt, m * dt)
            assert _rel(w.at(n * dt, m * dt), direct, f.norm() * h.norm()) <= 1e-6

    def test_outside_determined_region(self, shared_experiment):
        """Test W past the data-determined triangle is refused"""
        exp = shared_experiment
        lam = exp.lambda_map("q1")
        f, h = exp.random_sources(2, seed=19)
        w = correlation_solve(f, h, lam.apply(f), lam.apply(h))
        late = 0.6 * exp.time_grid.horizon
        assert not w.valid_mask()[-1, -1]
        with pytest.raises(ValueError):
            w.at(late, late)

    def test_forcing_antisymmetry(self, shared_experiment):
        """Test F_{f,h}(t, s) = -conj F_{h,f}(s, t)"""
        exp = shared_experiment
        lam = exp.lambda_map("q2")
        f, h = exp.random_sources(2, seed=23)
        lf, lh = lam.apply(f), lam.apply(h)
        forward = correlation_forcing(f, h, lf, lh)
        swapped = correlation_forcing(h, f, lh, lf)
        scale = np.max(np.abs(forward))
        assert scale > 0
        np.testing.assert_allclose(forward, -np.conj(swapped).T, rtol=0, atol=1e-12 * scale)


class TestCoarseBasis:
    """Test the tensor hat basis"""

    def test_control_basis_size(self, shared_experiment):
        """Test 9 time hats x 6 space hats on the small experiment"""
        basis = shared_experiment.control_basis()
        assert basis.n_time == 9
        assert basis.n_space == 6
        assert basis.size == 54

    def test_cap(self, shared_experiment):
        """Test bases over the cap are refused"""
        exp = shared_experiment
        with pytest.raises(ValueError):
            CoarseBasis(exp.omega, exp.time_grid, 0, exp.time_grid.steps, 1, 1)

    def test_synthesize_matches_elements(self, shared_experiment):
        """Test sum of coefficients times elements"""
        basis = shared_experiment.control_basis()
        coeffs = np.zeros(basis.size, dtype=complex)
        coeffs[[3, 17]] = [2.0, -1j]
        expected = 2.0 * basis.element(3).values - 1j * basis.element(17).values
        assert np.allclose(basis.synthesize(coeffs).values, expected)

    def test_mass_is_gram_of_elements(self, shared_experiment):
        """Test the mass matrix against pairings of elements"""
        basis = shared_experiment.control_basis()
        mass = basis.mass()
        assert boundary_inner(basis.element(5), basis.element(5)).real == pytest.approx(mass[5, 5].real)
        assert hermitian_defect(mass) == pytest.approx(0.0, abs=1e-14)


class TestLinearAlgebra:
    """Test CG and power iteration"""

    def test_cg_against_direct_solve(self):
        """Test CG on a random Hermitian positive matrix"""
        rng = np.random.default_rng(0)
        a = rng.standard_normal((30, 30)) + 1j * rng.standard_normal((30, 30))
        mat = a @ a.conj().T + 0.1 * np.eye(30)
        rhs = rng.standard_normal(30) + 1j * rng.standard_normal(30)
        result = conjugate_gradient(lambda v: mat @ v, rhs, rtol=1e-12, maxiter=1000)
        assert result.converged
        assert np.allclose(result.x, np.linalg.solve(mat, rhs), rtol=1e-8)

    def test_cg_zero_rhs(self):
        """Test the zero right-hand side"""
        result = conjugate_gradient(lambda v: v, np.zeros(4))
        assert result.iterations == 0 and not np.any(result.x)

    def test_power_iteration(self):
        """Test the top eigenvalue of a diagonal matrix"""
        diag = np.array([1.0, 2.0, 5.0])
        result = power_iteration(lambda v: diag * v, np.ones(3), lambda a, b: complex(np.vdot(b, a)), 200, 1e-12)
        assert result.converged
        assert result.value == pytest.approx(5.0, rel=1e-8)

    def test_hermitian_power(self):
        """Test inverse square root and the positive-definite check"""
        mat = np.array([[4.0, 0.0], [0.0, 9.0]])
        assert np.allclose(hermitian_power(mat, -0.5), np.diag([0.5, 1 / 3]))
        with pytest.raises(np.linalg.LinAlgError):
            hermitian_power(np.diag([1.0, -1.0]), 0.5)


class TestOperatorProperties:
    """Property tests over random data"""

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1))
    def test_reversal_involution(self, shared_experiment, seed):
        """Test R R f = f and |R f| = |f|"""
        exp = shared_experiment
        rng = np.random.default_rng(seed)
        shape = (exp.time_grid.steps + 1, exp.omega.node_count)
        f = exp.default_source().like(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        assert np.array_equal(apply_R(apply_R(f)).values, f.values)
        assert apply_R(f).norm() == pytest.approx(f.norm(), rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(shift=st.integers(0, 40), seed=st.integers(0, 1000))
    def test_translation_isometry(self, shared_experiment, shift, seed):
        """Test |tau_s f| = |f| while the support stays inside the grid"""
        exp = shared_experiment
        f = exp.random_sources(1, seed=seed)[0].restrict_window(1, 30)
        moved = shift_steps(f, shift)
        assert moved.norm() == pytest.approx(f.norm(), rel=1e-12)
        assert np.array_equal(shift_steps(moved, -shift).values, f.values)

    @settings(max_examples=5, deadline=None)
    @given(re=st.floats(-2, 2), im=st.floats(-2, 2))
    def test_inner_product_sesquilinear(self, shared_experiment, re, im):
        """Test (u^{cf}(t), u^h(t')) = c (u^f, u^h) and (u^f, u^{ch}) = conj(c) (u^f, u^h)"""
        exp = shared_experiment
        k = exp.connecting_operator("q2")
        dt = exp.time_grid.dt
        f, h = exp.random_sources(2, seed=29)
        c = complex(re, im)
        base = inner_product_at_times(k, f, h, 20 * dt, 32 * dt)
        scale = f.norm() * h.norm() * max(abs(c), 1.0)
        left = inner_product_at_times(k, c * f, h, 20 * dt, 32 * dt)
        right = inner_product_at_times(k, f, c * h, 20 * dt, 32 * dt)
        assert _rel(left, c * base, scale) <= 1e-10
        assert _rel(right, np.conj(c) * base, scale) <= 1e-10


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
