import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpconsist.domain import FieldFunction, uniform_axes
from gpconsist.models import Theta
from gpconsist.prior import (
    CholeskyError,
    DuplicatePointsWarning,
    KernelSpec,
    LogNormalPrior,
    PriorSpec,
    SieveSpec,
    cholesky_with_jitter,
    estimate_sieve_complement_mass,
    fit_log_decay_slope,
    kernel_matrix,
    sample_gp_path,
    sample_gp_paths,
    sample_gp_values,
    sieve_membership,
    sup_and_grad_norms,
    wilson_interval,
)

PRIOR = PriorSpec(KernelSpec())


class TestKernel:
    def test_values(self):
        k = KernelSpec(lengthscale=0.2, amplitude=1.0)
        a = np.array([[0.0], [0.2]])
        K = k(a, a)
        assert K[0, 0] == 1.0
        assert abs(K[0, 1] - math.exp(-0.5)) < 1e-15

    def test_amplitude_scales(self):
        a = np.array([[0.1], [0.4]])
        np.testing.assert_allclose(KernelSpec(amplitude=2.0)(a, a), 4 * KernelSpec()(a, a))

    def test_constant_family(self):
        K = KernelSpec(family="constant", amplitude=0.5)(np.zeros((3, 1)), np.ones((2, 1)))
        assert np.all(K == 0.25)

    @pytest.mark.parametrize("kw", [{"lengthscale": 0}, {"amplitude": -1}, {"jitter": -1e-9}, {"family": "matern"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            KernelSpec(**kw)

    def test_kernel_matrix_adds_jitter(self):
        K = kernel_matrix(KernelSpec(jitter=1e-6), np.array([0.0, 1.0]))
        assert K[0, 0] == 1 + 1e-6

    def test_duplicate_points_warn(self):
        with pytest.warns(DuplicatePointsWarning):
            kernel_matrix(KernelSpec(), np.array([0.3, 0.3]))

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=15, unique=True))
    def test_psd(self, xs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DuplicatePointsWarning)
            K = kernel_matrix(KernelSpec(), np.asarray(xs))
        np.testing.assert_allclose(K, K.T)
        assert np.linalg.eigvalsh(K).min() > -1e-8


class TestCholesky:
    def test_well_conditioned(self):
        K = np.eye(3) * 2
        L, j = cholesky_with_jitter(K, 1e-9)
        np.testing.assert_allclose(L @ L.T, K)
        assert j == 1e-9

    def test_escalates_on_singular(self):
        v = np.ones((4, 1))
        K = v @ v.T  # rank one, carries no jitter yet
        L, j = cholesky_with_jitter(K, 0.0)
        assert j > 0
        np.testing.assert_allclose(L @ L.T, K + j * np.eye(4), atol=1e-12)

    def test_dense_grid_factorises(self):
        # 401 SE nodes at lengthscale 0.2 are numerically singular without jitter
        x = np.linspace(0, 1, 401)[:, None]
        K = KernelSpec()(x, x) + 1e-9 * np.eye(401)
        L, _ = cholesky_with_jitter(K, 1e-9)
        assert np.all(np.isfinite(L))

    def test_failure_reports_condition(self):
        with pytest.raises(CholeskyError, match="condition number"):
            cholesky_with_jitter(-np.eye(2), 1e-9)


class TestSampling:
    def test_covariance(self, gen):
        pts = np.array([[0.0], [0.1], [0.5]])
        draws = sample_gp_values(PRIOR, pts, 40000, gen)
        emp = np.cov(draws.T)
        np.testing.assert_allclose(emp, KernelSpec()(pts, pts), atol=0.03)

    def test_path_is_field(self, gen):
        f = sample_gp_path(PRIOR, 101, gen)
        assert isinstance(f, FieldFunction) and f.values.shape == (101,)

    def test_paths_2d_shape(self, gen):
        out = sample_gp_paths(PRIOR, uniform_axes(2, 7), 3, gen)
        assert out.shape == (3, 7, 7)

    def test_derivative_scale(self, gen):
        # sd of f' for the SE kernel is amplitude / lengthscale = 5
        vals = sample_gp_paths(PRIOR, uniform_axes(1, 401), 4000, gen)
        d = (vals[:, 201] - vals[:, 199]) / (2 / 400)
        assert abs(d.std() - 5.0) < 0.2

    def test_lognormal_prior(self, gen):
        p = LogNormalPrior(0.0, 1.0)
        s = p.sample(gen, 20000)
        assert abs(np.log(s).mean()) < 0.03
        assert abs(p.logpdf_log(0.0) + 0.5 * math.log(2 * math.pi)) < 1e-15


class TestSieve:
    def test_quartic_threshold(self):
        s = SieveSpec(beta=1.0)
        assert s.threshold(16) == pytest.approx(math.e**2)

    def test_square_root_threshold(self):
        assert SieveSpec(beta=4.0, exponent_form="square-root").log_threshold(4) == pytest.approx(4.0)

    @pytest.mark.parametrize("kw", [{"beta": 0}, {"exponent_form": "cube-root"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SieveSpec(**kw)

    def test_membership(self):
        flat = Theta(FieldFunction.constant(1.0))
        assert sieve_membership(flat, 1, SieveSpec())
        steep = Theta(FieldFunction.from_callable(lambda x: 10 * x[:, 0], 1, 11))
        sup, grads = sup_and_grad_norms(steep.eta)
        assert sup == 10 and grads[0] == pytest.approx(10)
        assert not sieve_membership(steep, 1, SieveSpec())
        assert sieve_membership(steep, 30, SieveSpec())

    def test_sigma_band(self):
        s = SieveSpec(includes_sigma_band=True)
        assert not sieve_membership(Theta(FieldFunction.constant(0.0), 0.01), 1, s)
        assert sieve_membership(Theta(FieldFunction.constant(0.0), 1.0), 1, s)


class TestComplementMass:
    def test_requires_draws(self, gen):
        with pytest.raises(ValueError, match="1000"):
            estimate_sieve_complement_mass(PRIOR, SieveSpec(), 1, 500, gen)

    def test_non_increasing_and_shared_draws(self, contract):
        out = estimate_sieve_complement_mass(PRIOR, SieveSpec(), [1, 5, 20, 80], 2000, contract, resolution=101)
        probs = [p for p, _ in out]
        assert all(b <= a for a, b in zip(probs, probs[1:]))
        for p, (lo, hi) in out:
            assert lo <= p <= hi

    def test_scalar_n(self, contract):
        p, (lo, hi) = estimate_sieve_complement_mass(PRIOR, SieveSpec(), 3, 1000, contract, resolution=101)
        assert 0 <= lo <= p <= hi <= 1

    def test_slope_of_exponential(self):
        ns = np.arange(1, 8)
        assert fit_log_decay_slope(ns, np.exp(-1.3 * ns)) == pytest.approx(-1.3)

    def test_slope_needs_two_points(self):
        assert math.isnan(fit_log_decay_slope([1, 2], [0.9, 0.8]))


class TestWilson:
    @pytest.mark.parametrize("k,n", [(0, 100), (7, 50), (50, 50), (1234, 10000)])
    def test_against_formula(self, k, n):
        z = 1.959963984540054
        p = k / n
        c = (p + z * z / (2 * n)) / (1 + z * z / n)
        h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
        lo, hi = wilson_interval(k, n)
        assert lo == pytest.approx(max(c - h, 0), abs=1e-12)
        assert hi == pytest.approx(min(c + h, 1), abs=1e-12)


class TestComplementMassBeyondDeskRange:
    def test_decays_to_zero_at_larger_n(self, contract):
        # at n <= 10 the derivative part of the sieve dominates; mass only clears around n ~ 100
        out = estimate_sieve_complement_mass(PRIOR, SieveSpec(), [10, 50, 150], 2000, contract)
        probs = [p for p, _ in out]
        assert probs[0] > 0.5
        assert probs[1] < probs[0]
        assert probs[2] == 0.0 and out[2][1][1] < 2e-3
