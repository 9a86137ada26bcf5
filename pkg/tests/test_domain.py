import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpconsist.domain import (
    ClosedFormField,
    CovariateSpace,
    FieldFunction,
    MonteCarlo,
    Quadrature,
    as_points,
    expect_over_Q,
    grid_points,
    interpolation_matrix,
    sample_covariates,
    truth_catalog,
    uniform_axes,
)


class TestCovariates:
    def test_iid_in_cube(self, gen):
        xs = sample_covariates(1000, "iid", CovariateSpace(2), gen)
        assert xs.points.shape == (1000, 2)
        assert np.all((xs.points >= 0) & (xs.points <= 1))

    def test_fixed_grid_midpoints(self):
        xs = sample_covariates(4, "fixed-grid", CovariateSpace(1))
        np.testing.assert_allclose(xs.points[:, 0], [0.125, 0.375, 0.625, 0.875])

    def test_fixed_grid_truncated_in_2d(self):
        xs = sample_covariates(10, "fixed-grid", CovariateSpace(2))
        assert len(xs) == 10
        assert xs.metadata == {"per_axis": 4, "truncated": 6}

    def test_unknown_scheme(self):
        with pytest.raises(ValueError, match="unknown covariate scheme"):
            sample_covariates(3, "sobol", CovariateSpace(1))

    def test_rejects_n_zero(self):
        with pytest.raises(ValueError):
            sample_covariates(0, "iid", CovariateSpace(1), 1)

    def test_concat(self, gen):
        a = sample_covariates(3, "iid", CovariateSpace(1), gen)
        b = sample_covariates(2, "iid", CovariateSpace(1), gen)
        assert len(a.concat(b)) == 5

    def test_point_outside_cube(self):
        with pytest.raises(ValueError, match="outside the unit cube"):
            as_points([[0.5], [1.2]], 1)

    def test_wrong_dimension(self):
        with pytest.raises(ValueError, match="2-dimensional"):
            as_points([0.1, 0.2, 0.3], 2)


class TestFields:
    def test_linear_interpolation_is_exact_for_linear(self):
        f = FieldFunction.from_callable(lambda x: 3 * x[:, 0] - 1, 1, 11)
        x = np.linspace(0, 1, 37)[:, None]
        np.testing.assert_allclose(f(x), 3 * x[:, 0] - 1, atol=1e-14)

    def test_bilinear_2d(self):
        f = FieldFunction.from_callable(lambda x: x[:, 0] + 2 * x[:, 1], 2, 5)
        pts = np.array([[0.3, 0.7], [0.05, 0.95]])
        np.testing.assert_allclose(f(pts), pts[:, 0] + 2 * pts[:, 1], atol=1e-14)

    def test_constant(self):
        f = FieldFunction.constant(0.7, 2)
        assert np.all(f(np.array([[0.2, 0.9], [1.0, 0.0]])) == 0.7)
        assert f.sup_norm() == 0.7

    def test_nonfinite_values_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            FieldFunction([np.array([0.0, 1.0])], [0.0, np.nan])

    def test_axes_must_span_cube(self):
        with pytest.raises(ValueError, match="span"):
            FieldFunction([np.array([0.0, 0.5])], [0.0, 1.0])

    def test_closed_form_broadcasts_scalar(self):
        f = ClosedFormField(lambda x: 2.0)
        assert f(np.array([0.1, 0.2])).tolist() == [2.0, 2.0]

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.integers(2, 30))
    def test_interpolation_matrix_matches_interp(self, xs, k):
        axes = uniform_axes(1, k)
        vals = np.sin(7 * axes[0])
        pts = np.asarray(xs)[:, None]
        W = interpolation_matrix(axes, pts)
        np.testing.assert_allclose(W @ vals, np.interp(pts[:, 0], axes[0], vals), atol=1e-12)
        np.testing.assert_allclose(W.sum(axis=1), 1.0)

    def test_grid_points_order(self):
        pts = grid_points([np.array([0.0, 1.0]), np.array([0.0, 0.5, 1.0])])
        assert pts.shape == (6, 2)
        assert pts[1].tolist() == [0.0, 0.5]


class TestTruthCatalog:
    def test_known_names(self):
        for name in ("constant(0.3)", "constant", "smooth-sin", "smooth-bump", "step-jump"):
            assert truth_catalog(name).name

    def test_unknown_name_lists_valid(self):
        with pytest.raises(ValueError, match="smooth-sin"):
            truth_catalog("wiggly")

    def test_step_jump(self):
        t = truth_catalog("step-jump")
        assert not t.representable_in_prior
        assert t.jumps == (0.5,)
        np.testing.assert_array_equal(t.eta0(np.array([0.49, 0.5, 0.51])), [-1.0, 1.0, 1.0])

    def test_smooth_sin_values(self):
        t = truth_catalog("smooth-sin")
        np.testing.assert_allclose(t.eta0(np.array([0.25, 0.75])), [1.0, -1.0], atol=1e-15)

    def test_bump_range(self):
        vals = truth_catalog("smooth-bump", 2).eta0(np.random.default_rng(0).random((500, 2)))
        assert vals.min() >= -1 and vals.max() <= 1

    def test_with_sigma(self):
        assert truth_catalog("smooth-sin").with_sigma(2.0).sigma0 == 2.0

    def test_sigma0_positive(self):
        with pytest.raises(ValueError):
            truth_catalog("smooth-sin", sigma0=0.0)


class TestExpectation:
    def test_polynomial_exact(self):
        # order-8 Gauss-Legendre integrates degree 15 exactly
        val, err = expect_over_Q(lambda x: x[:, 0] ** 15, CovariateSpace(1), Quadrature(1, 8))
        assert abs(val - 1 / 16) < 1e-15

    def test_2d_product(self):
        val, err = expect_over_Q(lambda x: np.cos(x[:, 0]) * x[:, 1] ** 2, CovariateSpace(2))
        assert abs(val - math.sin(1) / 3) < 1e-14
        assert err < 1e-12

    def test_error_estimate_bounds_true_error(self):
        g = lambda x: np.exp(np.sin(9 * x[:, 0]))  # noqa: E731
        ref, _ = expect_over_Q(g, CovariateSpace(1), Quadrature(64, 8))
        val, err = expect_over_Q(g, CovariateSpace(1), Quadrature(2, 4))
        assert abs(val - ref) <= err

    def test_monte_carlo(self, gen):
        val, se = expect_over_Q(lambda x: x[:, 0], CovariateSpace(3), MonteCarlo(20000), gen)
        assert abs(val - 0.5) < 4 * se

    def test_quadrature_refuses_d3(self):
        with pytest.raises(ValueError, match="MonteCarlo"):
            expect_over_Q(lambda x: x[:, 0], CovariateSpace(3))

    def test_nonfinite_integrand_names_location(self):
        with pytest.raises(FloatingPointError, match="x ="):
            expect_over_Q(lambda x: np.where(x[:, 0] > 0.5, np.inf, 0.0), CovariateSpace(1))

    def test_weights_sum_to_one(self):
        for d in (1, 2):
            _, w = Quadrature(3, 5).rule(d)
            assert abs(w.sum() - 1) < 1e-14
