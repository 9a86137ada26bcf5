import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gpconsist.domain import CovariateSample, CovariateSpace, Quadrature, sample_covariates, truth_catalog
from gpconsist.kl import SetSpec
from gpconsist.models import Binary, Dataset, GaussianError, LaplaceError, Poisson, simulate_responses
from gpconsist.posterior import (
    INSUFFICIENT,
    UNDERFLOW,
    McmcConfig,
    PredictiveDistribution,
    concentration_rate_diagnostic,
    effective_sample_size,
    hellinger_tv,
    posterior_predictive,
    posterior_set_probability,
    run_mcmc,
    true_predictive,
)
from gpconsist.prior import KernelSpec, LogNormalPrior, PriorSpec

SMALL = McmcConfig(iterations=3000, burn_in=500, thin=2, quadrature=Quadrature(4, 4))


def empty(dim=1):
    return Dataset(CovariateSample(np.empty((0, dim)), "iid"), np.empty(0))


class TestEss:
    def test_iid(self, gen):
        ess = effective_sample_size(gen.standard_normal(5000))
        assert 4000 < ess < 6000

    def test_ar1(self, gen):
        rho, n = 0.9, 50000
        e = gen.standard_normal(n)
        x = np.empty(n)
        x[0] = e[0]
        for i in range(1, n):
            x[i] = rho * x[i - 1] + e[i]
        want = n * (1 - rho) / (1 + rho)
        assert effective_sample_size(x) == pytest.approx(want, rel=0.2)

    def test_constant_chain(self):
        assert effective_sample_size(np.zeros(100)) == 100


class TestConfig:
    def test_n_draws(self):
        assert McmcConfig(100, 20, 4).n_draws == 20

    @pytest.mark.parametrize("kw", [{"burn_in": 100, "iterations": 100}, {"thin": 0}, {"sigma_step": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            McmcConfig(**kw)


class TestSampler:
    def test_prior_recovered_without_data(self, contract):
        cfg = McmcConfig(iterations=6000, burn_in=0, thin=1, quadrature=Quadrature(1, 2), extra_sites=((0.5,),))
        s = run_mcmc(Binary(), empty(), PriorSpec(KernelSpec()), cfg, contract)
        v = s.values[:, -1]
        assert abs(v.mean()) < 0.1
        assert abs(v.var() - 1.0) < 0.1

    def test_conjugate_gaussian(self, contract):
        # sigma pinned by a very tight prior; the field posterior is then Gaussian
        sigma = 0.5
        prior = PriorSpec(KernelSpec(), LogNormalPrior(math.log(sigma), 1e-9))
        x = np.array([[0.1], [0.3], [0.35], [0.8], [0.9]])
        y = np.array([0.4, 1.1, 0.9, -0.7, -1.2])
        data = Dataset(CovariateSample(x, "iid"), y)
        site = np.array([[0.6]])
        cfg = McmcConfig(iterations=20000, burn_in=1000, thin=2, sigma_step=1e-12, quadrature=Quadrature(1, 2),
                         extra_sites=((0.6,),))
        s = run_mcmc(GaussianError(), data, prior, cfg, contract)
        k = prior.kernel
        A = k(x, x) + (sigma**2 + k.jitter) * np.eye(5)
        kx = k(site, x)[0]
        mean = kx @ np.linalg.solve(A, y)
        var = k(site, site)[0, 0] - kx @ np.linalg.solve(A, kx)
        draws = s.values[:, -1]
        se = math.sqrt(var / effective_sample_size(draws))
        assert abs(draws.mean() - mean) < 4 * se
        assert draws.var() == pytest.approx(var, rel=0.15)
        np.testing.assert_allclose(s.sigmas, sigma, rtol=1e-6)

    def test_sigma_posterior_moves(self, contract):
        truth = truth_catalog("smooth-sin", sigma0=0.3)
        gen = contract.child("data").generator()
        data = simulate_responses(GaussianError(), truth, sample_covariates(200, "iid", CovariateSpace(1), gen), gen)
        s = run_mcmc(GaussianError(), data, PriorSpec(KernelSpec(), LogNormalPrior()), SMALL, contract)
        assert abs(np.median(s.sigmas) - 0.3) < 0.06
        assert 0.05 < s.stats["sigma_acceptance"] < 0.95

    def test_reproducible(self, contract):
        truth = truth_catalog("smooth-sin")
        gen = contract.child("data").generator()
        data = simulate_responses(Binary(), truth, sample_covariates(30, "iid", CovariateSpace(1), gen), gen)
        cfg = McmcConfig(500, 100, 1, quadrature=Quadrature(2, 2))
        a = run_mcmc(Binary(), data, PriorSpec(KernelSpec()), cfg, contract.child("m"))
        b = run_mcmc(Binary(), data, PriorSpec(KernelSpec()), cfg, contract.child("m"))
        np.testing.assert_array_equal(a.values, b.values)

    def test_sigma_model_needs_prior(self, contract):
        with pytest.raises(ValueError, match="sigma prior"):
            run_mcmc(LaplaceError(), empty(), PriorSpec(KernelSpec()), SMALL, contract)

    def test_site_field_lookup(self, contract):
        s = run_mcmc(Binary(), empty(), PriorSpec(KernelSpec()), McmcConfig(50, 0, 1, quadrature=Quadrature(1, 2)),
                     contract)
        th = s.theta(0)
        assert th.eta(s.quad_nodes).shape == (2,)
        with pytest.raises(KeyError, match="posterior_predictive"):
            th.eta(np.array([[0.123456]]))

    def test_concentrates_on_truth(self, contract):
        truth = truth_catalog("smooth-sin")
        gen = contract.child("data").generator()
        full = simulate_responses(Binary(), truth, sample_covariates(400, "iid", CovariateSpace(1), gen), gen)
        prior = PriorSpec(KernelSpec())
        small = run_mcmc(Binary(), full.head(25), prior, SMALL, contract.child(25))
        large = run_mcmc(Binary(), full, prior, SMALL, contract.child(400))
        assert large.h_values(truth).mean() < small.h_values(truth).mean()


class TestSetProbability:
    def test_values(self, contract):
        truth = truth_catalog("smooth-sin")
        s = run_mcmc(Binary(), empty(), PriorSpec(KernelSpec()), SMALL, contract)
        h = s.h_values(truth)
        sp = posterior_set_probability(s, SetSpec.parse("h-above(0.1)"), 0.0, truth)
        assert sp.prob == pytest.approx(np.mean(h >= 0.1))
        assert sp.mcse == pytest.approx(math.sqrt(sp.prob * (1 - sp.prob) / sp.ess))
        comp = posterior_set_probability(s, SetSpec.parse("not:h-above(0.1)"), 0.0, truth)
        assert comp.prob == pytest.approx(1 - sp.prob)
        p, se = sp
        assert p == sp.prob and se == sp.mcse

    def test_zero_is_unresolved(self, contract):
        truth = truth_catalog("smooth-sin")
        s = run_mcmc(Binary(), empty(), PriorSpec(KernelSpec()), SMALL, contract)
        sp = posterior_set_probability(s, SetSpec.parse("h-above(50)"), 0.0, truth)
        assert sp.prob == 0 and sp.mcse == 0 and not sp.resolved


class TestRateDiagnostic:
    def test_exact_exponential_passes(self):
        ns = [50, 200, 800]
        d = concentration_rate_diagnostic(np.exp(-0.2 * np.array(ns) / 20), ns, 0.02)
        assert d.verdict == "PASS" and d.slope == pytest.approx(-0.01)

    def test_underflow_is_explicit(self):
        d = concentration_rate_diagnostic([0.01, 0.0, 0.0], [50, 200, 800], 0.2)
        assert d.verdict == UNDERFLOW and d.slope is None

    def test_below_floor(self):
        d = concentration_rate_diagnostic([0.1, 0.01, 1e-4], [1, 2, 3], 0.2, floors=[5e-4] * 3)
        assert d.verdict == UNDERFLOW

    def test_insufficient(self):
        assert concentration_rate_diagnostic([0.1, 0.05], [1, 2], 0.2).verdict == INSUFFICIENT

    def test_outside_band_reported(self):
        d = concentration_rate_diagnostic([0.5, 0.4, 0.3], [10, 20, 30], 1.0)
        assert d.verdict == "REPORT"
        assert d.band == (-2.0, -0.5)


class TestDistances:
    def test_bernoulli_frozen(self):
        # oracle: sqrt(0.5*0.25) + sqrt(0.5*0.75) subtracted from one
        f = PredictiveDistribution("bernoulli", np.array([0.5, 0.5]), (0.25,))
        g = PredictiveDistribution("bernoulli", np.array([0.75, 0.25]), (0.25,))
        h2, tv = hellinger_tv(f, g)
        assert h2 == pytest.approx(0.034074, abs=5e-7)
        assert h2 == pytest.approx(1 - math.sqrt(0.125) - math.sqrt(0.375), abs=1e-15)
        assert tv == pytest.approx(0.25, abs=1e-15)

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.lists(st.floats(0, 1), min_size=2, max_size=12))
    def test_identity_chain(self, a, b):
        a, b = np.asarray(a), np.asarray(b)
        if a.sum() <= 0 or b.sum() <= 0:
            return
        f = PredictiveDistribution("count", a / a.sum(), (0.5,))
        g = PredictiveDistribution("count", b / b.sum(), (0.5,))
        h2, tv = hellinger_tv(f, g)
        assert h2 <= tv + 1e-10
        assert tv <= math.sqrt(2 * h2) + 1e-10

    def test_kind_mismatch(self):
        f = PredictiveDistribution("bernoulli", np.array([0.5, 0.5]), (0.5,))
        g = PredictiveDistribution("count", np.array([1.0]), (0.5,))
        with pytest.raises(ValueError):
            hellinger_tv(f, g)

    def test_density_grids_must_match(self):
        a = PredictiveDistribution("density", np.full(4, 0.25), (0.5,), np.array([0.0, 1.0, 2.0]))
        b = PredictiveDistribution("density", np.full(4, 0.25), (0.5,), np.array([0.0, 1.0, 3.0]))
        with pytest.raises(ValueError, match="same grid"):
            hellinger_tv(a, b)


class TestPredictive:
    def test_binary_prior_predictive(self, contract):
        s = run_mcmc(Binary(), empty(), PriorSpec(KernelSpec()), McmcConfig(8000, 0, 1, quadrature=Quadrature(1, 2)),
                     contract)
        pred = posterior_predictive(s, Binary(), 0.3)
        # by symmetry of the prior and the link the prior predictive is 1/2
        assert pred.p == pytest.approx(0.5, abs=0.03)
        assert pred.probs.sum() == pytest.approx(1.0)

    def test_poisson_pmf_normalised(self, contract):
        s = run_mcmc(Poisson(), empty(), PriorSpec(KernelSpec()), McmcConfig(300, 0, 1, quadrature=Quadrature(1, 2)),
                     contract)
        pred = posterior_predictive(s, Poisson(), 0.3)
        assert pred.kind == "count"
        assert pred.probs.sum() == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("model", [GaussianError(), LaplaceError()])
    def test_density_cells(self, model, contract):
        prior = PriorSpec(KernelSpec(), LogNormalPrior())
        s = run_mcmc(model, empty(), prior, McmcConfig(300, 0, 1, quadrature=Quadrature(1, 2)), contract)
        pred = posterior_predictive(s, model, 0.7)
        assert pred.probs.sum() == pytest.approx(1.0, abs=1e-12)
        truth = truth_catalog("smooth-sin", sigma0=1.0)
        best = true_predictive(model, truth, 0.7, like=pred)
        np.testing.assert_array_equal(best.edges, pred.edges)
        h2, tv = hellinger_tv(pred, best)
        assert 0 <= h2 <= tv <= math.sqrt(2 * h2) + 1e-10

    def test_true_predictive_gaussian_density(self):
        truth = truth_catalog("constant(0.5)", sigma0=2.0)
        best = true_predictive(GaussianError(), truth, 0.1)
        mids = 0.5 * (best.edges[1:] + best.edges[:-1])
        np.testing.assert_allclose(best.density(), stats.norm.pdf(mids, 0.5, 2.0), rtol=1e-3)

    def test_true_predictive_binary(self):
        best = true_predictive(Binary(), truth_catalog("step-jump"), 0.25)
        assert best.p == pytest.approx(1 / (1 + math.e))
