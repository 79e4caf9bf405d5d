from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from rnnc.covariance import CovarianceParams, cov_block
from rnnc.errors import ValidationError
from rnnc.geometry import canonical_coords
from rnnc.nngp import conditional_at
from rnnc.oracle import DenseBackend, DenseNoisyCovariance, dense_normal_update
from rnnc.priors import NormalPrior
from rnnc.recursive import FidelityDataset, LevelParams
from rnnc.sampler import (
    ChainConfig,
    LevelModel,
    LevelState,
    NNGPBackend,
    mh_log_ratio,
    mh_theta_tau,
    normal_conditional,
    run_chain,
    sample_knots,
)
from rnnc.simulate import SimSpec, simulate


def small_sim(n=(40, 25), design="non-nested-uniform", seed=0):
    params = (
        LevelParams((2.0,), CovarianceParams(1.0, 5.0), 0.1),
        LevelParams((0.5,), CovarianceParams(0.3, 5.0), 0.05, (1.0,)),
    )
    return simulate(SimSpec(n, params, design, boxes=(), seed=seed))


def level_one(n=30, seed=0):
    rng = np.random.default_rng(seed)
    coords = canonical_coords(rng.uniform(size=(n, 2)))
    z = 1.0 + rng.normal(size=n)
    return FidelityDataset.build(1, coords, z)


class TestNormalConditional:
    def test_matches_dense_update(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(size=(25, 2))
        X = np.column_stack([np.ones(25), pts[:, 1]])
        r = rng.normal(size=25)
        prior = NormalPrior([0.2, -0.1], [[2.0, 0.3], [0.3, 1.0]])
        cov = DenseNoisyCovariance(pts, CovarianceParams(1.2, 3.0), 0.2)
        mean, post_cov, chol = normal_conditional(X, r, cov, prior)
        full = cov_block(pts, pts, CovarianceParams(1.2, 3.0)) + 0.2 * np.eye(25)
        ref_mean, ref_cov = dense_normal_update(X, r, full, prior.mean, prior.cov)
        np.testing.assert_allclose(mean, ref_mean, rtol=1e-8)
        np.testing.assert_allclose(post_cov, ref_cov, rtol=1e-8)
        np.testing.assert_allclose(np.linalg.inv(chol @ chol.T), ref_cov, rtol=1e-8)


class TestMetropolis:
    def setup_method(self):
        ds = level_one()
        self.cfg = ChainConfig(iterations=10, burn_in=0)
        self.model = LevelModel(ds, np.zeros((0, 2)), m=5)
        self.state = LevelState(np.array([1.0]), 0.8, 4.0, 0.2)
        self.resid = self.model.z - 1.0
        self.cov = self.model.backend(0.8, 4.0, 0.2)
        self.state.loglik = self.cov.loglik(self.resid)

    def test_cached_ratio_matches_fresh(self):
        prop = np.array([0.9, 3.5, 0.15])
        log_r, _, ll_prop = mh_log_ratio(self.model, self.state, self.resid, prop, self.cfg)
        fresh_cur = NNGPBackend(self.model.coords, 5)(0.8, 4.0, 0.2).loglik(self.resid)
        fresh_prop = NNGPBackend(self.model.coords, 5)(*prop).loglik(self.resid)
        prior = lambda th: (
            self.cfg.sigma2_prior.logpdf(th[0]) + self.cfg.tau2_prior.logpdf(th[2]) + np.sum(np.log(th))
        )
        expected = fresh_prop + prior(prop) - fresh_cur - prior(self.state.theta())
        np.testing.assert_allclose(log_r, expected, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(ll_prop, fresh_prop, rtol=1e-12)

    def test_zero_step_always_accepted(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            _, _, acc, prob = mh_theta_tau(self.model, self.state, self.cov, self.resid, self.cfg, rng, step=np.zeros(3))
            assert acc and prob == 1.0

    def test_decay_above_bound_rejected(self):
        step = np.array([0.0, np.log(26.0 / 4.0), 0.0])
        new, cov, acc, prob = mh_theta_tau(self.model, self.state, self.cov, self.resid, self.cfg,
                                           np.random.default_rng(0), step=step)
        assert not acc and prob == 0.0
        assert new is self.state and cov is self.cov

    def test_flat_likelihood_samples_prior(self):
        # with a constant likelihood the chain must reproduce the priors, Jacobian included
        class Flat:
            def loglik(self, resid):
                return 0.0

        model = LevelModel(level_one(), np.zeros((0, 2)), m=5, backend=lambda coords: (lambda *a: Flat()))
        cfg = ChainConfig(iterations=60_000, burn_in=2_000, scales=(0.8, 0.8, 0.8))
        state = replace(self.state, loglik=0.0)
        rng = np.random.default_rng(3)
        cov = Flat()
        draws = []
        for j in range(cfg.iterations):
            state, cov, _, _ = mh_theta_tau(model, state, cov, self.resid, cfg, rng)
            if j >= cfg.burn_in:
                draws.append(state.theta())
        draws = np.array(draws)
        ig = stats.invgamma(2.0, scale=1.0)
        np.testing.assert_allclose(np.median(draws[:, 0]), ig.median(), rtol=0.1)
        np.testing.assert_allclose(np.median(draws[:, 2]), ig.median(), rtol=0.1)
        np.testing.assert_allclose(np.mean(draws[:, 1]), 12.5, rtol=0.1)


class TestKnots:
    def test_draw_moments(self):
        sim = small_sim()
        ds = sim.datasets()[0]
        knots = np.vstack([sim.coords[1][:5], ds.locs.coords[:2]])
        model = LevelModel(ds, knots, m=6)
        state = LevelState(np.array([2.0]), 1.0, 5.0, 0.1)
        rng = np.random.default_rng(0)
        draws = np.array([sample_knots(model, state, None, rng) for _ in range(20_000)])
        cond = conditional_at(knots[:5], model.coords, model.z - 2.0, CovarianceParams(1.0, 5.0), 0.1, 6)
        np.testing.assert_allclose(draws[:, :5].mean(axis=0), 2.0 + cond.mean, atol=0.03)
        np.testing.assert_allclose(draws[:, :5].var(axis=0), cond.var, rtol=0.05, atol=1e-3)
        # knots observed at this level take the observation
        np.testing.assert_array_equal(draws[:, 5:], np.broadcast_to(ds.z[:2], (20_000, 2)))


class TestChain:
    cfg = ChainConfig(iterations=150, burn_in=50, m=5, seed=11)

    def test_zero_post_burn_in(self):
        with pytest.raises(ValidationError):
            ChainConfig(iterations=10, burn_in=10)

    def test_reproducible(self):
        sim = small_sim()
        a = run_chain(sim.datasets(), self.cfg)
        b = run_chain(sim.datasets(), self.cfg)
        for da, db in zip(a.draws, b.draws):
            for k in da:
                np.testing.assert_array_equal(da[k], db[k])
        c = run_chain(sim.datasets(), replace(self.cfg, seed=12))
        assert not np.array_equal(a.draws[0]["sigma2"], c.draws[0]["sigma2"])

    def test_levels_factorise(self):
        sim = small_sim()
        both = run_chain(sim.datasets(), self.cfg)
        first = run_chain(sim.datasets()[:1], self.cfg)
        for k in first.draws[0]:
            np.testing.assert_array_equal(both.draws[0][k], first.draws[0][k])

    def test_outputs(self):
        sim = small_sim()
        res = run_chain(sim.datasets(), self.cfg)
        assert res.names(2) == ["beta_1", "gamma_1", "sigma2", "decay", "tau2"]
        assert all(len(v) == 100 for v in res.draws[1].values())
        assert res.knot_draws[0].shape == (150, len(sim.coords[1]))
        assert res.knot_draws[1].shape == (150, 0)
        lo, hi = res.interval(1, "beta_1")
        assert lo <= res.mean(1, "beta_1") <= hi
        assert len(res.summary()) == 4 + 5
        assert 0 < res.accept_rate[0] < 1

    def test_thinning(self):
        res = run_chain(small_sim().datasets()[:1], replace(self.cfg, thin=7))
        assert len(res.draws[0]["sigma2"]) == len(range(0, 100, 7))

    def test_dense_backend_agrees_with_full_history(self):
        sim = small_sim(n=(25, 15))
        cfg = replace(self.cfg, m=24, iterations=200)
        nngp = run_chain(sim.datasets(), cfg)
        dense = run_chain(sim.datasets(), cfg, backend=DenseBackend)
        for t in (0, 1):
            for k in nngp.draws[t]:
                np.testing.assert_allclose(nngp.draws[t][k], dense.draws[t][k], rtol=1e-5, atol=1e-6)

    def test_nested_design_uses_observations(self):
        sim = small_sim(n=(36, 16), design="nested-grid")
        res = run_chain(sim.datasets(), self.cfg)
        assert res.knot_draws[0].shape[1] == 0
        assert np.all(np.isfinite(res.draws[1]["gamma_1"]))

    def test_mislabelled_level(self):
        ds = level_one()
        with pytest.raises(ValidationError):
            run_chain([ds, ds], self.cfg)
