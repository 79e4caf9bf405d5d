import numpy as np
import pytest

from rnnc.covariance import CovarianceParams
from rnnc.errors import ValidationError
from rnnc.geometry import canonical_coords
from rnnc.nngp import conditional_at
from rnnc.oracle import dense_cokrige_predict, dense_recursive_predict
from rnnc.recursive import (
    Basis,
    FidelityDataset,
    ImputedField,
    LevelFit,
    LevelParams,
    impute_knots,
    level_mean,
    nesting_diagnosis,
    predict_recursive,
    yhat_at,
)


def two_level(nested=True, tau2=(0.1, 0.05), gamma=1.2, n=(40, 20), seed=0, m=100):
    rng = np.random.default_rng(seed)
    c1 = canonical_coords(rng.uniform(size=(n[0], 2)))
    c2 = c1[: n[1]] if nested else canonical_coords(rng.uniform(size=(n[1], 2)))
    z1 = 3.0 + rng.normal(size=n[0])
    z2 = gamma * z1[: n[1]] + 0.5 + 0.3 * rng.normal(size=n[1]) if nested else rng.normal(size=n[1])
    d1 = FidelityDataset.build(1, c1, z1)
    d2 = FidelityDataset.build(2, c2, z2)
    f1 = LevelFit(d1, CovarianceParams(1.0, 4.0), tau2[0], [3.0], m=m)
    y2 = yhat_at([f1], 1, d2.locs.coords).mean
    f2 = LevelFit(d2, CovarianceParams(0.4, 7.0), tau2[1], [0.5], [gamma], y2, m=m)
    return [f1, f2], rng.uniform(size=(6, 2))


class TestLevelMean:
    def test_level_one(self):
        ds = FidelityDataset.build(1, [[0, 0], [1, 0], [0, 1]], [1.0, 2.0, 0.0], Basis("linear"))
        np.testing.assert_allclose(level_mean(ds, [1.0, 2.0, 3.0]), [1.0, 3.0, 4.0])

    def test_upper_level(self):
        ds = FidelityDataset.build(2, [[0, 0], [1, 0]], [1.0, 2.0])
        np.testing.assert_allclose(level_mean(ds, [0.5], [2.0], [1.0, -1.0]), [2.5, -1.5])

    def test_upper_level_needs_yprev(self):
        ds = FidelityDataset.build(2, [[0, 0]], [1.0])
        with pytest.raises(ValidationError):
            level_mean(ds, [0.5], [2.0])

    def test_level_params(self):
        p = LevelParams(beta=(1.0, 2.0, 0.0), cov=None, gamma=(1.0, 0.0, 1.0), trend=Basis("linear"),
                        scale=Basis("linear"))
        np.testing.assert_allclose(p.trend_at([[0.5, 3.0]]), [2.0])
        np.testing.assert_allclose(p.zeta_at([[0.5, 3.0]]), [4.0])


class TestDatasetValidation:
    def test_rank_deficient(self):
        with pytest.raises(ValidationError, match="rank deficient"):
            FidelityDataset.build(1, [[0, 0], [0, 1]], [1.0, 2.0], Basis("linear"))

    def test_imputed_negative_variance(self):
        with pytest.raises(ValidationError):
            ImputedField(np.zeros((1, 2)), [0.0], [-1.0])

    def test_unknown_basis(self):
        with pytest.raises(ValidationError):
            Basis("quadratic")


class TestPrediction:
    def test_single_level_equals_conditional(self):
        levels, targets = two_level(m=8)
        f1 = levels[0]
        pred = predict_recursive(levels[:1], targets)
        cond = conditional_at(targets, f1.data.locs, f1.resid, f1.cov, f1.tau2, 8)
        np.testing.assert_array_equal(pred.mean, 3.0 + cond.mean)
        np.testing.assert_array_equal(pred.var, cond.var)

    @pytest.mark.parametrize("nested", [True, False])
    def test_matches_dense_recursion(self, nested):
        levels, targets = two_level(nested=nested)
        targets = np.vstack([targets, levels[0].data.locs.coords[:3]])
        pred = predict_recursive(levels, targets)
        mean, var = dense_recursive_predict(levels, targets)
        np.testing.assert_allclose(pred.mean, mean, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(pred.var, var, rtol=1e-6, atol=1e-6)

    def test_gamma_zero_decouples(self):
        levels, targets = two_level(nested=False, gamma=0.0, m=6)
        d2 = levels[1].data
        solo = LevelFit(FidelityDataset.build(1, d2.locs.coords, d2.z), levels[1].cov, levels[1].tau2, [0.5], m=6)
        a = predict_recursive(levels, targets)
        b = predict_recursive([solo], targets)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.var, b.var)

    def test_shortcut_limit(self):
        # with a vanishing nugget, kriging at an observed site returns the observation
        levels, _ = two_level(tau2=(1e-8, 0.05), m=10)
        f1 = levels[0]
        sites = f1.data.locs.coords[:5]
        plain = predict_recursive(levels[:1], sites)
        short = yhat_at(levels, 1, sites)
        np.testing.assert_allclose(plain.mean, short.mean, atol=1e-4)
        np.testing.assert_allclose(short.var, 1e-8)

    def test_include_nugget(self):
        levels, targets = two_level(m=8)
        a = predict_recursive(levels, targets)
        b = predict_recursive(levels, targets, include_nugget=True)
        np.testing.assert_allclose(b.var, a.var + levels[1].tau2)
        lo, hi = b.interval()
        np.testing.assert_allclose((hi - lo) / 2, 1.959963984540054 * b.sd)

    def test_bad_upto_and_dimension(self):
        levels, targets = two_level(m=5)
        with pytest.raises(ValidationError):
            predict_recursive(levels, targets, upto=3)
        with pytest.raises(ValidationError):
            predict_recursive(levels, np.zeros((2, 3)))

    def test_nested_close_to_full_cokriging(self):
        # for a nested design the recursion is an exact rewrite of co-kriging
        tau2 = (1e-6, 1e-6)
        levels, targets = two_level(tau2=tau2, n=(30, 12), seed=3)
        params = [
            LevelParams((3.0,), levels[0].cov, tau2[0]),
            LevelParams((0.5,), levels[1].cov, tau2[1], (1.2,)),
        ]
        coords = [lv.data.locs.coords for lv in levels]
        mean, var = dense_cokrige_predict(coords, [lv.data.z for lv in levels], params, targets)
        pred = predict_recursive(levels, targets)
        np.testing.assert_allclose(pred.mean, mean, atol=1e-3)
        np.testing.assert_allclose(pred.var, var, atol=1e-3)


class TestImputeKnots:
    def test_hits_take_observation(self):
        levels, targets = two_level(m=8)
        f1 = levels[0]
        knots = np.vstack([f1.data.locs.coords[:2], targets])
        field = impute_knots(f1, knots)
        np.testing.assert_array_equal(field.mean[:2], f1.data.z[:2])
        np.testing.assert_array_equal(field.var[:2], [f1.tau2] * 2)
        np.testing.assert_allclose(field.mean[2:], predict_recursive([f1], targets).mean)


class TestNestingDiagnosis:
    def test_labels(self):
        a = np.array([[0, 0], [1, 1], [2, 2]], dtype=float)
        assert nesting_diagnosis([a]) == ("single level", [])
        assert nesting_diagnosis([a, a[:2]]) == ("fully nested", [2])
        assert nesting_diagnosis([a, a + 10]) == ("non-nested", [0])
        assert nesting_diagnosis([a, np.vstack([a[:1], a[1:] + 10])]) == ("partially nested", [1])
