import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnnc.covariance import CovarianceParams, NoiseParams, cov_block, kernel
from rnnc.errors import ValidationError


class TestKernel:
    def test_zero_distance(self):
        assert kernel((1, 2), (1, 2), CovarianceParams(3.0, 5.0)) == 3.0

    def test_symmetry(self):
        p = CovarianceParams(2.0, 0.7)
        assert kernel((0, 0), (3, 4), p) == kernel((3, 4), (0, 0), p)

    def test_closed_form_value(self):
        # sigma2 = 4, decay 10, distance 0.1 -> 4 exp(-1)
        val = kernel((0.0, 0.0), (0.06, 0.08), CovarianceParams(4.0, 10.0))
        np.testing.assert_allclose(val, 4 * np.exp(-1.0), rtol=1e-14)

    def test_anisotropic(self):
        p = CovarianceParams(1.5, (2.0, 0.5))
        np.testing.assert_allclose(kernel((0, 0), (1, -2), p), 1.5 * np.exp(-(2.0 + 1.0)))
        assert p.anisotropic
        np.testing.assert_allclose(p.range, [0.5, 2.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            kernel((0, 0), (1, 1, 1), CovarianceParams(1.0, 1.0))
        with pytest.raises(ValidationError):
            kernel((0, 0, 0), (1, 1, 1), CovarianceParams(1.0, (1.0, 2.0)))

    @pytest.mark.parametrize("sigma2,decay", [(0.0, 1.0), (1.0, 0.0), (1.0, (1.0, -1.0))])
    def test_invalid_params(self, sigma2, decay):
        with pytest.raises(ValidationError):
            CovarianceParams(sigma2, decay)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-5, 5), min_size=2, max_size=2),
        st.lists(st.floats(-5, 5), min_size=2, max_size=2),
        st.floats(-3, 3),
    )
    def test_stationarity(self, a, b, shift):
        p = CovarianceParams(1.3, (0.4, 1.1))
        a, b = np.array(a), np.array(b)
        np.testing.assert_allclose(kernel(a, b, p), kernel(a + shift, b + shift, p), rtol=1e-12)

    def test_monotone_decay(self):
        p = CovarianceParams(1.0, (0.8, 2.0))
        lags = np.linspace(0, 3, 20)
        for j in range(2):
            vals = []
            for h in lags:
                s = np.zeros(2)
                s[j] = h
                vals.append(kernel(np.zeros(2), s, p))
            assert np.all(np.diff(vals) < 0)


class TestCovBlock:
    def test_single_point(self):
        np.testing.assert_array_equal(cov_block([[1, 1]], [[1, 1]], CovarianceParams(2.5, 1.0)), [[2.5]])

    def test_three_points_positive_definite(self):
        pts = np.array([[0, 0], [0.3, 0.1], [1.0, 0.7]])
        c = cov_block(pts, pts, CovarianceParams(1.0, 2.0))
        np.testing.assert_array_equal(c, c.T)
        assert np.linalg.eigvalsh(c).min() > 0

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 12), seed=st.integers(0, 10_000), iso=st.booleans())
    def test_positive_definite(self, n, seed, iso):
        rng = np.random.default_rng(seed)
        pts = np.unique(rng.uniform(size=(n, 2)), axis=0)
        decay = rng.uniform(0.1, 20) if iso else tuple(rng.uniform(0.1, 20, 2))
        p = CovarianceParams(rng.uniform(0.1, 5), decay)
        c = cov_block(pts, pts, p)
        np.testing.assert_array_equal(c, c.T)
        assert np.linalg.eigvalsh(c).min() > -1e-10 * p.sigma2


class TestNoiseParams:
    def test_relative_absolute(self):
        a = NoiseParams.from_relative(0.1, 4.0)
        b = NoiseParams.from_absolute(0.4, 4.0)
        np.testing.assert_allclose([a.tau2, a.tau2_rel], [b.tau2, b.tau2_rel])

    def test_negative(self):
        with pytest.raises(ValidationError):
            NoiseParams(-1.0, 0.1)
