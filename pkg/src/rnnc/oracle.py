"""Dense brute-force reference computations.

Everything here materialises full covariance matrices and is meant for
small test instances only. Nothing in the fitting path imports this module.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln

from .covariance import cov_block
from .errors import NumericalError, ValidationError
from .geometry import coord_keys

MAX_LEVELS = 4
MAX_POINTS = 500


def _guard(coords_list, limit=MAX_POINTS):
    total = sum(len(c) for c in coords_list)
    if len(coords_list) > MAX_LEVELS or total > limit:
        raise ValidationError(
            f"dense oracle limited to {MAX_LEVELS} levels and {limit} points (got {len(coords_list)}, {total})"
        )


def _cov(p, a, b):
    if p.cov is None:
        return np.zeros((len(a), len(b)))
    return cov_block(a, b, p.cov)


def dense_mean(coords_list, params, w=None):
    """Stacked mean vector, telescoping the scale products level by level.

    ``w`` optionally gives latent values ``w[i]`` on ``coords_list[i]``; a
    level-i term enters the level-t mean at a point only if that point is
    observed at level i.
    """
    _guard(coords_list)
    keys = [{k: j for j, k in enumerate(coord_keys(c))} for c in coords_list]
    out = []
    for t, coords in enumerate(coords_list):
        coords = np.atleast_2d(coords)
        mu = params[t].trend_at(coords)
        if w is not None:
            mu = mu + np.asarray(w[t], dtype=float)
        for i in range(t):
            prod = np.ones(len(coords))
            for j in range(i, t):
                # scale from level j+1 to j+2 lives on level j+2's params
                prod = prod * params[j + 1].zeta_at(coords)
            term = params[i].trend_at(coords)
            if w is not None:
                pos = [keys[i].get(k, -1) for k in coord_keys(coords)]
                wi = np.array([w[i][p] if p >= 0 else 0.0 for p in pos])
                term = term + wi
            mu = mu + prod * term
        out.append(mu)
    return np.concatenate(out)


def _level_kernels(points, params):
    """``K_t(P, P) = cov(y_t(P), y_t(P))`` for every level t."""
    kernels = []
    prev = None
    for t, p in enumerate(params):
        own = _cov(p, points, points)
        if prev is None:
            cur = own
        else:
            z = p.zeta_at(points)
            cur = np.outer(z, z) * prev + own
        kernels.append(cur)
        prev = cur
    return kernels


def dense_cov(coords_list, params, mode="generative"):
    """Block covariance of the stacked observations.

    ``generative`` derives every block from ``y_t = zeta y_{t-1} + delta_t``.
    ``as-printed`` transcribes the block formulas with their set indicators,
    i.e. the covariance of the observations given the latent effects at the
    observed reference points.
    """
    _guard(coords_list)
    if mode == "generative":
        return _generative_cov(coords_list, params)
    if mode == "as-printed":
        return _printed_cov(coords_list, params)
    raise ValidationError(f"unknown mode {mode!r}")


def _generative_cov(coords_list, params):
    coords_list = [np.atleast_2d(c) for c in coords_list]
    points = np.vstack(coords_list)
    level = np.concatenate([np.full(len(c), t) for t, c in enumerate(coords_list)])
    kernels = _level_kernels(points, params)
    n = len(points)
    lam = np.empty((n, n))
    # carry factor: prod_{j=a}^{b-1} zeta_j evaluated at the later point
    zetas = [None] + [params[t].zeta_at(points) for t in range(1, len(params))]
    for a in range(len(params)):
        rows = level == a
        for b in range(len(params)):
            cols = level == b
            lo, hi = min(a, b), max(a, b)
            block = kernels[lo][np.ix_(rows, cols)].copy()
            carry_pts = cols if b > a else rows
            carry = np.ones(carry_pts.sum())
            for j in range(lo + 1, hi + 1):
                carry = carry * zetas[j][carry_pts]
            block = block * (carry[None, :] if b > a else carry[:, None])
            lam[np.ix_(rows, cols)] = block
    for t, p in enumerate(params):
        idx = np.flatnonzero(level == t)
        lam[idx, idx] += p.tau2
    return lam


def _printed_cov(coords_list, params):
    coords_list = [np.atleast_2d(c) for c in coords_list]
    key_sets = [set(coord_keys(c)) for c in coords_list]
    T = len(coords_list)
    sizes = [len(c) for c in coords_list]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    lam = np.zeros((offs[-1], offs[-1]))

    def outside(i, ka, kb):
        s = key_sets[i]
        return np.array([[ka_ not in s and kb_ not in s for kb_ in kb] for ka_ in ka], dtype=float)

    for t in range(T):
        for u in range(T):
            a, b = coords_list[t], coords_list[u]
            ka, kb = coord_keys(a), coord_keys(b)
            lo = min(t, u)
            block = np.zeros((len(a), len(b)))
            for i in range(lo):
                prod = np.ones((len(a), len(b)))
                for j in range(i, lo):
                    prod = prod * np.outer(params[j + 1].zeta_at(a), params[j + 1].zeta_at(b))
                block += outside(i, ka, kb) * prod * _cov(params[i], a, b)
            if t == u:
                block += params[t].tau2 * np.eye(len(a))
            else:
                block += outside(lo, ka, kb) * _cov(params[lo], a, b)
            lam[offs[t] : offs[t + 1], offs[u] : offs[u + 1]] = block
    return lam


def _chol(mat):
    try:
        return cho_factor(mat, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError("dense matrix is not positive definite") from None


def dense_loglik(resid, cov):
    resid = np.asarray(resid, dtype=float)
    if len(resid) > MAX_POINTS:
        raise ValidationError("dense oracle limited to 500 points")
    c = _chol(cov)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    return float(-0.5 * (len(resid) * np.log(2 * np.pi) + logdet + resid @ cho_solve(c, resid)))


def dense_krige(ref_coords, resid, targets, cov_params, tau2, latent=False):
    """Simple-kriging mean and variance of the latent field from all data."""
    ref_coords = np.atleast_2d(ref_coords)
    targets = np.atleast_2d(targets)
    gram = cov_block(ref_coords, ref_coords, cov_params)
    if not latent:
        gram = gram + tau2 * np.eye(len(ref_coords))
    cross = cov_block(ref_coords, targets, cov_params)
    c = _chol(gram)
    sol = cho_solve(c, cross)
    mean = sol.T @ np.asarray(resid, dtype=float)
    var = cov_params.sigma2 - np.sum(cross * sol, axis=0)
    return mean, var


def dense_gls(X, r, cov):
    """Generalised least squares ``(X^T C^-1 X)^-1 X^T C^-1 r``."""
    X = np.atleast_2d(X)
    c = _chol(cov)
    cx = cho_solve(c, X)
    return np.linalg.solve(X.T @ cx, cx.T @ r)


def dense_normal_update(X, r, cov, prior_mean, prior_cov):
    """Posterior mean and covariance of ``theta`` for ``r ~ N(X theta, cov)``."""
    X = np.atleast_2d(X)
    c = _chol(cov)
    cx = cho_solve(c, X)
    pinv = np.linalg.inv(prior_cov)
    post_cov = np.linalg.inv(pinv + X.T @ cx)
    post_mean = post_cov @ (pinv @ prior_mean + cx.T @ r)
    return post_mean, post_cov


def dense_conjugate(X, z, sigma, prior_mean, prior_cov, a, b):
    """Normal-inverse-gamma posterior for ``z ~ N(X theta, s2 Sigma)``.

    ``theta ~ N(prior_mean, s2 prior_cov)``, ``s2 ~ IG(a, b)``. Returns the
    posterior mean of theta, its scale matrix, and ``(a_star, b_star)``.
    """
    X = np.atleast_2d(X)
    c = _chol(sigma)
    cx = cho_solve(c, X)
    pinv = np.linalg.inv(prior_cov)
    scale = np.linalg.inv(pinv + X.T @ cx)
    theta = scale @ (pinv @ prior_mean + cx.T @ z)
    resid = z - X @ theta
    dev = theta - prior_mean
    a_star = a + len(z) / 2.0
    b_star = b + 0.5 * (resid @ cho_solve(c, resid) + dev @ pinv @ dev)
    return theta, scale, a_star, b_star


def sigma2_posterior_mean_quadrature(X, z, sigma, prior_mean, prior_cov, a, b):
    """Posterior mean of s2 by 1-d integration of the marginal posterior.

    Integrating theta out leaves ``z ~ N(X mu, s2 (Sigma + X V X^T))``; that
    likelihood times the IG(a, b) density is integrated numerically.
    """
    X = np.atleast_2d(X)
    marg = sigma + X @ prior_cov @ X.T
    c = _chol(marg)
    r = z - X @ prior_mean
    q = float(r @ cho_solve(c, r))
    n = len(z)

    def log_post(s2):
        return -(a + 1 + n / 2.0) * np.log(s2) - (b + 0.5 * q) / s2

    # normalise around the mode for a well-scaled integrand
    mode = (b + 0.5 * q) / (a + 1 + n / 2.0)
    ref = log_post(mode)
    f0 = lambda u: np.exp(log_post(mode * u) - ref)
    f1 = lambda u: u * f0(u)
    opts = dict(limit=500, epsabs=0.0, epsrel=1e-12)
    norm0 = integrate.quad(f0, 0, 1, **opts)[0] + integrate.quad(f0, 1, np.inf, **opts)[0]
    norm1 = integrate.quad(f1, 0, 1, **opts)[0] + integrate.quad(f1, 1, np.inf, **opts)[0]
    return mode * norm1 / norm0


def ig_logpdf(x, a, b):
    return a * np.log(b) - gammaln(a) - (a + 1) * np.log(x) - b / x


def dense_recursive_predict(levels, targets):
    """Recursive predictor with every level conditioned on all of its data.

    Mirrors the recursion with dense kriging (no neighbour truncation),
    recomputing ``yhat_{t-1}(S_t)`` itself rather than trusting the fits.
    """
    targets = np.atleast_2d(targets)
    _guard([lv.data.locs.coords for lv in levels] + [targets])

    def level_pred(t, pts, shortcut):
        fit = levels[t - 1]
        S = fit.data.locs.coords
        mean_t = fit.trend(pts) @ fit.beta
        var_prev = 0.0
        resid = fit.data.z - fit.data.H @ fit.beta
        if t > 1:
            ym_pts, yv_pts = level_pred(t - 1, pts, True)
            ym_S, _ = level_pred(t - 1, S, True)
            resid = resid - (fit.data.G @ fit.gamma) * ym_S
            zeta = fit.scale(pts) @ fit.gamma
            mean_t = mean_t + zeta * ym_pts
            var_prev = zeta**2 * yv_pts
        km, kv = dense_krige(S, resid, pts, fit.cov, fit.tau2)
        mean = mean_t + km
        var = kv + var_prev
        if shortcut:
            keys = {k: i for i, k in enumerate(coord_keys(S))}
            for r, k in enumerate(coord_keys(pts)):
                if k in keys:
                    mean[r] = fit.data.z[keys[k]]
                    var[r] = fit.tau2
        return mean, var

    return level_pred(len(levels), targets, False)


def dense_cokrige_predict(coords_list, z_list, params, targets):
    """Full co-kriging of ``y_T`` at ``targets`` from every level's data."""
    targets = np.atleast_2d(targets)
    _guard(list(coords_list) + [targets])
    coords_list = [np.atleast_2d(c) for c in coords_list]
    lam = _generative_cov(coords_list, params)
    mu = dense_mean(coords_list, params)
    T = len(params)
    points = np.vstack(coords_list + [targets])
    kernels = _level_kernels(points, params)
    n_obs = sum(len(c) for c in coords_list)
    level = np.concatenate([np.full(len(c), t) for t, c in enumerate(coords_list)])
    tgt = np.arange(n_obs, len(points))
    cross = np.empty((n_obs, len(targets)))
    for a in range(T):
        rows = np.flatnonzero(level == a)
        carry = np.ones(len(targets))
        for j in range(a + 1, T):
            carry = carry * params[j].zeta_at(targets)
        cross[rows] = kernels[a][np.ix_(rows, tgt)] * carry[None, :]
    prior_mean = dense_mean([targets] * 1, [params[0]]) if T == 1 else _top_mean(params, targets)
    c = _chol(lam)
    sol = cho_solve(c, cross)
    mean = prior_mean + sol.T @ (np.concatenate(z_list) - mu)
    var = np.diag(kernels[-1])[tgt] - np.sum(cross * sol, axis=0)
    return mean, var


def _top_mean(params, targets):
    mu = params[0].trend_at(targets)
    for p in params[1:]:
        mu = p.zeta_at(targets) * mu + p.trend_at(targets)
    return mu


class DenseNoisyCovariance:
    """Dense ``C + tau2 I`` with the same interface as the sparse version."""

    def __init__(self, coords, cov_params, tau2):
        coords = np.atleast_2d(coords)
        if len(coords) > MAX_POINTS:
            raise ValidationError("dense oracle limited to 500 points")
        mat = cov_block(coords, coords, cov_params) + tau2 * np.eye(len(coords))
        self.n = len(coords)
        self._c = _chol(mat)

    def solve(self, v):
        return cho_solve(self._c, np.asarray(v, dtype=float))

    def logdet(self):
        return float(2.0 * np.sum(np.log(np.diag(self._c[0]))))

    def quadform(self, r):
        r = np.asarray(r, dtype=float)
        return float(r @ self.solve(r))

    def loglik(self, resid):
        return -0.5 * (self.n * np.log(2 * np.pi) + self.logdet() + self.quadform(resid))


class DenseBackend:
    """Likelihood backend for the sampler that never approximates."""

    def __init__(self, coords):
        self.coords = np.atleast_2d(coords)

    def __call__(self, sigma2, decay, tau2):
        from .covariance import CovarianceParams

        return DenseNoisyCovariance(self.coords, CovarianceParams(sigma2, decay), tau2)
