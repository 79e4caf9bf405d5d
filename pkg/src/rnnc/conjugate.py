"""MCMC-free conjugate fitting of the recursive model.

For fixed decay ``kappa`` and relative nugget ``tau2_rel`` the level-t
likelihood is ``N(z | W gamma + H beta, sigma2 * Sigma)`` with
``Sigma = R + tau2_rel I`` (``R`` the NNGP correlation matrix) and
``W = g(S_t) * yhat_{t-1}(S_t)``. Normal priors scaled by ``sigma2`` and an
inverse-gamma prior on ``sigma2`` make ``(gamma, beta, sigma2)`` conjugate;
``(kappa, tau2_rel)`` is chosen on a grid by K-fold cross-validated RMSPE.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceParams
from .errors import NumericalError, ValidationError
from .geometry import LocationSet, build_neighbor_index, order_locations, query_neighbors
from .nngp import NeighborGeometry, NoisyCovariance, compute_factors, neighbor_geometry
from .priors import InverseGammaPrior, NormalPrior
from .recursive import ImputedField, LevelFit, impute_knots, knot_set, yhat_at

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidateGrid:
    """Candidate ``(decay, tau2_rel)`` pairs."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((_as_decay(d), float(t)) for d, t in self.entries)
        if not entries:
            raise ValidationError("candidate grid is empty")
        for d, t in entries:
            if not (np.all(np.asarray(d) > 0) and t > 0):
                raise ValidationError(f"grid entries must be positive, got {(d, t)}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def log_spaced(cls, decay=(0.1, 25.0), n_decay=20, tau2_rel=(5e-4, 0.4), n_tau=10):
        decays = np.geomspace(decay[0], decay[1], n_decay)
        taus = np.geomspace(tau2_rel[0], tau2_rel[1], n_tau)
        return cls(tuple((float(d), float(t)) for d in decays for t in taus))

    def __len__(self):
        return len(self.entries)


def _as_decay(d):
    arr = np.atleast_1d(np.asarray(d, dtype=float))
    return float(arr[0]) if arr.size == 1 else tuple(float(v) for v in arr)


@dataclass(frozen=True)
class ConjugatePriors:
    """``beta ~ N(mu, sigma2 V)``, ``gamma ~ N(mu, sigma2 V)``, ``sigma2 ~ IG(a, b)``."""

    beta: NormalPrior
    sigma2: InverseGammaPrior = InverseGammaPrior(2.0, 1.0)
    gamma: NormalPrior | None = None


def _spd_inverse(mat, what):
    mat = 0.5 * (mat + mat.T)
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(mat)
        raise NumericalError(f"{what} is not positive definite (condition number {cond:.3g})") from None
    inv = np.linalg.inv(chol)
    return inv.T @ inv


def posterior_gamma(W, z, H, beta, solve, prior: NormalPrior):
    """``(mu_tilde, V_tilde)`` of gamma given beta; posterior mean is ``V_tilde @ mu_tilde``."""
    W = np.atleast_2d(W)
    prec = prior.precision
    if len(z) == 0:
        return prec @ prior.mean, prior.cov.copy()
    sw = solve(W)
    v_tilde = _spd_inverse(prec + W.T @ sw, "gamma posterior precision")
    mu_tilde = prec @ prior.mean + sw.T @ (z - H @ beta)
    return mu_tilde, v_tilde


def posterior_beta(H, z, solve, prior: NormalPrior, W=None, gamma_prior: NormalPrior | None = None):
    """``(mu_tilde, V_tilde)`` of beta with gamma integrated out when ``W`` is given."""
    prec = prior.precision
    if len(z) == 0:
        return prec @ prior.mean, prior.cov.copy()
    sh = solve(H)
    mu_tilde = prec @ prior.mean + sh.T @ z
    info = prec + H.T @ sh
    if W is not None:
        gprec = gamma_prior.precision
        sw = solve(W)
        v_gamma = _spd_inverse(gprec + W.T @ sw, "gamma posterior precision")
        cross = sw.T @ H
        mu_tilde = mu_tilde - cross.T @ v_gamma @ (gprec @ gamma_prior.mean + sw.T @ z)
        info = info - cross.T @ v_gamma @ cross
    return mu_tilde, _spd_inverse(info, "beta posterior precision")


def posterior_sigma2(z, solve, priors: ConjugatePriors, mu_beta, v_beta, W=None):
    """Inverse-gamma posterior ``(a_star, b_star)`` of sigma2."""
    a, b = priors.sigma2.a, priors.sigma2.b
    n = len(z)
    if n == 0:
        return a, b
    bp = priors.beta
    quad = z @ solve(z) + bp.mean @ bp.precision @ bp.mean - mu_beta @ v_beta @ mu_beta
    if W is not None:
        gp = priors.gamma
        sw = solve(W)
        v_gamma = _spd_inverse(gp.precision + W.T @ sw, "gamma posterior precision")
        m_gamma = gp.precision @ gp.mean + sw.T @ z
        quad += gp.mean @ gp.precision @ gp.mean - m_gamma @ v_gamma @ m_gamma
    return a + n / 2.0, b + 0.5 * quad


@dataclass
class LevelPosterior:
    decay: float | tuple
    tau2_rel: float
    a_star: float
    b_star: float
    mu_beta: np.ndarray
    v_beta: np.ndarray
    mu_gamma: np.ndarray | None = None
    v_gamma: np.ndarray | None = None
    cv_table: list = field(default_factory=list)

    @property
    def sigma2(self):
        if self.a_star <= 1:
            raise ValidationError("posterior shape a* <= 1: posterior mean of sigma2 undefined")
        return self.b_star / (self.a_star - 1.0)

    @property
    def tau2(self):
        return self.tau2_rel * self.sigma2

    @property
    def beta(self):
        return self.v_beta @ self.mu_beta

    @property
    def gamma(self):
        if self.mu_gamma is None:
            return None
        return self.v_gamma @ self.mu_gamma


def conjugate_posterior(H, z, W, solve, priors: ConjugatePriors, decay, tau2_rel):
    """Joint conjugate update for one level at fixed ``(decay, tau2_rel)``."""
    H = np.atleast_2d(H)
    if W is not None and priors.gamma is None:
        raise ValidationError("a scale design needs a gamma prior")
    mu_b, v_b = posterior_beta(H, z, solve, priors.beta, W, priors.gamma)
    a_star, b_star = posterior_sigma2(z, solve, priors, mu_b, v_b, W)
    post = LevelPosterior(decay, tau2_rel, a_star, b_star, mu_b, v_b)
    if W is not None:
        beta_hat = v_b @ mu_b
        post.mu_gamma, post.v_gamma = posterior_gamma(W, z, H, beta_hat, solve, priors.gamma)
    return post


class LevelSystem:
    """One level's locations in NNGP order with cached neighbour lags."""

    def __init__(self, coords, m, ordering="coord-sort", anisotropic=False):
        locs = LocationSet.from_array(coords)
        self.order = order_locations(locs, ordering)
        self.coords = locs.coords[self.order]
        self.nbr = build_neighbor_index(self.coords, m)
        self.geometry = neighbor_geometry(self.coords, self.nbr, anisotropic)

    def sigma(self, decay, tau2_rel):
        """``R + tau2_rel I`` as a :class:`NoisyCovariance` (unit process variance)."""
        factors = compute_factors(self.coords, self.nbr, CovarianceParams(1.0, decay), self.geometry)
        return NoisyCovariance(factors, tau2_rel)


def _fold_ids(n, K, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, K)]


class _Fold:
    def __init__(self, coords, z, H, W, test, m, ordering, anisotropic):
        train = np.setdiff1d(np.arange(len(z)), test)
        self.system = LevelSystem(coords[train], m, ordering, anisotropic)
        o = train[self.system.order]
        self.z, self.H = z[o], H[o]
        self.W = None if W is None else W[o]
        self.test_z, self.test_H = z[test], H[test]
        self.test_W = None if W is None else W[test]
        idx, _ = query_neighbors(LocationSet.from_array(self.system.coords), coords[test], m)
        self.test_geometry = NeighborGeometry(coords[test], self.system.coords, idx, anisotropic)

    def mse(self, priors, decay, tau2_rel):
        sigma = self.system.sigma(decay, tau2_rel)
        post = conjugate_posterior(self.H, self.z, self.W, sigma.solve, priors, decay, tau2_rel)
        beta, gamma = post.beta, post.gamma
        fitted = self.H @ beta
        pred = self.test_H @ beta
        if self.W is not None:
            fitted = fitted + self.W @ gamma
            pred = pred + self.test_W @ gamma
        resid = self.z - fitted
        weights, _ = self.test_geometry.weights(decay, tau2_rel)
        g = self.test_geometry
        pred = pred + np.sum(weights * np.where(g.valid, resid[np.where(g.valid, g.idx, 0)], 0.0), axis=1)
        return float(np.mean((self.test_z - pred) ** 2))


def _select(grid_entries, rmspe):
    def key(i):
        d, t = grid_entries[i]
        return (rmspe[i], t, tuple(np.atleast_1d(d)))

    return min(range(len(grid_entries)), key=key)


def kfold_select(coords, z, H, W, grid: CandidateGrid, priors, K=5, seed=0, m=10,
                 ordering="coord-sort", anisotropic=False, threads=1):
    """Choose ``(decay, tau2_rel)`` by K-fold cross-validated RMSPE.

    Returns the selected entry and a table of rows
    ``(decay, tau2_rel, rmspe, fold_mse...)`` with
    ``rmspe = sqrt(mean over folds of the fold MSE)``.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    z = np.asarray(z, dtype=float)
    n = len(z)
    if K < 2 or K > n:
        raise ValidationError(f"need 2 <= K <= n (K={K}, n={n})")
    folds = [_Fold(coords, z, H, W, test, m, ordering, anisotropic) for test in _fold_ids(n, K, seed)]

    def run(entry):
        decay, tau2_rel = entry
        return [f.mse(priors, decay, tau2_rel) for f in folds]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            mses = list(pool.map(run, grid.entries))
    else:
        mses = [run(e) for e in grid.entries]
    rmspe = [float(np.sqrt(np.mean(row))) for row in mses]
    table = [(d, t, r, *row) for (d, t), r, row in zip(grid.entries, rmspe, mses)]
    best = _select(grid.entries, rmspe)
    return grid.entries[best], table


def fit_level(coords, z, H, W, priors, decay, tau2_rel, m=10, ordering="coord-sort", anisotropic=False):
    """Conjugate posterior on a full level at fixed hyperparameters."""
    system = LevelSystem(coords, m, ordering, anisotropic)
    o = system.order
    sigma = system.sigma(decay, tau2_rel)
    return conjugate_posterior(H[o], z[o], None if W is None else W[o], sigma.solve, priors, decay, tau2_rel)


@dataclass
class ConjugateFit:
    levels: list
    posteriors: list
    knots: list

    def predict(self, targets, upto=None, include_nugget=False):
        from .recursive import predict_recursive

        return predict_recursive(self.levels, targets, upto=upto, include_nugget=include_nugget)


def fit_all(datasets, grids, priors, K=5, m=10, seed=0, ordering="coord-sort", anisotropic=False,
            threads=1, trend=None, scale=None):
    """Fit levels 1..T in sequence (grid selection, refit, knot imputation).

    ``grids`` and ``priors`` are either single objects shared by every level
    or per-level lists.
    """
    from .recursive import Basis

    trend = trend or Basis()
    scale = scale or Basis()
    T = len(datasets)
    grids = grids if isinstance(grids, (list, tuple)) else [grids] * T
    priors = priors if isinstance(priors, (list, tuple)) else [priors] * T
    all_coords = [ds.locs.coords for ds in datasets]
    levels, posteriors, knots = [], [], []
    for t, ds in enumerate(datasets, start=1):
        coords, z, H = ds.locs.coords, ds.z, ds.H
        yprev, W = None, None
        if t > 1:
            yprev = yhat_at(levels, t - 1, coords).mean
            W = ds.G * yprev[:, None]
        level_priors = priors[t - 1]
        if t == 1 and level_priors.gamma is not None:
            level_priors = ConjugatePriors(level_priors.beta, level_priors.sigma2, None)
        if t > 1 and level_priors.gamma is None:
            level_priors = ConjugatePriors(
                level_priors.beta, level_priors.sigma2, NormalPrior.isotropic(ds.G.shape[1])
            )
        entry, table = kfold_select(coords, z, H, W, grids[t - 1], level_priors, K,
                                    seed=[seed, t], m=m, ordering=ordering,
                                    anisotropic=anisotropic, threads=threads)
        post = fit_level(coords, z, H, W, level_priors, *entry, m=m, ordering=ordering,
                         anisotropic=anisotropic)
        post.cv_table = table
        log.info("level %d: decay=%s tau2_rel=%.4g sigma2=%.4g", t, entry[0], entry[1], post.sigma2)
        fit = LevelFit(ds, CovarianceParams(post.sigma2, entry[0]), post.tau2, post.beta,
                       post.gamma, yprev, m, trend, scale)
        levels.append(fit)
        posteriors.append(post)
        kn = knot_set(all_coords, t)
        prevfield = yhat_at(levels, t - 1, kn) if t > 1 and len(kn) else None
        if prevfield is not None:
            prevfield = ImputedField(kn, prevfield.mean, prevfield.var)
        knots.append(impute_knots(fit, kn, prevfield) if len(kn) else ImputedField(kn, [], []))
    return ConjugateFit(levels, posteriors, knots)
