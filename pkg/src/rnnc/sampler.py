"""Collapsed MCMC for the recursive model.

With the latent discrepancies integrated out, level t contributes

    z_t ~ N(zeta(S_t) * yhat_{t-1}(S_t) + H beta_t, C_t + tau_t^2 I),

so each sweep needs one NNGP likelihood per Metropolis proposal plus two
conjugate normal draws. Levels are run one after another: the chain for
level t at iteration j conditions on level t-1's knot draws from iteration j.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import CovarianceParams
from .errors import ChainDivergence, NumericalError, RNNCError, ValidationError
from .geometry import LocationSet, build_neighbor_index, coord_keys, knot_set, order_locations, query_neighbors
from .nngp import NeighborGeometry, NoisyCovariance, compute_factors, neighbor_geometry
from .priors import InverseGammaPrior, NormalPrior
from .recursive import Basis

log = logging.getLogger(__name__)

__all__ = [
    "ChainConfig",
    "LevelState",
    "NNGPBackend",
    "LevelModel",
    "ChainResult",
    "normal_conditional",
    "gibbs_beta",
    "gibbs_gamma",
    "mh_theta_tau",
    "sample_knots",
    "run_chain",
]

BLOCKS = {"mh": 0, "beta": 1, "gamma": 2, "knots": 3}


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 10_000
    burn_in: int = 3_000
    thin: int = 1
    scales: tuple = (0.1, 0.1, 0.1)  # log-scale steps for (sigma2, decay, tau2)
    adapt: bool = True
    target_accept: float = 0.30
    seed: int = 0
    kappa_max: float = 25.0
    sigma2_prior: InverseGammaPrior = InverseGammaPrior(2.0, 1.0)
    tau2_prior: InverseGammaPrior = InverseGammaPrior(2.0, 1.0)
    beta_var: float = 1000.0
    gamma_var: float = 1000.0
    init_decay: float = 5.0
    m: int = 10
    ordering: str = "coord-sort"

    def __post_init__(self):
        if self.iterations < 1 or self.thin < 1 or self.burn_in < 0:
            raise ValidationError("iterations and thin must be positive, burn_in non-negative")
        if self.burn_in >= self.iterations:
            raise ValidationError("no post-burn-in draws: burn_in must be smaller than iterations")
        if len(self.scales) != 3 or not all(s > 0 for s in self.scales):
            raise ValidationError("need three positive proposal scales")
        if not 0 < self.init_decay < self.kappa_max:
            raise ValidationError("initial decay must lie inside (0, kappa_max)")


@dataclass
class LevelState:
    beta: np.ndarray
    sigma2: float
    decay: float
    tau2: float
    gamma: np.ndarray | None = None
    knots: np.ndarray = field(default_factory=lambda: np.zeros(0))
    loglik: float = np.nan

    def theta(self):
        return np.array([self.sigma2, self.decay, self.tau2])

    def dump(self):
        return {
            "beta": self.beta.tolist(),
            "gamma": None if self.gamma is None else self.gamma.tolist(),
            "sigma2": self.sigma2,
            "decay": self.decay,
            "tau2": self.tau2,
            "loglik": self.loglik,
        }


def _stream(seed, level, block):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, level, BLOCKS[block]])))


class NNGPBackend:
    """Builds ``C + tau2 I`` on fixed ordered coordinates for any parameters."""

    def __init__(self, coords, m):
        self.coords = np.atleast_2d(coords)
        self.nbr = build_neighbor_index(self.coords, m)
        self.geometry = neighbor_geometry(self.coords, self.nbr)

    def __call__(self, sigma2, decay, tau2):
        f = compute_factors(self.coords, self.nbr, CovarianceParams(sigma2, decay), self.geometry)
        return NoisyCovariance(f, tau2)


def normal_conditional(X, r, cov, prior: NormalPrior):
    """Moments of ``theta | r`` for ``r ~ N(X theta, Lambda)``, ``theta ~ prior``.

    ``cov`` supplies ``solve`` for ``Lambda``.
    """
    X = np.atleast_2d(X)
    prec = prior.precision
    lx = np.asarray(cov.solve(X))
    post_prec = prec + X.T @ lx
    post_prec = 0.5 * (post_prec + post_prec.T)
    try:
        chol = np.linalg.cholesky(post_prec)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(post_prec)
        raise NumericalError(f"conditional precision not positive definite (condition number {cond:.3g})") from None
    post_cov = np.linalg.inv(post_prec)
    mean = post_cov @ (prec @ prior.mean + lx.T @ r)
    return mean, post_cov, chol


def _draw_normal(mean, chol_prec, rng):
    # theta = mean + L^{-T} e has covariance (L L^T)^{-1}
    e = rng.standard_normal(len(mean))
    return mean + np.linalg.solve(chol_prec.T, e)


def gibbs_beta(model, state, yprev, cov, prior, rng):
    """Draw ``beta_t`` given everything else (scale term held fixed)."""
    r = model.z - model.scale_term(state.gamma, yprev)
    mean, _, chol = normal_conditional(model.H, r, cov, prior)
    return _draw_normal(mean, chol, rng)


def gibbs_gamma(model, state, yprev, cov, prior, rng):
    """Draw ``gamma_{t-1}`` with design ``g * yhat_{t-1}``."""
    W = model.G * yprev[:, None]
    r = model.z - model.H @ state.beta
    mean, _, chol = normal_conditional(W, r, cov, prior)
    return _draw_normal(mean, chol, rng)


def _log_prior(theta, cfg):
    sigma2, decay, tau2 = theta
    if not (0 < decay < cfg.kappa_max) or sigma2 <= 0 or tau2 <= 0:
        return -np.inf
    return float(cfg.sigma2_prior.logpdf(sigma2) + cfg.tau2_prior.logpdf(tau2) - np.log(cfg.kappa_max))


def mh_log_ratio(model, state, resid, proposal, cfg):
    """Log acceptance ratio and the proposed covariance (None if rejected outright).

    The target is taken on the log scale, so each side carries the Jacobian
    ``log sigma2 + log decay + log tau2``.
    """
    cur = state.theta()
    lp_prop = _log_prior(proposal, cfg)
    if not np.isfinite(lp_prop):
        return -np.inf, None, np.nan
    try:
        cov_prop = model.backend(*proposal)
        ll_prop = cov_prop.loglik(resid)
    except RNNCError:
        return -np.inf, None, np.nan
    if not np.isfinite(ll_prop):
        return -np.inf, None, np.nan
    ll_cur = state.loglik
    log_r = (ll_prop + lp_prop + np.sum(np.log(proposal))) - (ll_cur + _log_prior(cur, cfg) + np.sum(np.log(cur)))
    return float(log_r), cov_prop, ll_prop


def mh_theta_tau(model, state, cov_cur, resid, cfg, rng, scale_mult=1.0, step=None):
    """One joint random-walk update of ``(sigma2, decay, tau2)`` on the log scale.

    Returns ``(state, cov, accepted, accept_prob)``. ``step`` overrides the
    random proposal increment (in log units).
    """
    if step is None:
        step = scale_mult * np.asarray(cfg.scales) * rng.standard_normal(3)
    u = np.log(rng.uniform())
    proposal = state.theta() * np.exp(step)
    log_r, cov_prop, ll_prop = mh_log_ratio(model, state, resid, proposal, cfg)
    prob = float(min(1.0, np.exp(log_r))) if np.isfinite(log_r) else 0.0
    if u < log_r:
        new = replace(state, sigma2=float(proposal[0]), decay=float(proposal[1]), tau2=float(proposal[2]), loglik=ll_prop)
        return new, cov_prop, True, prob
    return state, cov_cur, False, prob


def sample_knots(model, state, yprev_knots, rng):
    """Independent draws of ``yhat_t`` at the level's knots from the level-t conditional."""
    if model.n_knots == 0:
        return np.zeros(0)
    resid = model.z - model.scale_term(state.gamma, model.yprev_at_data) - model.H @ state.beta
    coef, explained = model.knot_geometry.weights(state.decay, state.tau2 / state.sigma2)
    valid = model.knot_geometry.valid
    gathered = np.where(valid, resid[np.where(valid, model.knot_geometry.idx, 0)], 0.0)
    mean = model.knot_H @ state.beta + np.sum(coef * gathered, axis=1)
    if model.level > 1:
        mean = mean + (model.knot_G @ state.gamma) * yprev_knots
    var = np.maximum(state.sigma2 * (1.0 - explained), 0.0)
    draw = mean + np.sqrt(var) * rng.standard_normal(len(mean))
    hit = model.knot_hits >= 0
    draw[hit] = model.z[model.knot_hits[hit]]
    return draw


class LevelModel:
    """Level data in NNGP order plus the maps the sampler needs.

    ``prev_source`` says where ``yhat_{t-1}`` at each data point comes from:
    ``(kind, index)`` with kind 0 an observation of level t-1 (the nested
    shortcut) and kind 1 a knot draw of level t-1.
    """

    def __init__(self, ds, knots, prev=None, m=10, ordering="coord-sort", backend=None,
                 trend=Basis(), scale=Basis()):
        self.level = ds.level
        order = order_locations(ds.locs, ordering)
        self.order = order
        self.coords = ds.locs.coords[order]
        self.z = ds.z[order]
        self.H = ds.H[order]
        self.G = None if ds.G is None else ds.G[order]
        self.backend = backend(self.coords) if backend is not None else NNGPBackend(self.coords, m)
        self.knot_coords = np.atleast_2d(np.asarray(knots, dtype=float)).reshape(-1, self.coords.shape[1])
        self.n_knots = len(self.knot_coords)
        self.knot_H = trend(self.knot_coords)
        self.knot_G = None if ds.G is None else scale(self.knot_coords)
        own = {k: i for i, k in enumerate(coord_keys(self.coords))}
        self.knot_hits = np.array([own.get(k, -1) for k in coord_keys(self.knot_coords)], dtype=np.int64)
        if self.n_knots:
            idx, _ = query_neighbors(LocationSet.from_array(self.coords), self.knot_coords, m)
            self.knot_geometry = NeighborGeometry(self.knot_coords, self.coords, idx)
        self.prev_data = self.prev_knots = None
        if prev is not None:
            self.prev_data = prev.source_of(self.coords)
            self.prev_knots = prev.source_of(self.knot_coords) if self.n_knots else None
        self.yprev_at_data = None

    def source_of(self, points):
        """Where this level's ``yhat`` at ``points`` comes from (observation or knot)."""
        obs = {k: i for i, k in enumerate(coord_keys(self.coords))}
        kn = {k: i for i, k in enumerate(coord_keys(self.knot_coords))}
        kind, index = [], []
        for k in coord_keys(points):
            if k in obs:
                kind.append(0)
                index.append(obs[k])
            elif k in kn:
                kind.append(1)
                index.append(kn[k])
            else:
                raise ValidationError(f"level {self.level} has neither data nor a knot at {k}")
        return np.array(kind, dtype=np.int8), np.array(index, dtype=np.int64)

    def scale_term(self, gamma, yprev):
        if self.level == 1:
            return np.zeros(len(self.z))
        return (self.G @ gamma) * yprev


def _gather(source, z_prev, knots_prev):
    kind, index = source
    out = np.empty(len(kind))
    obs = kind == 0
    out[obs] = z_prev[index[obs]]
    if np.any(~obs):
        out[~obs] = knots_prev[index[~obs]]
    return out


def _initial_state(model, cfg, yprev):
    gamma = None
    r = model.z.copy()
    if model.level > 1:
        gamma = np.zeros(model.G.shape[1])
        gamma[0] = 1.0
        r = r - model.scale_term(gamma, yprev)
    beta, *_ = np.linalg.lstsq(model.H, r, rcond=None)
    v = max(float(np.var(r - model.H @ beta)), 1e-3)
    return LevelState(beta=beta, sigma2=0.9 * v, decay=cfg.init_decay, tau2=0.1 * v, gamma=gamma)


@dataclass
class ChainResult:
    """Kept draws per level (``draws[t][name]`` arrays) and summaries."""

    draws: list
    accept_rate: list
    knot_draws: list
    config: ChainConfig

    def names(self, level):
        return list(self.draws[level - 1])

    def summary(self):
        """Rows ``(level, parameter, mean, q2.5, q97.5)``."""
        rows = []
        for t, d in enumerate(self.draws, start=1):
            for name, v in d.items():
                lo, hi = np.quantile(v, [0.025, 0.975])
                rows.append((t, name, float(np.mean(v)), float(lo), float(hi)))
        return rows

    def interval(self, level, name):
        v = self.draws[level - 1][name]
        lo, hi = np.quantile(v, [0.025, 0.975])
        return float(lo), float(hi)

    def mean(self, level, name):
        return float(np.mean(self.draws[level - 1][name]))


def _record(state):
    out = {f"beta_{k + 1}": v for k, v in enumerate(state.beta)}
    if state.gamma is not None:
        out.update({f"gamma_{k + 1}": v for k, v in enumerate(state.gamma)})
    out.update(sigma2=state.sigma2, decay=state.decay, tau2=state.tau2)
    return out


def run_level(model, cfg, z_prev=None, prev_knot_draws=None):
    """Chain for one level. ``prev_knot_draws[j]`` is level t-1's knot draw at iteration j."""
    t = model.level
    rngs = {b: _stream(cfg.seed, t, b) for b in BLOCKS}
    beta_prior = NormalPrior.isotropic(model.H.shape[1], var=cfg.beta_var)
    gamma_prior = None if model.G is None else NormalPrior.isotropic(model.G.shape[1], var=cfg.gamma_var)
    empty = np.zeros(0)

    def prev_values(j):
        if t == 1:
            return None, None
        kn = prev_knot_draws[j] if prev_knot_draws is not None else empty
        yk = _gather(model.prev_knots, z_prev, kn) if model.n_knots else None
        return _gather(model.prev_data, z_prev, kn), yk

    yprev, _ = prev_values(0)
    state = _initial_state(model, cfg, yprev)
    cov = model.backend(state.sigma2, state.decay, state.tau2)
    kept = []
    knot_store = np.empty((cfg.iterations, model.n_knots))
    accepted = 0
    log_mult = 0.0
    for j in range(cfg.iterations):
        yprev, yprev_knots = prev_values(j)
        model.yprev_at_data = yprev
        resid = model.z - model.scale_term(state.gamma, yprev) - model.H @ state.beta
        state.loglik = cov.loglik(resid)
        if not np.isfinite(state.loglik):
            raise ChainDivergence(f"level {t}: non-finite log-likelihood at iteration {j}", state.dump())
        state, cov, acc, prob = mh_theta_tau(model, state, cov, resid, cfg, rngs["mh"], np.exp(log_mult))
        accepted += acc
        if cfg.adapt and j < cfg.burn_in:
            log_mult += (prob - cfg.target_accept) / (j + 1) ** 0.6
        state.beta = gibbs_beta(model, state, yprev, cov, beta_prior, rngs["beta"])
        if t > 1:
            state.gamma = gibbs_gamma(model, state, yprev, cov, gamma_prior, rngs["gamma"])
        state.knots = sample_knots(model, state, yprev_knots, rngs["knots"])
        if not (np.all(np.isfinite(state.beta)) and np.all(np.isfinite(state.knots))):
            raise ChainDivergence(f"level {t}: non-finite draw at iteration {j}", state.dump())
        knot_store[j] = state.knots
        if j >= cfg.burn_in and (j - cfg.burn_in) % cfg.thin == 0:
            kept.append(_record(state))
    draws = {k: np.array([r[k] for r in kept]) for k in kept[0]}
    rate = accepted / cfg.iterations
    log.info("level %d: acceptance %.3f", t, rate)
    return draws, rate, knot_store


def run_chain(datasets, cfg: ChainConfig, backend=None, trend=Basis(), scale=Basis()) -> ChainResult:
    """Run the collapsed sampler over levels 1..T in order.

    ``backend(coords)`` optionally replaces the NNGP likelihood, e.g. with a
    dense one for testing.
    """
    all_coords = [ds.locs.coords for ds in datasets]
    draws, rates, knots = [], [], []
    prev_model = None
    prev_knot_draws = None
    for t, ds in enumerate(datasets, start=1):
        if ds.level != t:
            raise ValidationError(f"dataset {t} is labelled level {ds.level}")
        model = LevelModel(ds, knot_set(all_coords, t), prev_model, cfg.m, cfg.ordering, backend,
                           trend, scale)
        z_prev = prev_model.z if prev_model is not None else None
        d, rate, store = run_level(model, cfg, z_prev, prev_knot_draws)
        draws.append(d)
        rates.append(rate)
        knots.append(store)
        prev_model, prev_knot_draws = model, store
    return ChainResult(draws, rates, knots, cfg)
