"""Nearest-neighbour Gaussian process factors and likelihoods.

For ordered points s_1..s_n each latent value is regressed on its
conditioning set,

    w_i = a_i^T w_{N(i)} + eta_i,   eta_i ~ N(0, d_i),

which gives the sparse precision ``(I - A)^T D^{-1} (I - A)``. Observations
add a nugget, ``Lambda = C + tau2 I``; its inverse and determinant are
obtained through the Sherman-Morrison-Woodbury identities so that only the
sparse matrix ``C^{-1} + tau2^{-1} I`` is ever factorised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .covariance import JITTER, CovarianceParams, correlation_from_features, lag_features
from .errors import NumericalError
from .geometry import LocationSet, NeighborIndex, query_neighbors

LOG_2PI = float(np.log(2.0 * np.pi))


class NeighborGeometry:
    """Cached lags for a fixed layout of neighbour systems.

    Row r describes the system for target r: its neighbours ``idx[r]``
    (positions into the reference coordinates, -1 padded). Caching the lags
    means a change of decay only costs an ``exp`` and a batched solve.
    """

    def __init__(self, targets, ref_coords, idx, anisotropic=False):
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        ref_coords = np.atleast_2d(np.asarray(ref_coords, dtype=float))
        self.idx = np.asarray(idx, dtype=np.int64).reshape(len(targets), -1)
        self.valid = self.idx >= 0
        self.anisotropic = anisotropic
        pts = ref_coords[np.where(self.valid, self.idx, 0)]
        self.nn = lag_features(pts[:, :, None, :], pts[:, None, :, :], anisotropic)
        self.cross = lag_features(pts, targets[:, None, :], anisotropic)

    @property
    def width(self):
        return self.idx.shape[1]

    def systems(self, decay, nugget_rel=0.0):
        """Correlation Gram matrices and cross vectors, padding made inert.

        Padded slots get a unit diagonal and zero coupling, so their solved
        weights are exactly zero.
        """
        w = self.width
        gram = correlation_from_features(self.nn, decay)
        cross = correlation_from_features(self.cross, decay)
        pair = self.valid[:, :, None] & self.valid[:, None, :]
        gram = np.where(pair, gram, 0.0)
        diag = np.arange(w)
        gram[:, diag, diag] = np.where(self.valid, 1.0 + nugget_rel + JITTER, 1.0)
        cross = np.where(self.valid, cross, 0.0)
        return gram, cross

    def weights(self, decay, nugget_rel=0.0):
        """Kriging weights and the explained correlation ``c^T w`` per row."""
        if self.width == 0:
            n = self.idx.shape[0]
            return np.zeros((n, 0)), np.zeros(n)
        gram, cross = self.systems(decay, nugget_rel)
        coef = _batched_solve(gram, cross)
        return coef, np.sum(coef * cross, axis=1)


def _batched_solve(gram, rhs):
    try:
        return np.linalg.solve(gram, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for i in range(gram.shape[0]):
            try:
                np.linalg.solve(gram[i], rhs[i])
            except np.linalg.LinAlgError:
                raise NumericalError(f"singular neighbour matrix at ordered index {i}") from None
        raise


@dataclass(frozen=True)
class NNGPFactors:
    """Rows of ``A`` (neighbour positions and coefficients) and the diagonal ``D``."""

    idx: np.ndarray
    coef: np.ndarray
    condvar: np.ndarray

    @property
    def n(self):
        return self.condvar.shape[0]

    def i_minus_a(self):
        n = self.n
        valid = self.idx >= 0
        rows = np.repeat(np.arange(n), self.idx.shape[1])[valid.ravel()]
        cols = self.idx.ravel()[valid.ravel()]
        vals = -self.coef.ravel()[valid.ravel()]
        diag = np.arange(n)
        return sp.csr_matrix(
            (np.r_[np.ones(n), vals], (np.r_[diag, rows], np.r_[diag, cols])), shape=(n, n)
        )

    def precision(self):
        """Sparse ``(I - A)^T D^{-1} (I - A)``."""
        ia = self.i_minus_a()
        return (ia.T @ sp.diags(1.0 / self.condvar) @ ia).tocsc()

    def logdet(self):
        return float(np.sum(np.log(self.condvar)))

    def whiten(self, v):
        """``(I - A) v``: innovations of ``v`` under the ordering."""
        v = np.asarray(v, dtype=float)
        if self.idx.shape[1] == 0:
            return v.copy()
        valid = self.idx >= 0
        gathered = v[np.where(valid, self.idx, 0)]
        if v.ndim == 2:
            return v - np.einsum("ij,ijk->ik", np.where(valid, self.coef, 0.0), gathered)
        return v - np.sum(np.where(valid, self.coef * gathered, 0.0), axis=1)


def neighbor_geometry(coords, nbr: NeighborIndex, anisotropic=False):
    coords = np.asarray(coords, dtype=float)
    return NeighborGeometry(coords, coords, nbr.idx, anisotropic)


def compute_factors(coords, nbr: NeighborIndex, p: CovarianceParams, geometry=None, full_history="auto"):
    """NNGP factors for ordered ``coords`` under covariance ``p``.

    Row i solves ``a_i = C_{N(i)}^{-1} C_{N(i), i}`` and sets
    ``d_i = C(s_i, s_i) - C_{i, N(i)} a_i``. When every conditioning set is
    the full history (m >= n - 1) and ``full_history`` is ``"auto"``, one
    dense Cholesky gives the same rows in O(n^3) instead of O(n^4).
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    n = len(coords)
    counts = nbr.counts
    if full_history == "auto" and n > 2 and np.array_equal(counts, np.arange(n)):
        return _full_history_factors(coords, nbr, p)
    if geometry is None:
        geometry = neighbor_geometry(coords, nbr, p.anisotropic)
    coef, explained = geometry.weights(p.decay)
    condvar = p.sigma2 * (1.0 - explained)
    _check_condvar(condvar)
    return NNGPFactors(nbr.idx, coef, condvar)


def _check_condvar(condvar):
    bad = np.flatnonzero(~(condvar > 0))
    if bad.size:
        raise NumericalError(f"non-positive conditional variance at ordered index {bad[0]}")


def _full_history_factors(coords, nbr, p):
    from .covariance import cov_block

    n = len(coords)
    cov = cov_block(coords, coords, p)
    cov[np.diag_indices(n)] += JITTER * p.sigma2
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError("covariance of the full history is not positive definite") from None
    diag = np.diag(chol)
    linv = np.linalg.solve(chol, np.eye(n))
    a_full = np.eye(n) - diag[:, None] * linv
    idx = nbr.idx
    coef = np.where(idx >= 0, a_full[np.arange(n)[:, None], np.where(idx >= 0, idx, 0)], 0.0)
    condvar = diag**2
    _check_condvar(condvar)
    return NNGPFactors(idx, coef, condvar)


def sparse_quadform(f: NNGPFactors, v) -> float:
    """``v^T C^{-1} v`` as a sum of squared innovations over conditional variances."""
    u = f.whiten(v)
    return float(np.sum(u * u / f.condvar))


class NoisyCovariance:
    """``Lambda = C + tau2 I`` handled through the sparse precision of ``C``.

    With ``M = C^{-1} + tau2^{-1} I`` the Woodbury identity
    ``Lambda^{-1} = tau2^{-1} I - tau2^{-2} M^{-1}`` is applied in the
    equivalent form ``tau2^{-1} M^{-1} C^{-1}``, which avoids subtracting two
    nearly equal terms when the nugget is small. The determinant lemma gives
    ``log|Lambda| = n log tau2 + log|C| + log|M|``.
    """

    def __init__(self, factors: NNGPFactors, tau2: float):
        self.factors = factors
        self.tau2 = float(tau2)
        self.n = factors.n
        self.precision = factors.precision()
        self._lu = None
        if self.tau2 > 0:
            m = (self.precision + sp.identity(self.n, format="csc") / self.tau2).tocsc()
            try:
                self._lu = splu(
                    m,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
            except RuntimeError as exc:
                raise NumericalError(f"sparse factorisation failed: {exc}") from None
            udiag = self._lu.U.diagonal()
            if not np.all(udiag > 0):
                raise NumericalError("C^{-1} + tau2^{-1} I is not positive definite")
            self._logdet_m = float(np.sum(np.log(udiag)))

    def solve(self, v):
        """``Lambda^{-1} v`` for a vector or an (n, k) matrix."""
        v = np.asarray(v, dtype=float)
        qv = self.precision @ v
        if self._lu is None:
            return np.asarray(qv)
        return self._lu.solve(np.asarray(qv)) / self.tau2

    def logdet(self):
        if self._lu is None:
            return self.factors.logdet()
        return self.n * np.log(self.tau2) + self.factors.logdet() + self._logdet_m

    def quadform(self, r):
        r = np.asarray(r, dtype=float)
        return float(r @ self.solve(r))

    def loglik(self, resid):
        if self.n == 0:
            return 0.0
        return -0.5 * (self.n * LOG_2PI + self.logdet() + self.quadform(resid))

    def woodbury_inverse(self):
        """Dense ``tau2^{-1} I - tau2^{-2} M^{-1}`` exactly as the identity reads.

        Test helper only: materialises an n x n matrix.
        """
        if self._lu is None:
            return self.precision.toarray()
        minv = self._lu.solve(np.eye(self.n))
        return np.eye(self.n) / self.tau2 - minv / self.tau2**2


def marginal_loglik(f: NNGPFactors, resid, tau2: float) -> float:
    """Gaussian log-density of ``resid`` under ``N(0, C + tau2 I)``."""
    return NoisyCovariance(f, tau2).loglik(resid)


@dataclass(frozen=True)
class Conditional:
    """Kriging weights over the conditioning set plus the conditional moments."""

    idx: np.ndarray
    weights: np.ndarray
    mean: np.ndarray
    var: np.ndarray


def conditional_at(
    targets,
    ref_locs,
    ref_resid,
    p: CovarianceParams,
    tau2: float,
    m: int,
    latent: bool = False,
    exclude_self: bool = False,
    geometry: NeighborGeometry | None = None,
) -> Conditional:
    """Conditional mean and variance of the latent process at ``targets``.

    The neighbour Gram matrix carries the nugget (``C + tau2 I``) because the
    conditioning values are noisy observations; ``latent=True`` conditions
    on noise-free values instead. Means are returned on the residual scale.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    k = len(targets)
    ref_resid = np.asarray(ref_resid, dtype=float)
    if geometry is None:
        if ref_locs is None or len(ref_locs) == 0 or m == 0:
            return Conditional(
                np.zeros((k, 0), dtype=np.int64), np.zeros((k, 0)), np.zeros(k), np.full(k, p.sigma2)
            )
        if not isinstance(ref_locs, LocationSet):
            ref_locs = LocationSet.from_array(ref_locs)
        idx, _ = query_neighbors(ref_locs, targets, m, exclude_self=exclude_self)
        geometry = NeighborGeometry(targets, ref_locs.coords, idx, p.anisotropic)
    nugget_rel = 0.0 if latent else tau2 / p.sigma2
    weights, explained = geometry.weights(p.decay, nugget_rel)
    valid = geometry.valid
    gathered = np.where(valid, ref_resid[np.where(valid, geometry.idx, 0)], 0.0)
    mean = np.sum(weights * gathered, axis=1)
    var = np.maximum(p.sigma2 * (1.0 - explained), 0.0)
    return Conditional(geometry.idx, weights, mean, var)
