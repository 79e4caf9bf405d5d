"""Stationary exponential covariance kernels.

The kit parameterises the exponential kernel by its decay rate ``kappa``,
``R(s, s') = exp(-kappa * |s - s'|)``; ``1 / kappa`` is reported alongside as
the range. A length-d decay vector gives the diagonal anisotropic form
``exp(-sum_j kappa_j |s_j - s'_j|)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

#: Relative diagonal jitter added before solving any neighbour-set system.
JITTER = 1e-10


@dataclass(frozen=True)
class CovarianceParams:
    sigma2: float
    decay: float | tuple = 1.0

    def __post_init__(self):
        decay = np.atleast_1d(np.asarray(self.decay, dtype=float))
        if not self.sigma2 > 0:
            raise ValidationError(f"sigma2 must be positive, got {self.sigma2}")
        if decay.ndim != 1 or decay.size == 0 or not np.all(decay > 0):
            raise ValidationError(f"decay components must be positive, got {self.decay}")
        value = float(decay[0]) if decay.size == 1 else tuple(float(v) for v in decay)
        object.__setattr__(self, "decay", value)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def anisotropic(self):
        return isinstance(self.decay, tuple)

    @property
    def decay_array(self):
        return np.atleast_1d(np.asarray(self.decay, dtype=float))

    @property
    def range(self):
        return 1.0 / self.decay_array


@dataclass(frozen=True)
class NoiseParams:
    """Nugget variance and its ratio to the process variance."""

    tau2: float
    tau2_rel: float

    def __post_init__(self):
        if self.tau2 < 0 or self.tau2_rel < 0:
            raise ValidationError("nugget variances must be non-negative")

    @classmethod
    def from_relative(cls, tau2_rel, sigma2):
        return cls(tau2_rel * sigma2, tau2_rel)

    @classmethod
    def from_absolute(cls, tau2, sigma2):
        return cls(tau2, tau2 / sigma2)


def lag_features(a, b, anisotropic):
    """Distances (isotropic) or absolute coordinate lags (anisotropic).

    ``a`` and ``b`` broadcast against each other over leading axes; the last
    axis holds coordinates.
    """
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if anisotropic:
        return np.abs(diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def correlation_from_features(features, decay):
    decay = np.atleast_1d(np.asarray(decay, dtype=float))
    if decay.size == 1:
        return np.exp(-decay[0] * features)
    if features.shape[-1] != decay.size:
        raise ValidationError(
            f"decay has {decay.size} components but points have dimension {features.shape[-1]}"
        )
    return np.exp(-(features @ decay))


def _check_dims(a, b, p):
    if a.shape[-1] != b.shape[-1]:
        raise ValidationError("points have different dimensions")
    if p.anisotropic and len(p.decay) != a.shape[-1]:
        raise ValidationError(
            f"anisotropic decay has {len(p.decay)} components for {a.shape[-1]}-d points"
        )


def kernel(s, s2, p: CovarianceParams) -> float:
    """Covariance between two points."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s2 = np.atleast_1d(np.asarray(s2, dtype=float))
    _check_dims(s, s2, p)
    feat = lag_features(s, s2, p.anisotropic)
    return float(p.sigma2 * correlation_from_features(feat, p.decay))


def cov_block(a, b, p: CovarianceParams) -> np.ndarray:
    """Dense covariance matrix with entry (i, j) = kernel(a_i, b_j)."""
    a = np.atleast_2d(np.asarray(getattr(a, "coords", a), dtype=float))
    b = np.atleast_2d(np.asarray(getattr(b, "coords", b), dtype=float))
    _check_dims(a, b, p)
    feat = lag_features(a[:, None, :], b[None, :, :], p.anisotropic)
    return p.sigma2 * correlation_from_features(feat, p.decay)
