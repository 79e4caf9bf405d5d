"""Prior distributions shared by the MCMC sampler and the conjugate fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ValidationError


@dataclass(frozen=True)
class NormalPrior:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValidationError("prior covariance shape does not match the mean")
        if not np.allclose(cov, cov.T):
            raise ValidationError("prior covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValidationError("prior covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def isotropic(cls, dim, mean=0.0, var=1000.0):
        return cls(np.broadcast_to(np.asarray(mean, dtype=float), (dim,)).copy(), var * np.eye(dim))

    @property
    def dim(self):
        return self.mean.size

    @property
    def precision(self):
        return np.linalg.inv(self.cov)


@dataclass(frozen=True)
class InverseGammaPrior:
    a: float = 2.0
    b: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValidationError("inverse-gamma shape and scale must be positive")

    def logpdf(self, x):
        if x <= 0:
            return -np.inf
        return self.a * np.log(self.b) - gammaln(self.a) - (self.a + 1) * np.log(x) - self.b / x

    def mean(self):
        if self.a <= 1:
            raise ValidationError("inverse-gamma mean requires a > 1")
        return self.b / (self.a - 1)
