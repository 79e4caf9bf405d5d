"""Prediction-quality metrics for held-out observations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ValidationError

__all__ = ["PredictionRecords", "rmspe", "nsme", "cvg95", "alci95", "crps_gaussian", "all_metrics"]

Z95 = float(norm.ppf(0.975))


@dataclass
class PredictionRecords:
    """Observed values with Gaussian predictive summaries.

    ``lo95``/``hi95`` default to the equal-tail Gaussian bounds.
    """

    obs: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lo95: np.ndarray | None = None
    hi95: np.ndarray | None = None

    def __post_init__(self):
        self.obs = np.atleast_1d(np.asarray(self.obs, dtype=float))
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.sd = np.broadcast_to(np.asarray(self.sd, dtype=float), self.mean.shape).copy()
        if self.obs.shape != self.mean.shape:
            raise ValidationError("obs and mean lengths disagree")
        if self.obs.size == 0:
            raise ValidationError("no prediction records")
        if np.any(self.sd < 0) or not np.all(np.isfinite(self.sd)):
            raise ValidationError("predictive standard deviations must be finite and non-negative")
        if self.lo95 is None:
            self.lo95 = self.mean - Z95 * self.sd
        if self.hi95 is None:
            self.hi95 = self.mean + Z95 * self.sd
        self.lo95 = np.asarray(self.lo95, dtype=float)
        self.hi95 = np.asarray(self.hi95, dtype=float)
        if np.any(self.lo95 > self.mean) or np.any(self.mean > self.hi95):
            raise ValidationError("interval bounds must bracket the mean")

    def __len__(self):
        return self.obs.size


def rmspe(r: PredictionRecords) -> float:
    return float(np.sqrt(np.mean((r.mean - r.obs) ** 2)))


def nsme(r: PredictionRecords) -> float:
    """Nash-Sutcliffe efficiency: 1 - SSE / total sum of squares of obs."""
    ss = np.sum((r.obs - r.obs.mean()) ** 2)
    if ss == 0:
        raise ValidationError("NSME undefined for constant observations")
    return float(1.0 - np.sum((r.mean - r.obs) ** 2) / ss)


def cvg95(r: PredictionRecords) -> float:
    return float(np.mean((r.obs >= r.lo95) & (r.obs <= r.hi95)))


def alci95(r: PredictionRecords) -> float:
    return float(np.mean(r.hi95 - r.lo95))


def crps_gaussian(r: PredictionRecords) -> float:
    """Mean closed-form CRPS of Gaussian forecasts (``|y - mu|`` when sd is 0)."""
    err = r.obs - r.mean
    out = np.abs(err)
    pos = r.sd > 0
    s = r.sd[pos]
    z = err[pos] / s
    out[pos] = s * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - 1 / np.sqrt(np.pi))
    return float(np.mean(out))


def all_metrics(r: PredictionRecords) -> dict:
    out = {"rmspe": rmspe(r)}
    try:
        out["nsme"] = nsme(r)
    except ValidationError:
        out["nsme"] = float("nan")
    out.update(crps=crps_gaussian(r), cvg95=cvg95(r), alci95=alci95(r))
    return out
