"""Recursive co-kriging across fidelity levels.

Level t is modelled as ``y_t(s) = zeta_{t-1}(s) yhat_{t-1}(s) + h_t(s)^T beta_t
+ w_t(s)`` where ``yhat_{t-1}`` is the level t-1 predictor and
``zeta_{t-1}(s) = g(s)^T gamma_{t-1}``. A location already observed at level
t-1 takes ``yhat_{t-1} = z_{t-1}`` with the nugget as its variance (the
nested shortcut); everywhere else ``yhat_{t-1}`` is the NNGP conditional.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .covariance import CovarianceParams
from .errors import ValidationError
from .geometry import LocationSet, canonical_coords, coord_keys, knot_set
from .nngp import conditional_at

__all__ = [
    "Basis",
    "FidelityDataset",
    "LevelFit",
    "LevelParams",
    "ImputedField",
    "RecursivePrediction",
    "level_mean",
    "impute_knots",
    "predict_recursive",
    "knot_set",
    "nesting_diagnosis",
]


@dataclass(frozen=True)
class Basis:
    """Polynomial basis in the coordinates: ``constant`` or ``linear``."""

    kind: str = "constant"

    def __post_init__(self):
        if self.kind not in ("constant", "linear"):
            raise ValidationError(f"unknown basis {self.kind!r}")

    def __call__(self, coords):
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        ones = np.ones((len(coords), 1))
        if self.kind == "constant":
            return ones
        return np.hstack([ones, coords])

    def size(self, dim):
        return 1 if self.kind == "constant" else dim + 1


@dataclass(frozen=True)
class LevelParams:
    """Known parameters of one level (simulation truth, oracle inputs).

    ``cov`` may be None for a level with no spatial discrepancy.
    """

    beta: tuple
    cov: CovarianceParams | None
    tau2: float = 0.0
    gamma: tuple | None = None
    trend: Basis = Basis()
    scale: Basis = Basis()

    def trend_at(self, coords):
        return self.trend(coords) @ np.atleast_1d(np.asarray(self.beta, dtype=float))

    def zeta_at(self, coords):
        return self.scale(coords) @ np.atleast_1d(np.asarray(self.gamma, dtype=float))


@dataclass
class FidelityDataset:
    level: int
    locs: LocationSet
    z: np.ndarray
    H: np.ndarray
    G: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = len(self.locs)
        if self.z.shape != (n,) or self.H.shape[0] != n:
            raise ValidationError(f"level {self.level}: row counts disagree")
        if n and np.linalg.matrix_rank(self.H) < self.H.shape[1]:
            raise ValidationError(f"level {self.level}: trend basis matrix is rank deficient")
        if self.level == 1 and self.G is not None:
            raise ValidationError("level 1 carries no scale basis")
        if self.G is not None:
            self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
            if self.G.shape[0] != n:
                raise ValidationError(f"level {self.level}: scale basis row count disagrees")

    @classmethod
    def build(cls, level, coords, z, trend=Basis(), scale=Basis()):
        locs = LocationSet.from_array(canonical_coords(coords))
        G = scale(locs.coords) if level > 1 else None
        return cls(level, locs, z, trend(locs.coords), G)

    @property
    def n(self):
        return len(self.locs)


@dataclass
class ImputedField:
    at: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        if self.mean.shape != self.var.shape or len(self.mean) != len(self.at):
            raise ValidationError("imputed field lengths disagree")
        if np.any(self.var < 0):
            raise ValidationError("imputed variances must be non-negative")


def level_mean(ds: FidelityDataset, beta, gamma=None, yprev=None):
    """``zeta(S_t) * yhat_{t-1}(S_t) + H beta`` (just ``H beta`` at level 1)."""
    trend = ds.H @ np.atleast_1d(np.asarray(beta, dtype=float))
    if ds.level == 1:
        return trend
    if yprev is None or gamma is None:
        raise ValidationError(f"level {ds.level} needs gamma and yhat at its locations")
    ym = yprev.mean if isinstance(yprev, ImputedField) else np.asarray(yprev, dtype=float)
    zeta = ds.G @ np.atleast_1d(np.asarray(gamma, dtype=float))
    return zeta * ym + trend


@dataclass
class LevelFit:
    """Parameters of one level together with the data they were fitted to.

    ``yprev`` is ``yhat_{t-1}(S_t)`` (means), absent at level 1.
    """

    data: FidelityDataset
    cov: CovarianceParams
    tau2: float
    beta: np.ndarray
    gamma: np.ndarray | None = None
    yprev: np.ndarray | None = None
    m: int = 10
    trend: Basis = field(default_factory=Basis)
    scale: Basis = field(default_factory=Basis)

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if self.gamma is not None:
            self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self._keys = None

    @property
    def level(self):
        return self.data.level

    @property
    def resid(self):
        return self.data.z - level_mean(self.data, self.beta, self.gamma, self.yprev)

    def lookup(self, targets):
        """Positions of ``targets`` within this level's locations (-1 if absent)."""
        if self._keys is None:
            self._keys = {k: i for i, k in enumerate(coord_keys(self.data.locs.coords))}
        keys = coord_keys(canonical_coords(targets))
        return np.array([self._keys.get(k, -1) for k in keys], dtype=np.int64)

    def zeta(self, targets):
        if self.level == 1:
            return None
        return self.scale(targets) @ self.gamma


def impute_knots(fit_prev: LevelFit, knots, yprevprev: ImputedField | None = None) -> ImputedField:
    """Conditional distribution of ``yhat_{t-1}`` at knot locations.

    ``fit_prev`` is level t-1 and ``yprevprev`` holds ``yhat_{t-2}`` at the
    same knots (ignored at level 1). Knots observed at level t-1 take the
    observed value and the nugget variance.
    """
    knots = np.atleast_2d(np.asarray(knots, dtype=float))
    mean, var = _level_conditional(fit_prev, knots, yprevprev)
    pos = fit_prev.lookup(knots)
    hit = pos >= 0
    mean[hit] = fit_prev.data.z[pos[hit]]
    var[hit] = fit_prev.tau2
    return ImputedField(knots, mean, var)


def _level_conditional(fit: LevelFit, targets, yprev: ImputedField | None):
    cond = conditional_at(targets, fit.data.locs, fit.resid, fit.cov, fit.tau2, fit.m)
    mean = fit.trend(targets) @ fit.beta + cond.mean
    if fit.level > 1:
        if yprev is None:
            raise ValidationError(f"level {fit.level} needs yhat of level {fit.level - 1}")
        mean = mean + fit.zeta(targets) * yprev.mean
    return mean, cond.var.copy()


@dataclass
class RecursivePrediction:
    at: np.ndarray
    means: list
    variances: list
    noise: float = 0.0

    @property
    def mean(self):
        return self.means[-1]

    @property
    def var(self):
        return self.variances[-1] + self.noise

    @property
    def sd(self):
        return np.sqrt(self.var)

    def interval(self, level=0.95):
        q = norm.ppf(0.5 + level / 2)
        return self.mean - q * self.sd, self.mean + q * self.sd


def predict_recursive(levels, targets, upto=None, shortcut_top=False, include_nugget=False):
    """Recursive predictive distribution at ``targets`` up to level ``upto``.

    At every level the mean is ``zeta * mean_{t-1} + h^T beta + B r`` and the
    variance ``V + zeta^2 var_{t-1}``, treating the lower-level uncertainty as
    independent of the level-t discrepancy. Below ``upto`` (and at ``upto``
    when ``shortcut_top``) targets observed at that level are replaced by the
    observation with the nugget as variance. ``include_nugget`` adds the top
    level's nugget, giving the predictive distribution of a new observation.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    upto = len(levels) if upto is None else upto
    if upto < 1 or upto > len(levels):
        raise ValidationError(f"cannot predict level {upto} from {len(levels)} fitted levels")
    dim = levels[0].data.locs.dim
    if targets.shape[1] != dim:
        raise ValidationError(f"target dimension {targets.shape[1]} does not match data dimension {dim}")
    means, variances = [], []
    prev = None
    for t in range(1, upto + 1):
        fit = levels[t - 1]
        mean, condvar = _level_conditional(fit, targets, prev)
        var = condvar if t == 1 else condvar + fit.zeta(targets) ** 2 * prev.var
        if t < upto or shortcut_top:
            pos = fit.lookup(targets)
            hit = pos >= 0
            mean = mean.copy()
            var = var.copy()
            mean[hit] = fit.data.z[pos[hit]]
            var[hit] = fit.tau2
        means.append(mean)
        variances.append(var)
        prev = ImputedField(targets, mean, var)
    noise = levels[upto - 1].tau2 if include_nugget else 0.0
    return RecursivePrediction(targets, means, variances, noise)


def yhat_at(levels, t, targets):
    """``yhat_t`` at ``targets`` given fitted levels 1..t (nested shortcut applied)."""
    return predict_recursive(levels[:t], targets, upto=t, shortcut_top=True)


def nesting_diagnosis(location_sets):
    """Describe how the level location sets overlap.

    Returns ``(label, shared)`` where ``shared[t]`` counts level t+2
    locations also present at level t+1.
    """
    shared = []
    for lower, upper in zip(location_sets[:-1], location_sets[1:]):
        keys = set(coord_keys(lower))
        shared.append(sum(k in keys for k in coord_keys(upper)))
    sizes = [len(s) for s in location_sets[1:]]
    if not shared:
        return "single level", shared
    if all(s == n for s, n in zip(shared, sizes)):
        return "fully nested", shared
    if all(s == 0 for s in shared):
        return "non-nested", shared
    return "partially nested", shared
