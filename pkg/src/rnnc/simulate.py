"""Synthetic multi-fidelity data on the unit square.

Latent discrepancies are drawn densely on the union of all locations, so
every level sees one coherent realisation of each field. Held-out test data
are the top-level observations falling inside a few square boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import JITTER, CovarianceParams, cov_block
from .errors import ValidationError
from .geometry import canonical_coords, coord_keys
from .recursive import FidelityDataset, LevelParams

__all__ = ["SimSpec", "SimResult", "simulate", "default_boxes", "table1_spec", "four_level_spec"]

MAX_DENSE = 20_000
DESIGNS = ("nested-grid", "non-nested-uniform")


def default_boxes(area=0.025):
    """Four axis-aligned squares, one per quadrant, covering ``4 * area``."""
    half = np.sqrt(area) / 2
    centres = [(0.25, 0.3), (0.7, 0.25), (0.3, 0.72), (0.75, 0.7)]
    return tuple((cx - half, cy - half, cx + half, cy + half) for cx, cy in centres)


@dataclass(frozen=True)
class SimSpec:
    """``params[t]`` holds level t+1's truth; its ``gamma`` scales level t."""

    n: tuple
    params: tuple
    design: str = "non-nested-uniform"
    boxes: tuple = field(default_factory=default_boxes)
    seed: int = 0

    def __post_init__(self):
        if len(self.n) != len(self.params) or not self.n:
            raise ValidationError("need one size per level")
        if self.design not in DESIGNS:
            raise ValidationError(f"unknown design {self.design!r}")
        for t, p in enumerate(self.params):
            if p.tau2 < 0:
                raise ValidationError(f"level {t + 1}: nugget must be non-negative")
            if t > 0 and p.gamma is None:
                raise ValidationError(f"level {t + 1}: scale coefficients required")
        if self.design == "nested-grid" and any(b > a for a, b in zip(self.n, self.n[1:])):
            raise ValidationError("nested design needs non-increasing level sizes")
        if max(self.n) > MAX_DENSE:
            raise ValidationError(
                f"dense simulation limited to {MAX_DENSE} points per level; "
                "simulate level by level with a sequential (e.g. NNGP) sampler instead"
            )

    @property
    def T(self):
        return len(self.n)


@dataclass
class SimResult:
    spec: SimSpec
    coords: list  # training coordinates per level
    z: list  # training observations per level
    test_coords: np.ndarray
    test_z: np.ndarray  # noisy top-level observations in the boxes
    test_y: np.ndarray  # latent top-level process at the same points

    def datasets(self, trend=None, scale=None):
        from .recursive import Basis

        trend = trend or Basis()
        scale = scale or Basis()
        return [
            FidelityDataset.build(t, c, z, trend, scale)
            for t, (c, z) in enumerate(zip(self.coords, self.z), start=1)
        ]


def _locations(spec: SimSpec, rng):
    if spec.design == "non-nested-uniform":
        return [canonical_coords(rng.uniform(size=(n, 2))) for n in spec.n]
    side = int(np.ceil(np.sqrt(spec.n[0])))
    g = (np.arange(side) + 0.5) / side
    grid = np.column_stack([np.repeat(g, side), np.tile(g, side)])
    sets = []
    current = grid
    for n in spec.n:
        keep = np.sort(rng.permutation(len(current))[:n])
        current = current[keep]
        sets.append(canonical_coords(current))
    return sets


def _in_boxes(coords, boxes):
    inside = np.zeros(len(coords), dtype=bool)
    for x0, y0, x1, y1 in boxes:
        inside |= (coords[:, 0] >= x0) & (coords[:, 0] <= x1) & (coords[:, 1] >= y0) & (coords[:, 1] <= y1)
    return inside


def _draw_field(points, cov: CovarianceParams | None, rng):
    if cov is None:
        return np.zeros(len(points))
    c = cov_block(points, points, cov)
    c[np.diag_indices_from(c)] += JITTER * cov.sigma2
    return np.linalg.cholesky(c) @ rng.standard_normal(len(points))


def simulate(spec: SimSpec) -> SimResult:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    sets = _locations(spec, rng)
    union = {}
    for s in sets:
        for k, row in zip(coord_keys(s), s):
            union.setdefault(k, row)
    keys = list(union)
    points = np.array([union[k] for k in keys]) if keys else np.zeros((0, 2))
    pos = {k: i for i, k in enumerate(keys)}

    y = None
    for t, p in enumerate(spec.params):
        w = _draw_field(points, p.cov, rng)
        own = p.trend_at(points) + w
        y = own if t == 0 else p.zeta_at(points) * y + own
        idx = np.array([pos[k] for k in coord_keys(sets[t])], dtype=np.int64)
        noise = np.sqrt(p.tau2) * rng.standard_normal(len(idx))
        sets[t] = (sets[t], y[idx] + noise, y[idx])

    coords = [s[0] for s in sets]
    z = [s[1] for s in sets]
    test = _in_boxes(coords[-1], spec.boxes)
    test_coords, test_z, test_y = coords[-1][test], z[-1][test], sets[-1][2][test]
    coords[-1], z[-1] = coords[-1][~test], z[-1][~test]
    return SimResult(spec, coords, z, test_coords, test_z, test_y)


def table1_spec(n=2000, design="non-nested-uniform", seed=0, **kw):
    """Two levels at the truths used in the two-level study."""
    params = (
        LevelParams(beta=(10.0,), cov=CovarianceParams(4.0, 10.0), tau2=0.1),
        LevelParams(beta=(1.0,), cov=CovarianceParams(1.0, 10.0), tau2=0.05, gamma=(1.0,)),
    )
    return SimSpec((n, n), params, design, seed=seed, **kw)


def four_level_spec(n=800, design="non-nested-uniform", seed=0, beta=(10.0, 1.0, 1.0, 1.0), **kw):
    """Four levels with the supplement's scale, variance, decay and nugget values."""
    sigma2 = (2.0, 1.0, 0.8, 0.5)
    decay = (12.0, 6.0, 8.0, 3.0)
    tau2 = (0.1, 0.05, 0.05, 0.01)
    gamma = (None, (1.1,), (0.9,), (1.0,))
    params = tuple(
        LevelParams(beta=(beta[t],), cov=CovarianceParams(sigma2[t], decay[t]), tau2=tau2[t], gamma=gamma[t])
        for t in range(4)
    )
    return SimSpec((n,) * 4, params, design, seed=seed, **kw)
