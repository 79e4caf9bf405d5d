"""Location sets, orderings and nearest-neighbour conditioning sets.

Every neighbour search in this module resolves ties by ascending distance
and then ascending id (or ordered position), so results are a total order
and reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DuplicateLocationError, ValidationError

#: Below this many reference points the O(n^2) brute-force search is used.
BRUTE_FORCE_LIMIT = 10_000


def canonical_coords(coords):
    """Round coordinates to 12 significant digits.

    Coincidence tests (nested designs, knot shortcuts) compare canonical
    coordinates exactly.
    """
    coords = np.asarray(coords, dtype=float)
    flat = [float(f"{v:.12g}") for v in coords.ravel()]
    return np.array(flat, dtype=float).reshape(coords.shape)


def coord_keys(coords):
    """Hashable keys for each row of a coordinate array."""
    return [tuple(row) for row in np.asarray(coords, dtype=float).tolist()]


@dataclass(frozen=True)
class LocationSet:
    """An ordered collection of distinct d-dimensional points with stable ids."""

    coords: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if coords.ndim != 2 or coords.shape[1] < 1:
            raise ValidationError("coordinates must be an (n, d) array with d >= 1")
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (coords.shape[0],):
            raise ValidationError("ids must have one entry per location")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("coordinates must be finite")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "ids", ids)
        if len(coords) > 1:
            find_duplicates(coords, raise_error=True)

    @classmethod
    def from_array(cls, coords, ids=None):
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        if ids is None:
            ids = np.arange(len(coords))
        return cls(coords, ids)

    def __len__(self):
        return self.coords.shape[0]

    @property
    def dim(self):
        return self.coords.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return LocationSet(self.coords[index], self.ids[index])


def find_duplicates(coords, raise_error=False):
    """Return pairs ``(i, j)``, i < j, of rows with identical coordinates."""
    seen = {}
    pairs = []
    for j, key in enumerate(coord_keys(coords)):
        if key in seen:
            pairs.append((seen[key], j))
        else:
            seen[key] = j
    if pairs and raise_error:
        i, j = pairs[0]
        raise DuplicateLocationError(
            f"duplicate coordinates {coord_keys(coords[[i]])[0]} at rows {i} and {j}"
        )
    return pairs


def order_locations(locs: LocationSet, strategy: str = "coord-sort") -> np.ndarray:
    """Return a permutation (0-based positions into ``locs``) ordering the set.

    ``coord-sort`` sorts lexicographically by (x1, x2, ...). ``max-min``
    starts at the point nearest the centroid and then repeatedly appends the
    point farthest from everything already ordered; ties go to the lowest id.
    """
    n = len(locs)
    if n == 0:
        raise ValidationError("empty reference set")
    coords = locs.coords
    if strategy == "coord-sort":
        keys = [locs.ids] + [coords[:, j] for j in reversed(range(locs.dim))]
        return np.lexsort(keys)
    if strategy == "max-min":
        return _maxmin_order(coords, locs.ids)
    raise ValidationError(f"unknown ordering strategy {strategy!r}")


def _argmin_tiebreak(values, ids):
    best = values.min()
    cand = np.flatnonzero(values == best)
    return cand[np.argmin(ids[cand])]


def _maxmin_order(coords, ids):
    n = len(coords)
    centroid = coords.mean(axis=0)
    first = _argmin_tiebreak(np.sum((coords - centroid) ** 2, axis=1), ids)
    order = [first]
    mind = np.sum((coords - coords[first]) ** 2, axis=1)
    placed = np.zeros(n, dtype=bool)
    placed[first] = True
    for _ in range(n - 1):
        score = np.where(placed, -np.inf, mind)
        best = score.max()
        cand = np.flatnonzero(score == best)
        nxt = cand[np.argmin(ids[cand])]
        order.append(nxt)
        placed[nxt] = True
        mind = np.minimum(mind, np.sum((coords - coords[nxt]) ** 2, axis=1))
    return np.asarray(order, dtype=np.int64)


@dataclass(frozen=True)
class NeighborIndex:
    """Conditioning sets over an ordered reference set.

    ``idx[i]`` lists the ordered positions of the neighbours of point ``i``
    (nearest first), padded with -1 to width ``m``.
    """

    m: int
    idx: np.ndarray

    @property
    def n(self):
        return self.idx.shape[0]

    @property
    def counts(self):
        return np.sum(self.idx >= 0, axis=1)

    def neighbors(self, i):
        row = self.idx[i]
        return row[row >= 0]


def _pick(d2, keys, k):
    """Positions of the k smallest entries of ``d2``, ordered by (d2, keys)."""
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k < len(d2):
        thr = np.partition(d2, k - 1)[k - 1]
        cand = np.flatnonzero(d2 <= thr)
    else:
        cand = np.arange(len(d2))
    order = np.lexsort((keys[cand], d2[cand]))
    return cand[order[:k]]


def build_neighbor_index(coords, m: int) -> NeighborIndex:
    """Conditioning sets for already-ordered coordinates.

    Point i conditions on the ``min(i, m)`` nearest of points ``0..i-1``.
    """
    if m < 0:
        raise ValidationError("neighbour budget m must be >= 0")
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    n = len(coords)
    width = max(min(m, n - 1), 0)
    idx = np.full((n, width), -1, dtype=np.int64)
    if width == 0:
        return NeighborIndex(m, idx)
    if n <= BRUTE_FORCE_LIMIT:
        positions = np.arange(n)
        for i in range(1, n):
            d2 = np.sum((coords[:i] - coords[i]) ** 2, axis=1)
            sel = _pick(d2, positions[:i], min(i, width))
            idx[i, : len(sel)] = sel
        return NeighborIndex(m, idx)
    return NeighborIndex(m, _tree_ordered_neighbors(coords, width))


def _tree_ordered_neighbors(coords, width):
    n = len(coords)
    idx = np.full((n, width), -1, dtype=np.int64)
    head = min(n, 4 * width + 1)
    positions = np.arange(n)
    for i in range(1, head):
        d2 = np.sum((coords[:i] - coords[i]) ** 2, axis=1)
        sel = _pick(d2, positions[:i], min(i, width))
        idx[i, : len(sel)] = sel
    tree = cKDTree(coords)
    for i in range(head, n):
        k = 2 * width + 1
        while True:
            k = min(k, n)
            dist, cand = tree.query(coords[i], k=k)
            prev = cand < i
            if k == n or (prev.sum() >= width and _complete(dist, prev, width)):
                break
            k *= 2
        cand = cand[prev]
        d2 = np.sum((coords[cand] - coords[i]) ** 2, axis=1)
        sel = cand[_pick(d2, cand, width)]
        idx[i] = sel
    return idx


def _complete(dist, prev, width):
    # the width-th predecessor must be strictly closer than the farthest
    # returned candidate, otherwise an equidistant point may be missing
    kth = dist[prev][width - 1]
    return kth < dist[-1]


def query_neighbors(locs: LocationSet, targets, m: int, exclude_self: bool = False):
    """Nearest reference points for each target.

    Returns ``(idx, dist)``, each of shape ``(k, min(m, n))``; ``idx`` holds
    positions into ``locs``. With ``exclude_self`` a reference point
    coincident with the target is skipped (the row is then padded with -1
    when fewer than ``m`` other points exist).
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n = len(locs)
    if n == 0:
        raise ValidationError("empty reference set")
    if targets.shape[1] != locs.dim:
        raise ValidationError(
            f"target dimension {targets.shape[1]} does not match reference dimension {locs.dim}"
        )
    width = max(min(m, n), 0)
    out = np.full((len(targets), width), -1, dtype=np.int64)
    dist = np.full((len(targets), width), np.inf)
    if width == 0:
        return out, dist
    ref = locs.coords
    if n <= BRUTE_FORCE_LIMIT:
        chunk = max(1, 2_000_000 // max(n, 1))
        for start in range(0, len(targets), chunk):
            block = targets[start : start + chunk]
            d2 = np.sum((block[:, None, :] - ref[None, :, :]) ** 2, axis=2)
            for r, row in enumerate(d2):
                _fill_query(out, dist, start + r, row, np.arange(n), locs.ids, width, exclude_self)
        return out, dist
    tree = cKDTree(ref)
    need = width + (1 if exclude_self else 0)
    for t, x in enumerate(targets):
        k = need + 1
        while True:
            k = min(k, n)
            dd, cand = tree.query(x, k=k)
            dd, cand = np.atleast_1d(dd), np.atleast_1d(cand)
            # complete once the needed distance is strictly inside the ball
            if k == n or dd[min(need, k) - 1] < dd[-1]:
                break
            k *= 2
        d2 = np.sum((ref[cand] - x) ** 2, axis=1)
        _fill_query(out, dist, t, d2, cand, locs.ids, width, exclude_self)
    return out, dist


def _fill_query(out, dist, row_no, d2, cand, ids, width, exclude_self):
    if exclude_self:
        keep = d2 > 0
        d2, cand = d2[keep], cand[keep]
    sel = _pick(d2, ids[cand], min(width, len(cand)))
    out[row_no, : len(sel)] = cand[sel]
    dist[row_no, : len(sel)] = np.sqrt(d2[sel])


def knot_set(location_sets, t):
    """Locations observed above level ``t`` but not at level ``t``.

    ``location_sets`` is a list of coordinate arrays ordered by fidelity and
    ``t`` is 1-based. The result keeps first-appearance order.
    """
    own = set(coord_keys(location_sets[t - 1]))
    seen = set()
    rows = []
    for coords in location_sets[t:]:
        for key, row in zip(coord_keys(coords), np.asarray(coords, dtype=float)):
            if key not in own and key not in seen:
                seen.add(key)
                rows.append(row)
    dim = np.asarray(location_sets[t - 1]).shape[1]
    if not rows:
        return np.empty((0, dim))
    return np.vstack(rows)
