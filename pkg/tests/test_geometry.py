import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnnc.errors import DuplicateLocationError, ValidationError
from rnnc.geometry import (
    BRUTE_FORCE_LIMIT,
    LocationSet,
    build_neighbor_index,
    canonical_coords,
    knot_set,
    order_locations,
    query_neighbors,
)


def random_points(n, seed=0):
    return np.random.default_rng(seed).uniform(size=(n, 2))


class TestLocationSet:
    def test_rejects_duplicates(self):
        with pytest.raises(DuplicateLocationError):
            LocationSet.from_array([[0, 0], [1, 1], [0, 0]])

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            LocationSet.from_array([[0, np.nan]])

    def test_canonical_rounding(self):
        a = canonical_coords([[0.1 + 0.2, 1.0]])
        b = canonical_coords([[0.3, 1.0]])
        np.testing.assert_array_equal(a, b)


class TestOrdering:
    def test_single_point(self):
        np.testing.assert_array_equal(order_locations(LocationSet.from_array([[3.0, 4.0]])), [0])

    def test_sorted_input_is_identity(self):
        pts = np.array([[0, 0], [0, 1], [1, 0], [1, 2], [2, 0]], dtype=float)
        np.testing.assert_array_equal(order_locations(LocationSet.from_array(pts)), np.arange(5))

    def test_coord_sort_lexicographic(self):
        pts = random_points(30, 1)
        order = order_locations(LocationSet.from_array(pts))
        srt = pts[order]
        keys = [tuple(r) for r in srt]
        assert keys == sorted(keys)

    def test_maxmin_square(self):
        pts = [(0, 0), (10, 0), (0, 10), (10, 10), (5, 5)]
        order = order_locations(LocationSet.from_array(pts), "max-min")
        assert order[0] == 4
        # all four corners are equally far from the centre; lowest id wins
        assert order[1] == 0

    def test_maxmin_is_permutation(self):
        order = order_locations(LocationSet.from_array(random_points(40, 2)), "max-min")
        np.testing.assert_array_equal(np.sort(order), np.arange(40))

    def test_empty_set(self):
        with pytest.raises(ValidationError, match="empty reference set"):
            order_locations(LocationSet.from_array(np.zeros((0, 2))))

    def test_unknown_strategy(self):
        with pytest.raises(ValidationError):
            order_locations(LocationSet.from_array([[0.0, 0.0]]), "random")


class TestNeighborIndex:
    def test_first_point_has_no_neighbors(self):
        nbr = build_neighbor_index(random_points(10), 3)
        assert nbr.neighbors(0).size == 0

    def test_line_example(self):
        pts = np.column_stack([np.arange(1, 7), np.zeros(6)]).astype(float)
        nbr = build_neighbor_index(pts, 2)
        np.testing.assert_array_equal(nbr.neighbors(3), [2, 1])

    def test_full_history(self):
        n = 12
        nbr = build_neighbor_index(random_points(n, 3), n - 1)
        for i in range(n):
            np.testing.assert_array_equal(np.sort(nbr.neighbors(i)), np.arange(i))

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 40), m=st.integers(0, 12), seed=st.integers(0, 10_000))
    def test_invariants(self, n, m, seed):
        pts = random_points(n, seed)
        nbr = build_neighbor_index(pts, m)
        for i in range(n):
            nb = nbr.neighbors(i)
            assert nb.size == min(i, m)
            assert np.all(nb < i)
            d = np.linalg.norm(pts[nb] - pts[i], axis=1)
            assert np.all(np.diff(d) >= 0)

    def test_ties_by_index(self):
        # four predecessors at equal distance from the last point
        pts = np.array([[0, 1], [1, 0], [2, 1], [1, 2], [1, 1]], dtype=float)
        nbr = build_neighbor_index(pts, 2)
        np.testing.assert_array_equal(nbr.neighbors(4), [0, 1])

    def test_tree_path_matches_brute_force(self, monkeypatch):
        pts = canonical_coords(random_points(300, 4))
        brute = build_neighbor_index(pts, 7)
        monkeypatch.setattr("rnnc.geometry.BRUTE_FORCE_LIMIT", 10)
        tree = build_neighbor_index(pts, 7)
        np.testing.assert_array_equal(brute.idx, tree.idx)
        assert BRUTE_FORCE_LIMIT == 10_000


class TestQueryNeighbors:
    corners = LocationSet.from_array([(0, 0), (10, 0), (0, 10), (10, 10)])

    def test_centre_of_square(self):
        idx, dist = query_neighbors(self.corners, [(5, 5)], 2)
        np.testing.assert_array_equal(idx[0], [0, 1])
        np.testing.assert_allclose(dist[0], [np.sqrt(50)] * 2)

    def test_coincident_target(self):
        idx, dist = query_neighbors(self.corners, [(10, 0)], 2)
        assert idx[0, 0] == 1 and dist[0, 0] == 0

    def test_exclude_self(self):
        idx, _ = query_neighbors(self.corners, [(10, 0)], 2, exclude_self=True)
        assert 1 not in idx[0]

    def test_budget_exceeds_size(self):
        idx, _ = query_neighbors(self.corners, [(1, 1)], 10)
        np.testing.assert_array_equal(np.sort(idx[0]), np.arange(4))

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            query_neighbors(self.corners, [(1, 1, 1)], 2)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), m=st.integers(1, 8))
    def test_storage_order_invariance(self, seed, m):
        rng = np.random.default_rng(seed)
        pts = np.round(rng.uniform(size=(25, 2)) * 4) / 4  # coarse lattice: many ties
        pts = np.unique(pts, axis=0)
        ids = np.arange(len(pts))
        targets = rng.uniform(size=(5, 2))
        a = LocationSet(pts, ids)
        perm = rng.permutation(len(pts))
        b = LocationSet(pts[perm], ids[perm])
        ia, _ = query_neighbors(a, targets, m)
        ib, _ = query_neighbors(b, targets, m)
        np.testing.assert_array_equal(a.ids[ia], b.ids[ib])

    def test_tree_path_matches_brute_force(self, monkeypatch):
        pts = canonical_coords(random_points(200, 5))
        targets = random_points(30, 6)
        locs = LocationSet.from_array(pts)
        brute, _ = query_neighbors(locs, targets, 6)
        monkeypatch.setattr("rnnc.geometry.BRUTE_FORCE_LIMIT", 10)
        tree, _ = query_neighbors(locs, targets, 6)
        np.testing.assert_array_equal(brute, tree)


class TestKnotSet:
    def test_definition(self):
        rng = np.random.default_rng(7)
        grid = canonical_coords(rng.uniform(size=(60, 2)))
        sets = [grid[:30], grid[20:45], grid[10:15], grid[40:60]]
        for t in range(1, 5):
            kn = {tuple(r) for r in knot_set(sets, t)}
            upper = set().union(*({tuple(r) for r in s} for s in sets[t:])) if t < 4 else set()
            own = {tuple(r) for r in sets[t - 1]}
            assert kn == upper - own

    def test_nested_is_empty(self):
        pts = random_points(10)
        assert len(knot_set([pts, pts[:5]], 1)) == 0
