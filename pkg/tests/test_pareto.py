import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from reference_impl import inclusion_exclusion_hv, naive_dominates, naive_fronts

from moboseq.errors import DimensionMismatch, LengthMismatch, UnsupportedDimension
from moboseq.pareto import (
    ParetoState,
    crowding_distance,
    default_reference,
    dominates,
    hv2d_batch,
    hypervolume,
    non_dominated_sort,
    nondominated_mask,
    shannon_entropy,
    update_front,
)


def point_sets(max_n, k_min=1, k_max=4, lo=0.0, hi=1.0, ints=False):
    @st.composite
    def build(draw):
        k = draw(st.integers(k_min, k_max))
        n = draw(st.integers(1, max_n))
        elem = st.integers(0, 4) if ints else st.floats(lo, hi, allow_nan=False)
        pts = draw(st.lists(st.lists(elem, min_size=k, max_size=k), min_size=n, max_size=n))
        return np.asarray(pts, dtype=float)

    return build()


class TestDominates:
    def test_examples(self):
        assert dominates((2, 1), (1, 1))
        assert not dominates((2, 1), (1, 2))
        assert not dominates((2, 1), (2, 1))

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            dominates((1, 2), (1, 2, 3))

    @given(pts=point_sets(2, ints=True))
    def test_matches_naive(self, pts):
        if len(pts) == 2:
            assert dominates(pts[0], pts[1]) == naive_dominates(pts[0], pts[1])


class TestNonDominatedSort:
    def test_example(self):
        assert non_dominated_sort([(1, 2), (2, 1), (0, 0)]) == [[0, 1], [2]]

    def test_identical(self):
        assert non_dominated_sort([(1, 1)] * 5) == [[0, 1, 2, 3, 4]]

    def test_empty(self):
        assert non_dominated_sort([]) == []

    @given(pts=point_sets(200, ints=True))
    def test_matches_naive_oracle(self, pts):
        assert non_dominated_sort(pts) == naive_fronts(pts.tolist())

    @given(pts=point_sets(60))
    def test_mask_equals_first_front(self, pts):
        assert_array_equal(np.flatnonzero(nondominated_mask(pts)), non_dominated_sort(pts)[0])


class TestCrowding:
    def test_two_points(self):
        assert_array_equal(crowding_distance([(0, 1), (1, 0)]), [np.inf, np.inf])

    def test_collinear(self):
        d = crowding_distance([(0, 2), (1, 1), (2, 0)])
        assert d[1] == pytest.approx(2.0)
        assert np.isinf(d[0]) and np.isinf(d[2])

    def test_degenerate_objective(self):
        d = crowding_distance([(0, 5), (1, 5), (2, 5)])
        assert d[1] == pytest.approx(1.0)

    @given(pts=point_sets(12, k_min=2, k_max=3), seed=st.integers(0, 1000))
    def test_order_equivariant(self, pts, seed):
        # distinct values avoid tie-dependent boundary choices
        if any(len(np.unique(pts[:, j])) < len(pts) for j in range(pts.shape[1])):
            return
        perm = np.random.default_rng(seed).permutation(len(pts))
        assert_allclose(crowding_distance(pts[perm]), crowding_distance(pts)[perm])


class TestHypervolume:
    def test_two_boxes(self):
        assert hypervolume([(2, 1), (1, 2)], (0, 0)) == pytest.approx(3.0)

    def test_unit_cube(self):
        assert hypervolume([(1, 1, 1)], (0, 0, 0)) == pytest.approx(1.0)

    def test_one_objective(self):
        assert hypervolume([(3.0,), (5.0,)], (1.0,)) == 4.0

    def test_points_not_beyond_reference_ignored(self):
        assert hypervolume([(0, 5), (-1, 2)], (0, 0)) == 0.0
        assert hypervolume([], (0, 0)) == 0.0

    def test_k5_rejected(self):
        with pytest.raises(UnsupportedDimension):
            hypervolume([(1,) * 5], (0,) * 5)

    def test_fixed_four_objective_reference(self):
        ref = [-3, -3, 0, -1]
        assert hypervolume([(0, 0, 1, 0)], ref) == pytest.approx(3 * 3 * 1 * 1)

    @given(pts=point_sets(8))
    def test_inclusion_exclusion_oracle(self, pts):
        ref = np.zeros(pts.shape[1])
        assert hypervolume(pts, ref) == pytest.approx(inclusion_exclusion_hv(pts, ref), abs=1e-9)

    @given(pts=point_sets(10), extra=st.lists(st.floats(0, 1), min_size=4, max_size=4))
    def test_monotone(self, pts, extra):
        ref = np.zeros(pts.shape[1])
        more = np.vstack([pts, np.asarray(extra[: pts.shape[1]])])
        assert hypervolume(more, ref) >= hypervolume(pts, ref) - 1e-12

    @given(pts=point_sets(10), c=st.floats(0.1, 10), d=st.integers(0, 3))
    def test_scale_covariant(self, pts, c, d):
        k = pts.shape[1]
        d = d % k
        ref = np.full(k, -0.5)
        scale = np.ones(k)
        scale[d] = c
        assert hypervolume(pts * scale, ref * scale) == pytest.approx(c * hypervolume(pts, ref), rel=1e-9)

    @given(pts=point_sets(10))
    def test_invariant_to_duplicates_and_dominated(self, pts):
        ref = np.full(pts.shape[1], -0.1)
        base = hypervolume(pts, ref)
        padded = np.vstack([pts, pts, pts * 0.5])
        assert hypervolume(padded, ref) == pytest.approx(base, rel=1e-12)

    @given(seed=st.integers(0, 2**32 - 1))
    def test_batch_2d_matches_scalar(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.normal(size=(5, 7, 2))
        ref = np.array([-1.0, -0.5])
        got = hv2d_batch(P, ref)
        assert_allclose(got, [hypervolume(p, ref) for p in P], atol=1e-12)


class TestReference:
    def test_rule(self):
        assert_allclose(default_reference([(-1.0, 2.0), (0.5, 3.0)]), [-1.1, 1.8])

    def test_zero_guard(self):
        assert_allclose(default_reference([(0.0,), (1.0,)]), [-0.1])


class TestParetoState:
    def test_dominated_insert(self):
        s = ParetoState(reference=[0, 0])
        s.update("a", (2, 2))
        before = (list(s.ids), s.points.copy(), s.hypervolume)
        _, delta = update_front(s, ("b", (1, 1)))
        assert delta == 0.0
        assert s.ids == before[0] and s.hypervolume == before[2]

    def test_dominating_insert(self):
        s = ParetoState(reference=[0, 0])
        for i, p in enumerate([(1, 3), (2, 2), (3, 1)]):
            s.update(i, p)
        delta = s.update("top", (4, 4))
        assert s.ids == ["top"]
        assert delta == pytest.approx(16 - 6)

    @given(pts=point_sets(40, k_min=2, k_max=4))
    def test_incremental_matches_recompute(self, pts):
        ref = np.full(pts.shape[1], -0.05)
        s = ParetoState(reference=ref)
        for i, p in enumerate(pts):
            delta = s.update(i, p)
            assert delta >= 0
            seen = pts[: i + 1]
            first = non_dominated_sort(seen)[0]
            assert sorted(s.ids) == sorted(first)
            assert s.hypervolume == pytest.approx(hypervolume(seen, ref), abs=1e-12)
            for a in s.points:
                assert not any(naive_dominates(b, a) for b in s.points)

    @given(pts=point_sets(40, k_min=2, k_max=3), cut=st.integers(0, 40))
    def test_update_many_equivalent(self, pts, cut):
        ref = np.full(pts.shape[1], -0.05)
        one, many = ParetoState(reference=ref), ParetoState(reference=ref)
        for i, p in enumerate(pts):
            one.update(i, p)
        cut = min(cut, len(pts))
        many.update_many(list(range(cut)), pts[:cut])
        many.update_many(list(range(cut, len(pts))), pts[cut:])
        assert sorted(one.ids) == sorted(many.ids)
        assert one.hypervolume == pytest.approx(many.hypervolume, abs=1e-12)


class TestEntropy:
    def test_identical(self):
        assert shannon_entropy(["ACD"] * 4) == 0.0

    def test_two_different(self):
        assert shannon_entropy(["AAA", "CCC"]) == pytest.approx(math.log(2))

    def test_uniform(self):
        letters = "ACDEFGHIKLMNPQRSTVWY"
        assert shannon_entropy([c * 3 for c in letters]) == pytest.approx(math.log(20))
        assert shannon_entropy([c * 3 for c in letters], base=2) == pytest.approx(math.log2(20))

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            shannon_entropy(["AA", "A"])

    @given(seqs=st.lists(st.text("ACDEFGHIKLMNPQRSTVWY", min_size=4, max_size=4), min_size=1, max_size=30), seed=st.integers(0, 99))
    def test_permutation_invariant_and_bounded(self, seqs, seed):
        h = shannon_entropy(seqs)
        perm = list(np.random.default_rng(seed).permutation(len(seqs)))
        assert h == pytest.approx(shannon_entropy([seqs[i] for i in perm]), abs=1e-12)
        assert 0.0 <= h <= math.log(20) + 1e-12
