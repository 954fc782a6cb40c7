import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import by_reference, by_stepup_rejections, holm_reference, holm_stepdown_rejections
from tosi.core import (EstimateSet, as_index_set, by_adjust, combine_splits, holm_adjust,
                       make_split_plan, markov_rule, stage1_select, stage2_test, tosi_multi,
                       tosi_single, wald_stat)
from tosi.errors import DomainError, TooFewObservationsError
from tosi.mean import MeanBackend
from tosi.numerics import RngStream, chi2_sf

pvectors = st.lists(st.floats(0, 1), min_size=1, max_size=6)


def scalar_set(indices, theta, var, n=10):
    m = len(indices)
    return EstimateSet(np.array(indices), np.array(theta, float).reshape(m, 1),
                       np.array(var, float).reshape(m, 1, 1), n)


class TestIndexSets:
    def test_valid(self):
        assert as_index_set([3, 1]).tolist() == [3, 1]

    @pytest.mark.parametrize("bad", [[], [1, 1], [-1], [0.5]])
    def test_invalid(self, bad):
        with pytest.raises(DomainError):
            as_index_set(bad)


class TestSplitPlan:
    def test_even(self):
        plan = make_split_plan(4, 1, RngStream(1))
        D1, D2 = plan.splits[0]
        assert len(D1) == len(D2) == 2
        assert sorted(np.concatenate([D1, D2]).tolist()) == [0, 1, 2, 3]

    def test_odd(self):
        D1, D2 = make_split_plan(5, 1, RngStream(1)).splits[0]
        assert (len(D1), len(D2)) == (2, 3)

    def test_deterministic(self):
        a = make_split_plan(100, 8, RngStream(42, "s"))
        b = make_split_plan(100, 8, RngStream(42, "s"))
        assert all(np.array_equal(x1, y1) and np.array_equal(x2, y2)
                   for (x1, x2), (y1, y2) in zip(a.splits, b.splits))

    def test_prefix_stable(self):
        # the first L splits do not depend on how many splits are drawn in total
        a = make_split_plan(30, 2, RngStream(3))
        b = make_split_plan(30, 6, RngStream(3))
        assert all(np.array_equal(x[0], y[0]) for x, y in zip(a.splits, b.splits[:2]))

    @given(st.integers(4, 300), st.integers(1, 5), st.integers(0, 2**32))
    def test_partition(self, n, L, seed):
        plan = make_split_plan(n, L, RngStream(seed))
        for D1, D2 in plan.splits:
            assert len(D1) == n // 2
            assert np.intersect1d(D1, D2).size == 0
            assert np.array_equal(np.union1d(D1, D2), np.arange(n))

    def test_too_small(self):
        with pytest.raises(TooFewObservationsError):
            make_split_plan(3, 1, RngStream(0))


class TestStageOne:
    def test_singleton(self):
        assert stage1_select(scalar_set([7], [0.4], [1.0]), "max") == 7

    def test_argmax(self):
        est = scalar_set([2, 5, 9], [0.1, 0.9, 0.3], [1, 1, 1])
        assert stage1_select(est, "max") == 5
        assert stage1_select(est, "min") == 2

    @pytest.mark.parametrize("mode", ["max", "min"])
    def test_ties_go_to_smallest_index(self, mode):
        assert stage1_select(scalar_set([8, 3], [1.0, -1.0], [1, 1]), mode) == 3

    def test_uses_standardized_norm(self):
        # larger raw estimate but much larger variance loses
        est = scalar_set([0, 1], [2.0, 1.0], [16.0, 1.0])
        assert stage1_select(est, "max") == 1

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.floats(0.1, 10))
    def test_argmax_invariant_to_common_rescaling(self, theta, c):
        m = len(theta)
        est = scalar_set(list(range(m)), theta, np.ones(m))
        scaled = scalar_set(list(range(m)), np.array(theta) * c, np.full(m, c * c))
        assert stage1_select(est, "max") == stage1_select(scaled, "max")

    def test_bad_mode(self):
        with pytest.raises(DomainError):
            stage1_select(scalar_set([0], [1], [1]), "median")


class TestWald:
    def test_zero(self):
        assert wald_stat([0.0], [[1.0]], 10) == 0.0

    def test_scalar(self):
        assert wald_stat([0.2], [[1.0]], 50) == pytest.approx(2.0, rel=1e-8)

    def test_vector(self):
        assert wald_stat([1.0, 2.0], np.diag([1.0, 4.0]), 1) == pytest.approx(2.0, rel=1e-8)

    def test_p_value_uses_chi2_tail(self):
        res = stage2_test(scalar_set([4], [0.3], [2.0], n=40), 4, "max")
        assert res.p_value == chi2_sf(res.statistic, 1)
        assert res.n_bar == 40


class TestHolm:
    def test_hand_example(self):
        assert holm_adjust([0.01, 0.04, 0.03]) == pytest.approx([0.03, 0.06, 0.06])

    def test_single(self):
        assert holm_adjust([0.2]).tolist() == [0.2]

    def test_cap(self):
        assert holm_adjust([1.0, 1.0]).tolist() == [1.0, 1.0]

    @given(pvectors)
    def test_matches_reference(self, p):
        assert np.allclose(holm_adjust(p), holm_reference(p), rtol=0, atol=1e-15)

    @given(pvectors, st.floats(0.001, 0.5))
    def test_decisions_match_stepdown(self, p, alpha):
        adj = holm_adjust(p)
        assert set(np.flatnonzero(adj <= alpha).tolist()) == holm_stepdown_rejections(p, alpha)

    @given(pvectors, st.randoms())
    def test_permutation_equivariant_and_dominating(self, p, random):
        perm = list(range(len(p)))
        random.shuffle(perm)
        adj = holm_adjust(p)
        assert np.allclose(holm_adjust(np.array(p)[perm]), adj[perm])
        assert np.all(adj >= np.array(p) - 1e-15)

    def test_rejects_bad_input(self):
        with pytest.raises(DomainError):
            holm_adjust([0.5, 1.5])
        with pytest.raises(DomainError):
            holm_adjust([])


class TestBY:
    def test_single(self):
        assert by_adjust([0.03]).tolist() == pytest.approx([0.03])

    def test_hand_example(self):
        assert by_adjust([0.01, 0.02]) == pytest.approx([0.03, 0.03])

    def test_all_ones(self):
        assert by_adjust([1.0, 1.0, 1.0]).tolist() == [1.0, 1.0, 1.0]

    @given(pvectors)
    def test_matches_reference(self, p):
        assert np.allclose(by_adjust(p), by_reference(p), rtol=1e-12, atol=1e-15)

    @given(pvectors, st.floats(0.001, 0.5))
    def test_decisions_match_stepup(self, p, alpha):
        adj = by_adjust(p)
        ref = by_stepup_rejections(p, alpha)
        got = set(np.flatnonzero(adj <= alpha).tolist())
        # equality up to ties at the threshold created by floating point rounding
        if got != ref:
            diff = got ^ ref
            assert all(abs(adj[i] - alpha) < 1e-12 for i in diff)


class TestCombination:
    def _tests(self, pvals):
        from tosi.core import TestResult
        return [TestResult("max", 0, 1.0, p, 1, 10) for p in pvals]

    def test_invariants(self):
        res = combine_splits(self._tests([0.004, 0.2, 0.03]), 0.05)
        assert res.combined_p == min(res.adjusted_p)
        assert (res.decision == "reject") == (res.k_rejections >= 1) == (res.combined_p < 0.05)

    def test_single_split_is_identity(self):
        res = combine_splits(self._tests([0.03]), 0.05)
        assert res.combined_p == 0.03 and res.decision == "reject"

    def test_markov_rule(self):
        out = markov_rule([0.01, 0.02, 0.5, 0.6], 0.05, 0.5)
        assert out["gamma"] == 0.025 and out["k_required"] == 2 and out["count"] == 2
        assert out["decision"] == "reject"
        res = combine_splits(self._tests([0.01, 0.02, 0.5, 0.6]), 0.05, markov_r=0.5)
        assert res.markov == out

    def test_to_dict_roundtrip(self):
        import json
        res = combine_splits(self._tests([0.01, 0.5]), 0.05, markov_r=0.5)
        assert json.loads(json.dumps(res.to_dict()))["combined_p"] == res.combined_p


class TestEngine:
    def test_singleton_set_is_plain_wald_on_second_half(self, rng):
        data = rng.normal(0.2, 1.0, size=(40, 3))
        split = make_split_plan(40, 1, RngStream(1)).splits[0]
        res = tosi_single(data, [1], MeanBackend(), "max", split)
        z = data[split[1], 1]
        stat = z.size * z.mean() ** 2 / z.var(ddof=1)
        # the 1e-10 relative jitter of the SPD inverse bounds the agreement
        assert res.statistic == pytest.approx(stat, rel=1e-9)
        assert res.selected_index == 1

    def test_multi_with_one_split_matches_single(self, rng):
        data = rng.normal(size=(30, 5))
        stream = RngStream(8, "m")
        multi = tosi_multi(data, [0, 2, 4], MeanBackend(), "max", 1, 0.05, stream)
        single = tosi_single(data, [0, 2, 4], MeanBackend(), "max",
                             make_split_plan(30, 1, stream).splits[0])
        assert multi.raw_p == (single.p_value,)
        assert multi.decision == ("reject" if single.p_value < 0.05 else "accept")

    def test_multi_is_deterministic(self, rng):
        data = rng.normal(size=(30, 5))
        a = tosi_multi(data, [0, 1, 2], MeanBackend(), "min", 4, 0.05, RngStream(2))
        b = tosi_multi(data, [0, 1, 2], MeanBackend(), "min", 4, 0.05, RngStream(2))
        assert a == b

    def test_tomin_picks_the_zero(self):
        hits = 0
        for r in range(100):
            gen = RngStream(11, "tomin").child(r).generator()
            data = gen.normal(size=(400, 4)) + np.array([0.0, 1.0, 1.5, 2.0])
            split = make_split_plan(400, 1, RngStream(11, "split").child(r)).splits[0]
            hits += tosi_single(data, [0, 1, 2, 3], MeanBackend(), "min", split).selected_index == 0
        assert hits >= 95

    def test_power_grows_with_signal(self):
        rates = []
        for signal in [0.0, 2.0, 6.0]:
            rej = 0
            for r in range(200):
                gen = RngStream(5, "power").child(signal, r).generator()
                data = gen.normal(size=(100, 10))
                data[:, 3] += signal / np.sqrt(100)
                split = make_split_plan(100, 1, RngStream(5, "sp").child(r)).splits[0]
                rej += tosi_single(data, np.arange(10), MeanBackend(), "max", split).p_value < 0.05
            rates.append(rej / 200)
        assert rates[0] < rates[1] < rates[2]
        assert rates[2] > 0.8
