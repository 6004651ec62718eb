import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cachenet.errors import InvalidParameterError
from cachenet.femto import (
    FemtoInstance,
    coded_expected_delay,
    coded_placement,
    delay_saving,
    greedy_uncoded_placement,
    random_femto_instance,
    read_placement_csv,
    uncoded_expected_delay,
    write_placement_csv,
)
from cachenet.network import zipf_pmf

from oracles import brute_best_uncoded

# H1 serves U1, U2, U3; H2 serves U3, U4
SHARED_USER_RATES = np.array([[5.0, 5.0, 5.0, 0.0], [0.0, 0.0, 5.0, 5.0]])


def small_instance(seed):
    rng = np.random.default_rng(seed)
    H = int(rng.integers(1, 4))
    U = int(rng.integers(1, 6))
    m = int(rng.integers(2, 7))
    rates = np.where(rng.random((H, U)) < 0.7, rng.uniform(1.5, 10, (H, U)), 0.0)
    cap = rng.integers(0, 3, H)
    return FemtoInstance(rates, cap, zipf_pmf(m, float(rng.uniform(0.2, 1.5))), bs_rate=1.0,
                         user_weights=rng.uniform(0.5, 2, U))


class TestUncoded:
    def test_single_helper_caches_most_popular(self):
        inst = FemtoInstance(np.full((1, 5), 4.0), [3], zipf_pmf(10, 0.8))
        pl = greedy_uncoded_placement(inst)
        assert list(pl.cached_files(0)) == [0, 1, 2]

    def test_two_helper_distributed_cache(self):
        inst = FemtoInstance(SHARED_USER_RATES, [1, 1], zipf_pmf(6, 0.6))
        pl = greedy_uncoded_placement(inst)
        assert [list(pl.cached_files(h)) for h in range(2)] == [[0], [1]]
        best, arg = brute_best_uncoded(SHARED_USER_RATES, [1, 1], inst.demand.pmf, 1.0)
        assert pl.delay == pytest.approx(best, abs=1e-12)

    def test_two_helper_shared_user_only(self):
        inst = FemtoInstance(SHARED_USER_RATES[:, 2:3], [1, 1], zipf_pmf(6, 1.5))
        pl = greedy_uncoded_placement(inst)
        assert sorted(int(pl.cached_files(h)[0]) for h in range(2)) == [0, 1]

    def test_two_helper_steep_demand_duplicates(self):
        # once P_r(1) > 2 P_r(2), H2's other user outweighs the shared one
        inst = FemtoInstance(SHARED_USER_RATES, [1, 1], zipf_pmf(6, 1.2))
        pl = greedy_uncoded_placement(inst)
        assert [list(pl.cached_files(h)) for h in range(2)] == [[0], [0]]

    def test_zero_capacity(self):
        inst = FemtoInstance(SHARED_USER_RATES, [0, 0], zipf_pmf(6, 0.6))
        pl = greedy_uncoded_placement(inst)
        assert not pl.x.any() and delay_saving(inst, pl.x) == 0.0

    def test_bs_only_users(self):
        inst = FemtoInstance(np.array([[3.0, 0.0]]), [1], zipf_pmf(4, 1))
        assert list(inst.bs_only_users) == [1]

    def test_invalid(self):
        with pytest.raises(InvalidParameterError):
            FemtoInstance(np.array([[-1.0]]), [1], zipf_pmf(3, 1))
        with pytest.raises(InvalidParameterError):
            FemtoInstance(np.ones((2, 2)), [1], zipf_pmf(3, 1))

    @pytest.mark.parametrize("seed", range(30))
    def test_half_approximation_and_submodularity(self, seed):
        inst = small_instance(seed)
        pl = greedy_uncoded_placement(inst)
        best, _ = brute_best_uncoded(inst.rates, inst.capacity, inst.demand.pmf, inst.bs_rate,
                                     weights=inst.user_weights)
        base = float(np.sum(inst.user_weights))
        opt_saving = base - best
        saving = delay_saving(inst, pl.x)
        assert saving >= 0.5 * opt_saving - 1e-12
        assert np.all(np.diff(pl.gains) <= 1e-12)
        assert np.all(np.array(pl.gains) >= -1e-15)
        assert np.all(pl.x.sum(axis=1) <= inst.capacity)


class TestCoded:
    def test_single_helper_matches_uncoded(self):
        inst = FemtoInstance(np.full((1, 4), 6.0), [2], zipf_pmf(6, 0.7))
        c = coded_placement(inst)
        g = greedy_uncoded_placement(inst)
        assert c.converged
        assert c.delay == pytest.approx(g.delay, abs=1e-9)
        assert np.allclose(c.x, g.x, atol=1e-7)

    def test_two_helper_not_worse_than_greedy(self):
        inst = FemtoInstance(SHARED_USER_RATES, [1, 1], zipf_pmf(6, 0.6))
        assert coded_placement(inst).delay <= greedy_uncoded_placement(inst).delay + 1e-9

    def test_integer_points_agree(self):
        inst = small_instance(3)
        for x in itertools.product([0, 1], repeat=inst.n_helpers * inst.m):
            x = np.array(x, float).reshape(inst.n_helpers, inst.m)
            assert coded_expected_delay(inst, x) == pytest.approx(uncoded_expected_delay(inst, x), abs=1e-12)
            if inst.n_helpers * inst.m > 8:
                break

    def test_fractional_gain(self):
        # one user, two equal helpers of capacity 1/2 file each: MDS halves beat any integer split
        inst = FemtoInstance(np.array([[4.0], [4.0]]), [1, 1], zipf_pmf(2, 0.0))
        c = coded_placement(inst)
        assert np.allclose(c.x.sum(axis=0), [1, 1], atol=1e-7)
        assert c.delay == pytest.approx(0.25, abs=1e-9)

    @pytest.mark.parametrize("seed", range(30))
    def test_relaxation_bound(self, seed):
        inst = small_instance(seed)
        best, _ = brute_best_uncoded(inst.rates, inst.capacity, inst.demand.pmf, inst.bs_rate,
                                     weights=inst.user_weights)
        c = coded_placement(inst)
        assert c.converged
        assert c.delay <= best + 1e-9
        assert np.all(c.x.sum(axis=1) <= inst.capacity + 1e-7)
        assert np.all((c.x >= -1e-12) & (c.x <= 1 + 1e-12))

    def test_iteration_cap_flags(self):
        inst = random_femto_instance(4, 20, 30, 3, 0.6, seed=1)
        c = coded_placement(inst, iterations=1)
        assert not c.converged

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_coded_never_worse_than_greedy(self, seed):
        inst = random_femto_instance(3, 8, 10, 2, 0.7, seed=seed)
        assert coded_placement(inst).delay <= greedy_uncoded_placement(inst).delay + 1e-9


def test_placement_csv(tmp_path):
    inst = random_femto_instance(3, 10, 8, 2, 0.6, seed=4)
    pl = coded_placement(inst)
    write_placement_csv(tmp_path / "x.csv", pl)
    assert (tmp_path / "x.csv").read_text().startswith("helper_id,file_id,fraction\n")
    assert np.array_equal(read_placement_csv(tmp_path / "x.csv", 3, 8), pl.x)
