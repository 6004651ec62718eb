"""Acceptance criteria 1-9, one PASS/FAIL line each (see the terminal summary)."""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from cachenet.caching import optimal_caching_pmf, random_caching_hit_probability, zipf_caching_pmf
from cachenet.coded import decode_check, deliver, random_requests, subpacketize
from cachenet.d2d import (
    binomial_occupancy,
    bs_unicast_baseline,
    expected_throughput_grid,
    expected_throughput_random,
    simulate_tradeoff,
    TradeoffCurve,
)
from cachenet.experiments import ExperimentConfig, compare_curves, run
from cachenet.femto import (
    coded_placement,
    delay_saving,
    greedy_uncoded_placement,
    uncoded_expected_delay,
)
from cachenet.network import place_nodes, zipf_pmf
from cachenet.rng import PERTURB, make_rng
from cachenet.streaming import UtilitySpec, playback_trace, ring_topology, run_streaming, synthetic_library, window_delay

from oracles import active_cluster_monte_carlo, brute_best_uncoded
from test_femto import small_instance
from test_streaming import oracle_playback, oracle_window

pytestmark = pytest.mark.slow


def test_ac1_water_filling_identities(acceptance):
    worst_sum, ratios, support_ok = 0.0, [], True
    for m in (50, 300, 1000):
        for g in (0.2, 0.4, 0.6, 0.8):
            for M in (1, 4, 20):
                for gc in (5, 20, 100):
                    p = optimal_caching_pmf(m, g, M, gc)
                    worst_sum = max(worst_sum, abs(math.fsum(p.p_c) - 1))
                    k = p.m_star
                    fill = np.maximum(1 - p.nu / p.z, 0)
                    support_ok &= (not p.degenerate and np.all(p.p_c[:k] > 0) and np.all(p.p_c[k:] == 0)
                                   and np.allclose(p.p_c, fill, rtol=0, atol=1e-12))
                    ratios.append(k / min(M / g * gc, m))
    ratios = np.array(ratios)
    passed = worst_sum <= 1e-9 and support_ok and np.all((ratios >= 0.25) & (ratios <= 4))
    acceptance(1, passed, f"108 cases, max |sum-1|={worst_sum:.1e}, support consistent={support_ok}, "
                          f"m*/bound in [{ratios.min():.3f}, {ratios.max():.3f}] (allowed [0.25, 4])")
    assert passed


def test_ac2_optimal_pmf_beats_perturbations(acceptance):
    m, g, M, gc, draws = 100, 0.4, 4, 10, 100_000
    model = zipf_pmf(m, g)
    star = optimal_caching_pmf(m, g, M, gc)
    t0 = time.perf_counter()
    # one seed for every pmf: common random numbers sharpen the paired comparison
    h_star, se_star = random_caching_hit_probability(star, model, M, gc, draws, seed=0)
    rng = make_rng(0, PERTURB)
    base = 0.99 * star.p_c + 0.01 / m
    rivals = [rng.dirichlet(500 * base) for _ in range(500)] + [zipf_caching_pmf(m, g).p_c]
    worst = -np.inf
    violations = 0
    for q in rivals:
        h, se = random_caching_hit_probability(q, model, M, gc, draws, seed=0)
        margin = h - h_star
        worst = max(worst, margin)
        violations += margin > 2 * math.hypot(se, se_star)
    elapsed = time.perf_counter() - t0
    passed = violations == 0
    acceptance(2, passed, f"P* hit={h_star:.4f}+-{se_star:.4f}; 501 rivals, max(rival-P*)={worst:+.4f}, "
                          f"{violations} beyond 2 SE; {elapsed:.0f}s")
    assert passed


AC3_SIDES = [1 / k for k in range(1, 21)]


def test_ac3_tradeoff_matches_branch_one(acceptance, tmp_path):
    details, passed = [], True
    for g in (0.2, 0.4, 0.6):
        cfg = ExperimentConfig("tradeoff", {"library_size_files": 1000, "node_count": 10000, "reuse_factor": 4,
                                            "cache_size_files": 1, "zipf_exponent": g,
                                            "cluster_sides_unit": AC3_SIDES}, tuple(range(10)))
        out = tmp_path / f"g{g}"
        run(cfg, out)
        rep = compare_curves(out / "tradeoff.csv", out / "theory.csv", tolerance=0.25, branch=1)
        curve = TradeoffCurve.read_csv(out / "tradeoff.csv")
        _, t_star = curve.t_star()
        mono = bool(np.all(np.diff(t_star) >= 0))
        ok = rep.passed and mono and len(rep.p) >= 3
        passed &= ok
        details.append(f"gamma={g}: {len(rep.p)} pts, max dev {rep.max_abs_deviation:.1%}, T* monotone={mono}")
    acceptance(3, passed, "; ".join(details))
    assert passed


def _valid_coded_params():
    for n in range(1, 9):
        for m in range(1, 9):
            for M in range(1, m + 1):
                if (n * M) % m == 0:
                    yield n, m, M


def test_ac4_coded_exactness(acceptance):
    s = deliver(subpacketize(3, 3, 2), [0, 1, 2])
    golden = (len(s.transmissions) == 3 and all(tx.size == Fraction(1, 6) for tx in s.transmissions)
              and s.total == Fraction(1, 2) and decode_check(s)
              and s.named() == [(0, "B3 ⊕ C1"), (1, "A5 ⊕ C2"), (2, "A6 ⊕ B4")])
    cases = bad_count = bad_decode = not_needed = 0
    for n, m, M in _valid_coded_params():
        plan = subpacketize(n, m, M)
        sessions = [deliver(plan, random_requests(plan, seed)) for seed in range(100)]
        cases += 1
        target = Fraction(m, M) * (1 - Fraction(M, m))
        bad_count += sum(x.total != target for x in sessions)
        bad_decode += sum(not decode_check(x) for x in sessions)
        for i in range(len(sessions[0].transmissions)):
            if all(decode_check(x.without(i)) for x in sessions):
                not_needed += 1
    passed = golden and bad_count == 0 and bad_decode == 0 and not_needed == 0
    acceptance(4, passed, f"golden transcript={golden}; {cases} parameter sets x 100 patterns: "
                          f"{bad_count} count mismatches, {bad_decode} decode failures, "
                          f"{not_needed} removable transmissions")
    assert passed


def test_ac5_greedy_half_guarantee(acceptance):
    ratios, slack = [], []
    for seed in range(30):
        inst = small_instance(seed)
        assert inst.n_helpers <= 3 and inst.m <= 6 and max(inst.capacity) <= 2
        best, _ = brute_best_uncoded(inst.rates, inst.capacity, inst.demand.pmf, inst.bs_rate,
                                     inst.file_size, inst.user_weights)
        base = uncoded_expected_delay(inst, np.zeros((inst.n_helpers, inst.m)))
        opt_saving = base - best
        g = delay_saving(inst, greedy_uncoded_placement(inst).x)
        ratios.append(1.0 if opt_saving <= 1e-15 else g / opt_saving)
        slack.append(coded_placement(inst).delay - best)
    passed = min(ratios) >= 0.5 and max(slack) <= 1e-9
    acceptance(5, passed, f"30 instances: min greedy/opt saving={min(ratios):.4f}, "
                          f"max(coded - integer optimum)={max(slack):+.2e}")
    assert passed


AC6_INSTANCES = [
    # n, m, M, gamma, cluster side, grid placement
    (16, 10, 1, 0.6, 0.5, True),
    (25, 10, 1, 0.6, 1 / 5, False),
    (25, 12, 2, 0.4, 1 / 3, True),
    (9, 30, 1, 0.8, 1.0, True),
    (20, 10, 1, 0.6, 0.5, False),
    (25, 12, 2, 0.4, 1 / 3, False),
    (30, 8, 1, 1.0, 0.5, False),
    (30, 20, 2, 0.6, 1 / 3, False),
    (12, 15, 3, 0.2, 0.5, False),
    (28, 40, 1, 0.8, 1 / 4, False),
]


def test_ac6_expected_throughput_vs_monte_carlo(acceptance):
    worst_z, worst_w = 0.0, 0.0
    for i, (n, m, M, g, side, grid) in enumerate(AC6_INSTANCES):
        model = zipf_pmf(m, g)
        # five independent 20k-draw batches, pooled
        batches = [active_cluster_monte_carlo(model.pmf, n, side, M, 20000,
                                              np.random.default_rng([i, b]), grid) for b in range(5)]
        mean = float(np.mean([b[0] for b in batches]))
        se = math.sqrt(sum(b[1] ** 2 for b in batches)) / len(batches)
        f = expected_throughput_grid if grid else expected_throughput_random
        gap = abs(f(model, n, side, M) - mean)
        worst_z = max(worst_z, gap / se if se > 0 else (0.0 if gap < 1e-12 else math.inf))
        worst_w = max(worst_w, abs(math.fsum(binomial_occupancy(n, side)) - 1))
    passed = worst_z <= 3 and worst_w <= 1e-12
    acceptance(6, passed, f"10 instances x 1e5 draws: max |closed form - MC|={worst_z:.2f} sigma, "
                          f"max |sum of binomial weights - 1|={worst_w:.1e}")
    assert passed


def _t_star_at(curve, p):
    ps, ts = curve.t_star()
    return float(np.interp(p, ps, ts))


def test_ac7_linear_in_cache_size(acceptance):
    geo = place_nodes(2500)
    model = zipf_pmf(300, 0.4)
    sides = [1 / k for k in range(1, 26)]
    t = {}
    for M in (4, 8):
        curve = simulate_tradeoff(geo, model, "optimal", M, sides, K=4, seeds=range(10))
        t[M] = _t_star_at(curve, 0.1)
    ratio = t[8] / t[4]
    passed = 1.7 <= ratio <= 2.3
    acceptance(7, passed, f"T*(0.1): M=4 {t[4]:.3e}, M=8 {t[8]:.3e}, ratio {ratio:.3f} (allowed [1.7, 2.3])")
    assert passed


LEVEL_BITS = [1.0, 1.5, 2.2, 3.0]
LEVEL_QUALITY = [0.80, 0.87, 0.92, 0.95]


def _streaming_runs(rate, Vs, seeds):
    lib = synthetic_library(1, 200, LEVEL_BITS, LEVEL_QUALITY, seed=0)
    top = ring_topology(4, 20, 2, rate)
    return {(V, s): run_streaming(top, lib, UtilitySpec("log", V), 4000, s, warmup_slots=2000)
            for V in Vs for s in seeds}


def test_ac8_streaming_behaviour(acceptance):
    Vs, seeds = (1, 10, 100), range(5)
    ok = _streaming_runs(10.0, Vs, seeds)
    util = np.array([[ok[V, s].utility_sum for V in Vs] for s in seeds])
    back = np.array([[ok[V, s].mean_backlog for V in Vs] for s in seeds])
    ordered = int(np.sum(np.all(np.diff(util, axis=1) >= 0, axis=1)))
    util_mean_ok = bool(np.all(np.diff(util.mean(axis=0)) >= 0))
    backlog_ok = bool(np.all(np.diff(back.mean(axis=0)) > 0))
    flags = sum(r.unstable for r in ok.values())
    over = _streaming_runs(2.5, (10,), seeds)
    over_flagged = all(r.unstable for r in over.values())

    rng = np.random.default_rng(8)
    exact = 0
    for _ in range(1000):
        T = int(rng.integers(1, 80))
        comp = rng.integers(0, 3, T) * (rng.random(T) < 0.6)
        e = rng.integers(0, 6, T)
        xi = float(rng.choice([0.5, 1.0, 2.0]))
        got = playback_trace(comp, e, xi)
        ref = oracle_playback(comp, e, xi)
        n = int(rng.integers(0, 20))
        arr, dl = rng.integers(1, T + 1, n), rng.integers(1, 10, n)
        t, w = int(rng.integers(1, T + 1)), int(rng.integers(1, 12))
        exact += (list(got[0]) == ref[0] and got[1] == ref[1] and got[2] == ref[2]
                  and window_delay(dl, arr, t, w) == oracle_window(dl, arr, t, w))

    passed = (ordered >= 3 and util_mean_ok and backlog_ok and flags == 0 and over_flagged and exact == 1000)
    acceptance(8, passed,
               f"utility order kept in {ordered}/5 seeds (mean {np.round(util.mean(axis=0), 4).tolist()}), "
               f"mean backlog {np.round(back.mean(axis=0), 1).tolist()}, {flags} instability flags; "
               f"2x overload flagged={over_flagged}; playback/window oracle matches {exact}/1000")
    assert passed


def test_ac9_beats_bs_unicast(acceptance):
    n, m, M, g = 10000, 300, 20, 0.4
    model = zipf_pmf(m, g)
    curve = simulate_tradeoff(place_nodes(n), model, "optimal", M, [1 / k for k in range(1, 26)], K=4,
                              seeds=range(5))
    feasible = [q for q in curve.points if q.p_o <= 0.1]
    t_d2d = max(q.t_min for q in feasible) if feasible else 0.0
    t_bs = bs_unicast_baseline(model, n, 1.0).t_min
    ratio = t_d2d / t_bs
    passed = ratio >= 10
    acceptance(9, passed, f"D2D t_min at p_o<=0.1: {t_d2d:.3e}, BS unicast {t_bs:.1e}, ratio {ratio:.0f}x")
    assert passed
