from fractions import Fraction
from math import comb

import pytest
from hypothesis import given, settings, strategies as st

from cachenet.coded import (
    cache_size,
    decode_check,
    deliver,
    place_coded,
    random_requests,
    subpacketize,
)
from cachenet.errors import InvalidParameterError, UnsupportedParametersError

GOLDEN_DUMP = """\
1 | 2:{1,3}:1 ⊕ 3:{1,2}:1
2 | 1:{2,3}:2 ⊕ 3:{1,2}:2
3 | 1:{2,3}:3 ⊕ 2:{1,3}:3
"""


def valid_params(max_n=8, max_m=8):
    for n in range(1, max_n + 1):
        for m in range(1, max_m + 1):
            for M in range(1, m + 1):
                if (n * M) % m == 0:
                    yield n, m, M


class TestSubpacketize:
    def test_three_user_example(self):
        plan = subpacketize(3, 3, 2)
        assert plan.t == 2 and plan.packets_per_file == 6
        assert plan.subsets == ((0, 1), (0, 2), (1, 2))

    def test_small(self):
        assert subpacketize(2, 2, 1).packets_per_file == 2

    def test_count_oracle(self):
        plan = subpacketize(6, 3, 2)
        assert plan.t == 4 and plan.packets_per_file == 4 * comb(6, 4) == 60

    def test_colex(self):
        plan = subpacketize(5, 5, 2)
        keys = [tuple(reversed(s)) for s in plan.subsets]
        assert keys == sorted(keys) and len(set(plan.subsets)) == comb(5, 2)

    def test_errors(self):
        with pytest.raises(UnsupportedParametersError):
            subpacketize(3, 4, 2)
        with pytest.raises(InvalidParameterError):
            subpacketize(3, 3, 4)


class TestPlacement:
    def test_three_user_memory(self):
        plan = subpacketize(3, 3, 2)
        assert all(cache_size(plan, c) == 2 for c in place_coded(plan))

    def test_everything_cached(self):
        plan = subpacketize(4, 2, 2)
        caches = place_coded(plan)
        assert plan.t == 4 and all(cache_size(plan, c) == 2 for c in caches)

    def test_replication(self):
        plan = subpacketize(6, 3, 2)
        caches = place_coded(plan)
        for f in range(3):
            for p in plan.packets_of_file(f):
                assert sum(p in c for c in caches) == 4

    @pytest.mark.parametrize("n,m,M", list(valid_params()))
    def test_memory_exact(self, n, m, M):
        plan = subpacketize(n, m, M)
        assert all(cache_size(plan, c) == Fraction(M) for c in place_coded(plan))


class TestDelivery:
    def test_three_user_transcript(self):
        s = deliver(subpacketize(3, 3, 2), [0, 1, 2])
        assert len(s.transmissions) == 3
        assert all(tx.size == Fraction(1, 6) for tx in s.transmissions)
        assert s.total == Fraction(1, 2)
        assert s.dump() == GOLDEN_DUMP
        assert s.named() == [(0, "B3 ⊕ C1"), (1, "A5 ⊕ C2"), (2, "A6 ⊕ B4")]
        assert decode_check(s)

    def test_no_transmissions_when_all_cached(self):
        s = deliver(subpacketize(3, 3, 3), [0, 1, 2])
        assert s.transmissions == () and s.total == 0 and decode_check(s)

    def test_formula_large(self):
        plan = subpacketize(15, 300, 20)
        assert plan.t == 1
        n, t = 15, 1
        total = Fraction(comb(n, t + 1) * (t + 1), t * comb(n, t))
        assert total == Fraction(300, 20) * (1 - Fraction(20, 300)) == 14

    @pytest.mark.parametrize("n,m,M", [p for p in valid_params() if p[0] * p[2] // p[1] < p[0]])
    def test_count_and_decoding(self, n, m, M):
        plan = subpacketize(n, m, M)
        for seed in range(100):
            req = random_requests(plan, seed)
            s = deliver(plan, req)
            assert len(s.transmissions) == comb(n, plan.t + 1) * (plan.t + 1)
            assert s.total == Fraction(m, M) * (1 - Fraction(M, m))
            if seed < 10 or n <= 5:
                assert decode_check(s)

    def test_payload_invariants(self):
        plan = subpacketize(5, 5, 2)
        caches = place_coded(plan)
        s = deliver(plan, [0, 0, 3, 1, 4])
        for tx in s.transmissions:
            assert all(p in caches[tx.sender] for p in tx.payload)
            group = {tx.sender}.union(*(p.subset for p in tx.payload))
            assert len(group) == plan.t + 1
            receivers = [(group - set(p.subset)).pop() for p in tx.payload]
            assert len(set(receivers)) == len(receivers)
            for v, p in zip(receivers, tx.payload):
                assert p not in caches[v]

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from([p for p in valid_params(6, 6) if p[0] * p[2] // p[1] < p[0]]), st.integers(0, 10 ** 6))
    def test_decode_random(self, params, seed):
        plan = subpacketize(*params)
        assert decode_check(deliver(plan, random_requests(plan, seed)))


class TestMutation:
    @pytest.mark.parametrize("n,m,M", [(3, 3, 2), (4, 4, 1), (4, 2, 1), (5, 5, 3), (6, 3, 1)])
    def test_every_transmission_is_needed(self, n, m, M):
        plan = subpacketize(n, m, M)
        patterns = [tuple(range(n))] if n <= m else []
        patterns += [random_requests(plan, s) for s in range(20)]
        base = deliver(plan, patterns[0])
        for i in range(len(base.transmissions)):
            assert any(not decode_check(deliver(plan, r).without(i)) for r in patterns)

    def test_decoder_is_not_trivially_true(self):
        s = deliver(subpacketize(3, 3, 2), [0, 1, 2])
        for i in range(3):
            assert not decode_check(s.without(i))


def test_random_requests_distinct():
    plan = subpacketize(4, 8, 2)
    r = random_requests(plan, 0, distinct=True)
    assert len(set(r)) == 4
    with pytest.raises(InvalidParameterError):
        random_requests(subpacketize(4, 2, 1), 0, distinct=True)
