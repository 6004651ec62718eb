"""Subpacketized coded caching with XOR multicast delivery between devices.

Each file is split into subfiles indexed by the ``t``-subsets ``S`` of users,
``t = nM/m``; every subfile is further cut into ``t`` parts, one labeled by each
member of ``S``. User ``u`` caches all parts of every subfile with ``u in S``.

For delivery, inside every ``(t+1)``-subset ``S`` each member ``u`` broadcasts
the XOR over the other members ``v`` of the part labeled ``u`` of subfile
``(f_v, S minus v)``. Users are 0-based in the API and 1-based in text dumps.
"""
from __future__ import annotations

import functools
import itertools
import random
import string
from dataclasses import dataclass
from fractions import Fraction

from .errors import InvalidParameterError, UnsupportedParametersError

__all__ = [
    "SubpacketPlan",
    "Packet",
    "CodedTransmission",
    "DeliverySession",
    "subpacketize",
    "place_coded",
    "deliver",
    "decode_check",
    "random_requests",
]


def _colex(n, k):
    return sorted(itertools.combinations(range(n), k), key=lambda s: s[::-1])


@dataclass(frozen=True)
class SubpacketPlan:
    n: int
    m: int
    M: int
    t: int
    subsets: tuple  # t-subsets in colex order

    @property
    def packets_per_file(self):
        return self.t * len(self.subsets)

    @property
    def packet_size(self):
        return Fraction(1, self.packets_per_file) if self.packets_per_file else Fraction(0)

    def packets_of_file(self, f):
        return [Packet(f, S, lab) for S in self.subsets for lab in S]

    def packet_number(self, p):
        """1-based position of ``p`` within its file (subset rank, then label position)."""
        i = self._rank[p.subset]
        return i * self.t + p.subset.index(p.label) + 1

    @property
    def _rank(self):
        return {S: i for i, S in enumerate(self.subsets)}


@dataclass(frozen=True, order=True)
class Packet:
    file: int
    subset: tuple
    label: int

    def dump(self):
        s = ",".join(str(u + 1) for u in self.subset)
        return f"{self.file + 1}:{{{s}}}:{self.label + 1}"


@dataclass(frozen=True)
class CodedTransmission:
    sender: int
    payload: tuple  # Packets, one per receiver
    size: Fraction

    def dump(self):
        return f"{self.sender + 1} | " + " ⊕ ".join(p.dump() for p in self.payload)


@dataclass(frozen=True)
class DeliverySession:
    plan: SubpacketPlan
    requests: tuple
    transmissions: tuple

    @property
    def total(self):
        return sum((tx.size for tx in self.transmissions), Fraction(0))

    def dump(self):
        return "\n".join(tx.dump() for tx in self.transmissions) + ("\n" if self.transmissions else "")

    def named(self):
        """Transmissions with letter file names and per-file packet numbers, e.g. ``B3 ⊕ C1``."""
        if self.plan.m > 26:
            raise InvalidParameterError("letter names need m <= 26")
        out = []
        for tx in self.transmissions:
            names = [f"{string.ascii_uppercase[p.file]}{self.plan.packet_number(p)}" for p in tx.payload]
            out.append((tx.sender, " ⊕ ".join(names)))
        return out

    def without(self, index):
        tx = self.transmissions[:index] + self.transmissions[index + 1:]
        return DeliverySession(self.plan, self.requests, tx)


def subpacketize(n, m, M):
    if n < 1 or m < 1 or M < 0 or M > m:
        raise InvalidParameterError(f"need n, m >= 1 and 0 <= M <= m, got n={n}, m={m}, M={M}")
    if (n * M) % m:
        raise UnsupportedParametersError(f"t = nM/m = {n * M}/{m} is not an integer")
    t = n * M // m
    if t < 1:
        raise UnsupportedParametersError("t = nM/m must be at least 1")
    return SubpacketPlan(n, m, M, t, tuple(_colex(n, t)))


def place_coded(plan):
    """Per-user sets of cached packets."""
    caches = [set() for _ in range(plan.n)]
    for S in plan.subsets:
        for f in range(plan.m):
            for lab in S:
                p = Packet(f, S, lab)
                for u in S:
                    caches[u].add(p)
    return [frozenset(c) for c in caches]


def cache_size(plan, cache):
    return len(cache) * plan.packet_size


def deliver(plan, requests):
    """Worst-case schedule: repeated requests get no special treatment."""
    requests = tuple(int(f) for f in requests)
    if len(requests) != plan.n or any(not 0 <= f < plan.m for f in requests):
        raise InvalidParameterError("need one valid file request per user")
    size = plan.packet_size
    txs = []
    for S in _colex(plan.n, plan.t + 1):
        for u in S:
            payload = tuple(
                Packet(requests[v], tuple(w for w in S if w != v), u) for v in S if v != u
            )
            txs.append(CodedTransmission(u, payload, size))
    return DeliverySession(plan, requests, tuple(txs))


@functools.lru_cache(maxsize=64)
def _decode_tables(plan):
    """Packet bit positions, per-user cache masks and per-file packet masks."""
    index = {}
    for f in range(plan.m):
        for p in plan.packets_of_file(f):
            index[p] = len(index)
    cached = []
    for c in place_coded(plan):
        mask = 0
        for p in c:
            mask |= 1 << index[p]
        cached.append(mask)
    wanted = []
    for f in range(plan.m):
        mask = 0
        for p in plan.packets_of_file(f):
            mask |= 1 << index[p]
        wanted.append(mask)
    return index, cached, wanted


def decode_check(session, users=None):
    """GF(2) elimination per user over cached packets plus every broadcast payload.

    True iff every packet of each user's requested file lies in the span.
    Cached packets are unit vectors, so they are projected out of the
    payloads before elimination.
    """
    plan = session.plan
    index, cached, wanted = _decode_tables(plan)
    rows = []
    for tx in session.transmissions:
        v = 0
        for p in tx.payload:
            v ^= 1 << index[p]
        rows.append(v)
    for u in range(plan.n) if users is None else users:
        keep = ~cached[u]
        basis = {}
        for v in rows:
            v &= keep
            while v:
                b = v.bit_length() - 1
                if b not in basis:
                    basis[b] = v
                    break
                v ^= basis[b]
        missing = wanted[session.requests[u]] & keep
        while missing:
            b = missing.bit_length() - 1
            v = 1 << b
            while v:
                top = v.bit_length() - 1
                if top not in basis:
                    return False
                v ^= basis[top]
            missing ^= 1 << b
    return True


def random_requests(plan, seed, distinct=False):
    rnd = random.Random(seed)
    if distinct:
        if plan.n > plan.m:
            raise InvalidParameterError("distinct requests need n <= m")
        return tuple(rnd.sample(range(plan.m), plan.n))
    return tuple(rnd.randrange(plan.m) for _ in range(plan.n))
