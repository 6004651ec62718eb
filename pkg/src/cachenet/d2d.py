"""Clustered one-hop D2D delivery: links, TDMA scheduling, throughput-outage.

Throughputs are normalized by the link rate ``C_r`` unless stated otherwise.

Two per-user throughput estimators are provided by :func:`simulate_tradeoff`:

``"ensemble"`` (default)
    The per-user average throughput ``E[T_u]`` over requests, caches and
    scheduling, where a realization in which ``u`` is in outage contributes
    zero. Users in clusters with the same node count are exchangeable, so their
    samples are pooled; ``t_min`` is the smallest pooled mean.

``"served"``
    The minimum over served users of the time-average throughput within one
    realization, averaged over seeds. It measures the worst cluster load and
    exceeds the ensemble value by roughly ``1 / (1 - p_o)``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression
from scipy.stats import binom

from .caching import (
    deterministic_cluster_cache,
    optimal_caching_pmf,
    sample_random_caches,
    zipf_caching_pmf,
)
from .errors import InvalidParameterError
from .network import partition_clusters, place_nodes, sample_requests

__all__ = [
    "PotentialLink",
    "LinkScan",
    "TradeoffPoint",
    "TradeoffCurve",
    "ScalingCurveParams",
    "CachingSpec",
    "find_potential_links",
    "schedule_round",
    "round_robin_counts",
    "simulate_tradeoff",
    "cluster_active_probability",
    "expected_throughput_grid",
    "expected_throughput_random",
    "binomial_occupancy",
    "theorem_curve",
    "branch1_throughput",
    "bs_unicast_baseline",
]


@dataclass(frozen=True)
class PotentialLink:
    requester: int
    holder: int
    file: int
    same_cluster: bool = True


@dataclass(frozen=True)
class LinkScan:
    """Outcome of matching every request against its cluster's caches.

    ``holder[u]`` is the lowest-id other cluster member caching ``u``'s file,
    or -1. ``self_served`` users find the file in their own cache; ``outage``
    users find it nowhere in the cluster.
    """

    requests: np.ndarray = field(repr=False)
    holder: np.ndarray = field(repr=False)
    self_served: np.ndarray = field(repr=False)
    cluster_of: np.ndarray = field(repr=False)

    @property
    def has_link(self):
        return self.holder >= 0

    @property
    def outage(self):
        return ~self.self_served & ~self.has_link

    @property
    def links(self):
        return tuple(
            PotentialLink(int(u), int(self.holder[u]), int(self.requests[u]))
            for u in np.flatnonzero(self.has_link)
        )


def find_potential_links(requests, caches, partition):
    requests = np.asarray(requests, dtype=np.int64)
    files = caches.files
    n, M = files.shape
    if len(requests) != n or len(partition.cluster_of) != n:
        raise InvalidParameterError("requests, caches and partition disagree on n")
    cl = np.asarray(partition.cluster_of, dtype=np.int64)
    self_served = np.any(files == requests[:, None], axis=1) if M else np.zeros(n, bool)
    holder = np.full(n, -1, dtype=np.int64)
    if M and n:
        m_span = int(max(files.max(), requests.max())) + 1
        keys = (np.repeat(cl, M) * m_span + files.ravel())
        nodes = np.repeat(np.arange(n), M)
        order = np.lexsort((nodes, keys))
        keys, nodes = keys[order], nodes[order]
        first = np.concatenate([[True], keys[1:] != keys[:-1]])
        ukeys, lowest = keys[first], nodes[first]
        q = cl * m_span + requests
        pos = np.searchsorted(ukeys, q)
        pos_c = np.minimum(pos, len(ukeys) - 1)
        found = (pos < len(ukeys)) & (ukeys[pos_c] == q)
        holder = np.where(found & ~self_served, lowest[pos_c], -1)
    return LinkScan(requests, holder, self_served, cl)


def _cluster_link_lists(scan, admitted=None):
    """Admitted requesters per cluster, in increasing node id."""
    mask = scan.has_link if admitted is None else admitted
    users = np.flatnonzero(mask)
    out = {}
    for u in users:
        out.setdefault(int(scan.cluster_of[u]), []).append(int(u))
    return out


def schedule_round(links, partition, pattern, rr_state=None):
    """One TDMA round: ``K`` subslots, one per color.

    In the subslot of color ``k`` every cluster of that color with at least one
    admitted link serves exactly one of them, cycling round-robin across
    rounds. ``links`` is a sequence of :class:`PotentialLink`. Returns the list
    of per-subslot active links and the advanced round-robin state.
    """
    state = dict(rr_state or {})
    per_cluster = {}
    for lk in sorted(links, key=lambda l: l.requester):
        per_cluster.setdefault(int(partition.cluster_of[lk.requester]), []).append(lk)
    subslots = [[] for _ in range(pattern.K)]
    for c in sorted(per_cluster):
        lst = per_cluster[c]
        i = state.get(c, 0)
        subslots[int(pattern.colors[c])].append(lst[i % len(lst)])
        state[c] = i + 1
    return subslots, state


def round_robin_counts(n_links, rounds):
    """Times each of ``n_links`` round-robin positions is served in ``rounds`` rounds."""
    base, extra = divmod(rounds, n_links)
    return base + (np.arange(n_links) < extra)


@dataclass(frozen=True)
class TradeoffPoint:
    p_o: float
    t_min: float
    stderr: float = 0.0
    g_c: float = 0.0
    seeds: int = 1
    p_o_stderr: float = 0.0


@dataclass(frozen=True)
class TradeoffCurve:
    points: tuple

    def sorted(self):
        return TradeoffCurve(tuple(sorted(self.points, key=lambda p: (p.p_o, p.t_min))))

    def t_star(self):
        """Non-decreasing envelope of ``t_min`` in ``p_o`` (isotonic least squares).

        Returns ``(p, t)`` arrays sorted by outage.
        """
        pts = self.sorted().points
        p = np.array([q.p_o for q in pts])
        t = np.array([q.t_min for q in pts])
        if len(t) == 0:
            return p, t
        w = np.array([1.0 / max(q.stderr, 1e-12) ** 2 for q in pts])
        w = w / w.max()
        fit = isotonic_regression(t, weights=w, increasing=True).x
        return p, fit

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["g_c", "p_o", "t_min_normalized", "stderr", "seed_count"])
            for q in self.sorted().points:
                w.writerow([repr(float(q.g_c)), repr(float(q.p_o)), repr(float(q.t_min)),
                            repr(float(q.stderr)), q.seeds])

    @staticmethod
    def read_csv(path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return TradeoffCurve(tuple(
            TradeoffPoint(float(r["p_o"]), float(r["t_min_normalized"]), float(r["stderr"]),
                          float(r["g_c"]), int(r["seed_count"]))
            for r in rows))


@dataclass(frozen=True)
class CachingSpec:
    """How nodes fill their caches: ``optimal`` (water-filling), ``zipf`` or ``deterministic``."""

    kind: str = "optimal"
    gamma_c: float | None = None

    def __post_init__(self):
        if self.kind not in ("optimal", "zipf", "deterministic"):
            raise InvalidParameterError(f"unknown caching kind {self.kind!r}")
        if self.kind == "zipf" and self.gamma_c is None:
            raise InvalidParameterError("zipf caching needs gamma_c")


def _replication(geometry, model, caching, M, side, K, rounds, seed, admission_cap):
    """One (cluster side, seed) replication; returns per-seed statistics."""
    n = geometry.n
    part = partition_clusters(geometry, side)
    g_nom = n * side * side
    requests = sample_requests(model, n, seed)
    if caching.kind == "deterministic":
        caches = deterministic_cluster_cache(part, model, M)
    else:
        if caching.kind == "optimal":
            pmf = optimal_caching_pmf(model.m, model.gamma_r, M, g_nom)
        else:
            pmf = zipf_caching_pmf(model.m, caching.gamma_c)
        caches = sample_random_caches(pmf, n, M, seed)
    scan = find_potential_links(requests, caches, part)

    admitted = scan.has_link.copy()
    if admission_cap is not None:
        for c, users in _cluster_link_lists(scan).items():
            for u in users[admission_cap:]:
                admitted[u] = False
    outage = ~scan.self_served & ~admitted

    thr = np.zeros(n)
    for c, users in _cluster_link_lists(scan, admitted).items():
        thr[users] = round_robin_counts(len(users), rounds) / (K * rounds)

    nonself = ~scan.self_served
    sizes = part.sizes[part.cluster_of]
    classes = {}
    for size in np.unique(sizes[nonself]):
        sel = nonself & (sizes == size)
        classes[int(size)] = (float(thr[sel].sum()), int(sel.sum()))
    served_min = float(thr[admitted].min()) if admitted.any() else 0.0
    return {
        "p_o": float(outage.mean()),
        "classes": classes,
        "served_min": served_min,
        "g_nominal": g_nom,
        "served": int(admitted.sum()),
        "outage": int(outage.sum()),
        "self": int(scan.self_served.sum()),
    }


def _reduce(reps, estimator):
    S = len(reps)
    p = np.array([r["p_o"] for r in reps])
    p_se = float(p.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0
    if estimator == "served":
        t = np.array([r["served_min"] for r in reps])
        se = float(t.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0
        return float(p.mean()), float(t.mean()), se, p_se
    pooled = {}
    for r in reps:
        for k, (s, c) in r["classes"].items():
            a = pooled.setdefault(k, [0.0, 0])
            a[0] += s
            a[1] += c
    if not pooled:
        return float(p.mean()), 0.0, 0.0, p_se
    means = {k: s / c for k, (s, c) in pooled.items() if c}
    k_min = min(means, key=lambda k: (means[k], k))
    per_seed = [r["classes"][k_min][0] / r["classes"][k_min][1]
                for r in reps if k_min in r["classes"] and r["classes"][k_min][1]]
    se = float(np.std(per_seed, ddof=1) / math.sqrt(len(per_seed))) if len(per_seed) > 1 else 0.0
    return float(p.mean()), float(means[k_min]), se, p_se


def _run_job(args):
    return _replication(*args)


def simulate_tradeoff(geometry, model, caching, M, cluster_sides, *, K, rounds=1000,
                      seeds=(0,), admission_cap=None, estimator="ensemble", workers=1):
    """Empirical throughput-outage points, one per cluster side.

    Every seed redraws requests and (random) caches. Inside a cluster the
    admitted links share the cluster's subslot round-robin, so a link served
    ``s`` times in ``rounds`` rounds gets normalized throughput ``s / (K rounds)``.
    ``admission_cap`` optionally admits at most that many links per cluster
    (lowest requester ids first); rejected requests count as outage.
    """
    if rounds < 1 or len(seeds) == 0:
        raise InvalidParameterError("rounds and seeds must be positive")
    if estimator not in ("ensemble", "served"):
        raise InvalidParameterError(f"unknown estimator {estimator!r}")
    if not isinstance(caching, CachingSpec):
        caching = CachingSpec(caching)
    jobs = [(geometry, model, caching, M, float(s), int(K), int(rounds), int(seed), admission_cap)
            for s in cluster_sides for seed in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    points = []
    S = len(seeds)
    for i, side in enumerate(cluster_sides):
        reps = results[i * S:(i + 1) * S]
        p, t, se, p_se = _reduce(reps, estimator)
        points.append(TradeoffPoint(p, t, se, reps[0]["g_nominal"], S, p_se))
    return TradeoffCurve(tuple(points)).sorted()


# closed-form expected throughput ------------------------------------------------

def cluster_active_probability(model, k, M):
    """Probability that a cluster of ``k`` users with disjoint caching has a link.

    User ``i`` caches block ``i`` of ``M`` consecutive popular files (wrapping
    past ``m``), so it has a potential link with probability
    ``P_CVC(k) - P_r(own block)``, where ``P_CVC(k)`` is the request mass of the
    ``min(kM, m)`` most popular files.
    """
    if k <= 0:
        return 0.0
    m = model.m
    pmf = model.pmf
    p_cvc = math.fsum(pmf[: min(k * M, m)])
    no_link = 1.0
    for i in range(k):
        own = (i * M + np.arange(M)) % m
        no_link *= 1.0 - (p_cvc - float(pmf[np.unique(own)].sum()))
    return 1.0 - no_link


def _check_r(r):
    if not (0 < r <= 1):
        raise InvalidParameterError(f"cluster size r must lie in (0, 1], got {r!r}")


def expected_throughput_grid(model, n, r, M):
    """Expected number of simultaneously active clusters, grid placement.

    Clusters are squares of side ``r``; the occupancy law is the exact
    distribution of cluster sizes on the ``floor(sqrt(n))**2`` grid. Reuse
    (the factor ``1/K``) is not applied; multiply by ``C_r / K`` for bit/s/Hz.
    """
    _check_r(r)
    part = partition_clusters(place_nodes(n, "grid"), r)
    sizes, counts = np.unique(part.sizes, return_counts=True)
    return float(sum(c * cluster_active_probability(model, int(k), M)
                     for k, c in zip(sizes, counts)))


def binomial_occupancy(n, r):
    """``Pr[K = k]`` for ``k = 0..n`` with i.i.d. uniform nodes and cluster area ``r**2``."""
    return binom.pmf(np.arange(n + 1), n, r * r)


def expected_throughput_random(model, n, r, M):
    """Expected active clusters with i.i.d. uniform placement: ``r**-2 sum_k P(active|k) Pr[K=k]``."""
    _check_r(r)
    w = binomial_occupancy(n, r)
    act = np.array([cluster_active_probability(model, k, M) for k in range(n + 1)])
    return float(w @ act) / (r * r)


# Closed-form order terms ------------------------------------------------------

@dataclass(frozen=True)
class ScalingCurveParams:
    """Parameters of the asymptotic throughput-outage curve.

    ``A`` scales the second branch and defaults to 1; ``B``, ``D`` and
    ``a_gamma`` have no default and the corresponding branches are only
    produced when they are given. ``rho_2`` defaults to its lower limit.
    """

    gamma_r: float
    A: float = 1.0
    B: float | None = None
    D: float | None = None
    a_gamma: float | None = None
    rho_2: float | None = None

    def __post_init__(self):
        if not (0 < self.gamma_r < 1):
            raise InvalidParameterError("the scaling curve needs 0 < gamma_r < 1")

    @property
    def alpha(self):
        g = self.gamma_r
        return (1 - g) / (2 - g)

    def rho_2_min(self, M):
        g = self.gamma_r
        return ((1 - g) / (g ** g * M ** (1 - g))) ** (1 / (2 - g))


def branch1_throughput(p, gamma_r, m, M, K, c_r=1.0):
    """First-branch throughput as a function of outage ``p <= 1 - gamma_r``.

    Inverts ``p = (1 - gamma) exp(gamma - rho)`` for ``rho`` and returns
    ``(C_r / K) M / (rho m)``; NaN outside the branch.
    """
    p = np.asarray(p, dtype=float)
    g = gamma_r
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = g - np.log(p / (1 - g))
        t = c_r / K * M / (rho * m)
    return np.where((p > 0) & (p <= 1 - g + 1e-15), t, np.nan)


def theorem_curve(params, m, M, K, c_r=1.0, g_c=None, *, rho_1=None, n_points=200):
    """Rows ``(branch, p, T)`` of the dominant terms, sorted by branch then ``p``.

    Branch 1 sweeps ``rho_1`` (default ``geomspace(gamma, 20 gamma)``). Branch 2
    is evaluated at each cluster size in ``g_c`` with ``g_c <= gamma m / M``.
    Branches 3 and 4 need ``B``/``a_gamma`` and ``D``/``a_gamma``; when missing
    the curve stops after branch 2 with a warning. Vanishing corrections are
    not included.
    """
    g = params.gamma_r
    rows = []
    rho = np.geomspace(g, 20 * g, n_points) if rho_1 is None else np.asarray(rho_1, float)
    if np.any(rho < g):
        raise InvalidParameterError("rho_1 must be >= gamma_r")
    for r in rho:
        rows.append((1, (1 - g) * math.exp(g - r), c_r / K * M / (r * m)))
    if g_c is not None:
        for gc in np.atleast_1d(g_c):
            if gc > g * m / M:
                continue
            p = 1 - g ** g * (M * gc / m) ** (1 - g)
            if not (0 <= p < 1):
                continue
            rows.append((2, p, c_r * params.A / K * M / (m * (1 - p) ** (1 / (1 - g)))))
    alpha = params.alpha
    if params.B is None or params.D is None or params.a_gamma is None:
        warnings.warn("branches 3-4 need B, D and a_gamma; curve truncated", stacklevel=2)
    else:
        rho2 = params.rho_2 if params.rho_2 is not None else params.rho_2_min(M)
        lo = 1 - g ** g * M ** (1 - g) * rho2 ** (1 - g) * m ** (-alpha)
        hi = 1 - params.a_gamma * m ** (-alpha)
        for p in np.linspace(max(lo, 0.0), min(hi, 1.0), n_points):
            rows.append((3, p, c_r * params.B / K * m ** (-alpha)))
        for p in np.linspace(max(hi, 0.0), 1.0, n_points):
            rows.append((4, p, c_r * params.D / K * m ** (-alpha)))
    rows.sort(key=lambda x: (x[0], x[1]))
    return rows


def write_theory_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["branch", "p", "T"])
        for b, p, t in rows:
            w.writerow([b, repr(float(p)), repr(float(t))])


def read_theory_csv(path):
    with open(path, newline="") as fh:
        return [(int(r["branch"]), float(r["p"]), float(r["T"])) for r in csv.DictReader(fh)]


def bs_unicast_baseline(model, n, bs_rate, rounds=None):
    """Every request served by the BS in round robin; nobody is in outage.

    With ``rounds`` given the minimum realized throughput over users is
    returned, otherwise the long-run value ``bs_rate / n``.
    """
    if bs_rate <= 0 or n < 1:
        raise InvalidParameterError("bs_rate must be positive and n >= 1")
    if rounds is None:
        t = bs_rate / n
    else:
        t = bs_rate * float(round_robin_counts(n, rounds).min()) / rounds
    return TradeoffPoint(p_o=0.0, t_min=t, g_c=float(n), seeds=1)
