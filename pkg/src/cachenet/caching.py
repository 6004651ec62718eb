"""Caching distributions and cache assignments for clustered D2D networks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .network import RequestModel, zipf_pmf
from .rng import CACHES, HIT_MC, make_rng

__all__ = [
    "CachingPMF",
    "CacheAssignment",
    "optimal_caching_pmf",
    "zipf_caching_pmf",
    "sample_random_caches",
    "alias_table",
    "deterministic_cluster_cache",
    "cluster_hit_probability",
    "random_caching_hit_probability",
    "hit_probability",
    "write_pmf_csv",
    "read_pmf_csv",
    "write_assignment_csv",
    "read_assignment_csv",
]


@dataclass(frozen=True)
class CachingPMF:
    """Per-slot caching distribution over the library.

    For the water-filling solution ``p_c = [1 - nu / z]^+`` restricted to the
    first ``m_star`` files. ``degenerate`` marks the top-M fallback used when
    ``M (g_c - 1) <= 1``, where ``nu`` and ``z`` are undefined (NaN).
    """

    p_c: np.ndarray = field(repr=False)
    m_star: int
    nu: float
    z: np.ndarray = field(repr=False)
    degenerate: bool = False

    @property
    def m(self):
        return len(self.p_c)

    @property
    def support(self):
        return int(np.count_nonzero(self.p_c > 0))


def optimal_caching_pmf(m, gamma_r, M, g_c):
    """Water-filling caching pmf maximizing the in-cluster hit probability.

    ``z_f = P_r(f) ** (1 / (M (g_c - 1) - 1))`` and the support ``m_star`` is the
    largest prefix for which ``nu = (m_star - 1) / sum_{f <= m_star} 1/z_f``
    leaves every ``1 - nu / z_f`` positive.

    The computation runs on ``w_f = z_1 / z_f`` in the log domain, so tiny
    exponents (small caches) cannot overflow; ``p_c`` is invariant to the
    common scale of ``z``.
    """
    if M < 1 or M > m:
        raise InvalidParameterError(f"need 1 <= M <= m, got M={M}, m={m}")
    if g_c < 1:
        raise InvalidParameterError("g_c must be >= 1")
    model = zipf_pmf(m, gamma_r)
    if M * (g_c - 1) <= 1:
        p = np.zeros(m)
        p[:M] = 1.0 / M
        nan = np.full(m, np.nan)
        return CachingPMF(p, M, math.nan, nan, degenerate=True)

    a = M * (g_c - 1) - 1.0
    log_pr = np.log(model.pmf)
    log_w = (log_pr[0] - log_pr) / a  # log(z_1 / z_f), non-decreasing in f
    log_s = np.logaddexp.accumulate(log_w)
    k = np.arange(1, m + 1)
    with np.errstate(divide="ignore"):
        # nu(k) / z_k < 1  <=>  log(k-1) + log w_k - log S_k < 0
        ok = np.log(k - 1.0) + log_w - log_s < 0
    ok[0] = True
    m_star = int(np.flatnonzero(ok)[-1]) + 1

    ratio = np.zeros(m)
    ratio[:m_star] = (m_star - 1) * np.exp(log_w[:m_star] - log_s[m_star - 1])
    p = np.zeros(m)
    p[:m_star] = 1.0 - ratio[:m_star]
    z = np.exp(log_pr / a)
    with np.errstate(over="ignore"):
        nu = (m_star - 1) / math.fsum(1.0 / z[:m_star]) if m_star > 1 else 0.0
    return CachingPMF(p, m_star, float(nu), z)


def zipf_caching_pmf(m, gamma_c):
    """Zipf-shaped caching pmf with its own exponent ``gamma_c``."""
    p = np.array(zipf_pmf(m, gamma_c).pmf)
    return CachingPMF(p, m, math.nan, np.full(m, np.nan))


@dataclass(frozen=True)
class CacheAssignment:
    """``files[u]`` lists the ``M`` distinct file indices cached by node ``u``."""

    files: np.ndarray = field(repr=False)
    truncated: bool = False
    _checked: bool = field(default=False, repr=False, compare=False)

    @property
    def n(self):
        return self.files.shape[0]

    @property
    def M(self):
        return self.files.shape[1]

    def __post_init__(self):
        f = np.asarray(self.files)
        if f.ndim != 2:
            raise InvalidParameterError("cache files must be an (n, M) array")
        if f.shape[1] > 1 and not self._checked:
            s = np.sort(f, axis=1)
            if np.any(s[:, 1:] == s[:, :-1]):
                raise InvalidParameterError("duplicate file within a node cache")


def _draw(cdf, u):
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def alias_table(p):
    """Walker/Vose alias table ``(prob, alias)`` for O(1) sampling from ``p``."""
    p = np.asarray(p, dtype=float)
    m = len(p)
    scaled = p * (m / p.sum())
    prob = np.ones(m)
    alias = np.arange(m)
    small = [i for i in range(m) if scaled[i] < 1.0]
    large = [i for i in range(m) if scaled[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] -= 1.0 - scaled[s]
        (small if scaled[l] < 1.0 else large).append(l)
    return prob, alias


def _alias_draw(table, u):
    prob, alias = table
    x = u * len(prob)
    i = x.astype(np.int64)
    np.minimum(i, len(prob) - 1, out=i)
    keep = x < (i + prob[i])
    return np.where(keep, i, alias[i])


def sample_random_caches(pmf, n, M, seed, *, max_rounds=64):
    """Each node draws ``M`` files i.i.d. from ``pmf``, redrawing duplicates.

    Slots are filled in order; a draw that repeats an earlier slot of the same
    node is redrawn. After ``max_rounds`` rejection rounds the stragglers draw
    from the pmf renormalized over their unused files, which has the same law
    as continuing to reject.
    """
    p = np.asarray(pmf.p_c if isinstance(pmf, CachingPMF) else pmf, dtype=float)
    support = np.flatnonzero(p > 0)
    if len(support) < M:
        raise InvalidParameterError(f"caching pmf support {len(support)} is smaller than M={M}")
    cols = _sample_columns(p, n, M, make_rng(seed, CACHES), max_rounds)
    files = np.column_stack(cols) if cols else np.empty((n, 0), dtype=np.int64)
    return CacheAssignment(files, _checked=True)


def _sample_columns(p, n, M, rng, max_rounds=64):
    table = alias_table(p)
    cols = []
    for j in range(M):
        col = _alias_draw(table, rng.random(n))
        if j:
            clash = _clashes(cols, col)
            rounds = 0
            while clash.any() and rounds < max_rounds:
                idx = np.flatnonzero(clash)
                sub = _alias_draw(table, rng.random(len(idx)))
                col[idx] = sub
                clash[idx] = _clashes([c[idx] for c in cols], sub)
                rounds += 1
            for u in np.flatnonzero(clash):
                q = p.copy()
                q[[c[u] for c in cols]] = 0.0
                c = np.cumsum(q)
                col[u] = _draw(c / c[-1], rng.random())
        cols.append(col)
    return cols


def _clashes(cols, col):
    clash = np.zeros(len(col), dtype=bool)
    for c in cols:
        clash |= c == col
    return clash


def deterministic_cluster_cache(partition, model, M):
    """Disjoint caching of the most popular files inside every cluster.

    The ``i``-th member of a cluster (by node id) caches files
    ``i*M .. i*M + M - 1``. When a cluster holds more than ``m / M`` nodes the
    blocks wrap around the library; the union is then the whole library and
    the result is flagged ``truncated``.
    """
    m = model.m
    if M < 1 or M > m:
        raise InvalidParameterError(f"need 1 <= M <= m, got M={M}, m={m}")
    n = len(partition.cluster_of)
    rank_in_cluster = np.empty(n, dtype=np.int64)
    order = np.argsort(partition.cluster_of, kind="stable")
    starts = np.concatenate([[0], np.cumsum(partition.sizes)])
    cl_sorted = partition.cluster_of[order]
    rank_in_cluster[order] = np.arange(n) - starts[cl_sorted]
    files = (rank_in_cluster[:, None] * M + np.arange(M)[None, :]) % m
    truncated = bool(np.any(partition.sizes * M > m))
    return CacheAssignment(files, truncated=truncated)


def cluster_hit_probability(assignment, model, partition):
    """Probability that a uniformly chosen user's request lies in its cluster's union cache."""
    n = assignment.n
    C = partition.n_clusters
    held = np.zeros((C, model.m), dtype=bool)
    held[np.repeat(partition.cluster_of, assignment.M), assignment.files.ravel()] = True
    mass = held.astype(float) @ model.pmf
    return float(np.mean(mass[partition.cluster_of])) if n else 0.0


def random_caching_hit_probability(pmf, model, M, g_c, draws=100_000, seed=0):
    """Monte Carlo hit probability under random caching.

    Each draw builds a fresh cluster of ``g_c`` nodes with independent random
    caches and one Zipf request from a member; a hit means some member
    (including the requester) caches the file. Returns ``(estimate, stderr)``.
    """
    g_c = int(g_c)
    if g_c < 1 or draws < 1:
        raise InvalidParameterError("need g_c >= 1 and draws >= 1")
    p_c = np.asarray(pmf.p_c if isinstance(pmf, CachingPMF) else pmf, dtype=float)
    if np.count_nonzero(p_c) < M:
        raise InvalidParameterError(f"caching pmf support is smaller than M={M}")
    cols = _sample_columns(p_c, draws * g_c, M, make_rng(seed, CACHES))
    u = make_rng(seed, HIT_MC).random(draws)
    req = np.minimum(np.searchsorted(model.cdf, u, side="right"), model.m - 1)
    hit = np.zeros(draws, dtype=bool)
    for c in cols:
        hit |= np.any(c.reshape(draws, g_c) == req[:, None], axis=1)
    p = float(hit.mean())
    return p, math.sqrt(max(p * (1 - p), 0.0) / draws)


def hit_probability(caching, model, partition=None, *, M=None, g_c=None, draws=100_000, seed=0):
    """Dispatch to the closed form (assignments) or Monte Carlo (pmfs).

    Returns ``(value, stderr)``; the closed form has zero standard error.
    """
    if isinstance(caching, CacheAssignment):
        if partition is None:
            raise InvalidParameterError("a partition is required for a cache assignment")
        return cluster_hit_probability(caching, model, partition), 0.0
    if M is None or g_c is None:
        raise InvalidParameterError("M and g_c are required for a caching pmf")
    return random_caching_hit_probability(caching, model, M, g_c, draws, seed)


def write_pmf_csv(path, pmf):
    p = pmf.p_c if isinstance(pmf, CachingPMF) else pmf.pmf if isinstance(pmf, RequestModel) else pmf
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "mass"])
        for i, v in enumerate(np.asarray(p, dtype=float), start=1):
            w.writerow([i, repr(float(v))])


def read_pmf_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ranks = [int(r["rank"]) for r in rows]
    if ranks != list(range(1, len(rows) + 1)):
        raise InvalidParameterError("pmf CSV ranks must be 1..m in order")
    return np.array([float(r["mass"]) for r in rows])


def write_assignment_csv(path, assignment):
    """One row per cached file: ``node_id, file_id, fraction`` (file_id is the 1-based rank)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "file_id", "fraction"])
        for u, row in enumerate(assignment.files):
            for f in row:
                w.writerow([u, int(f) + 1, "1"])


def read_assignment_csv(path):
    per_node = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            if float(r["fraction"]) != 1.0:
                raise InvalidParameterError("cache assignments hold whole files only")
            per_node.setdefault(int(r["node_id"]), []).append(int(r["file_id"]) - 1)
    n = max(per_node) + 1 if per_node else 0
    files = [per_node.get(u, []) for u in range(n)]
    if len({len(f) for f in files}) > 1:
        raise InvalidParameterError("every node must cache the same number of files")
    return CacheAssignment(np.array(files, dtype=np.int64).reshape(n, -1))
