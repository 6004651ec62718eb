"""Cache placement in helper stations (femto-caching).

A user fetching file ``f`` pays ``file_size / rate`` seconds. Uncoded service
uses the best single source: the fastest adjacent helper holding ``f`` or the
base station. Coded (MDS) service fills the file from the fastest helpers
first, each contributing at most the fraction it stores, with the base station
supplying the remainder. At integer placements the two delays coincide, so the
coded problem relaxes the uncoded one.

The coded expected delay is piecewise linear and convex in the placement, and
is minimized exactly as a linear program.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import InvalidParameterError
from .network import RequestModel

__all__ = [
    "FemtoInstance",
    "PlacementMatrix",
    "uncoded_expected_delay",
    "coded_expected_delay",
    "delay_saving",
    "greedy_uncoded_placement",
    "coded_placement",
    "random_femto_instance",
    "write_placement_csv",
    "read_placement_csv",
]


@dataclass(frozen=True)
class FemtoInstance:
    """Helpers, users, and long-term average link rates.

    ``rates[h, u]`` is the helper-to-user rate in bit/s, zero when ``h`` is not
    in the neighborhood ``N(u)``. Users with no helper are served by the base
    station only.
    """

    rates: np.ndarray = field(repr=False)
    capacity: np.ndarray
    demand: RequestModel
    bs_rate: float = 1.0
    file_size: float = 1.0
    user_weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 2 or np.any(rates < 0):
            raise InvalidParameterError("rates must be a nonnegative (H, U) array")
        cap = np.asarray(self.capacity, dtype=np.int64).reshape(-1)
        if cap.shape[0] != rates.shape[0] or np.any(cap < 0):
            raise InvalidParameterError("capacity must hold one nonnegative entry per helper")
        if self.bs_rate <= 0 or self.file_size <= 0:
            raise InvalidParameterError("bs_rate and file_size must be positive")
        w = np.ones(rates.shape[1]) if self.user_weights is None else np.asarray(self.user_weights, float)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "capacity", cap)
        object.__setattr__(self, "user_weights", w)

    @property
    def n_helpers(self):
        return self.rates.shape[0]

    @property
    def n_users(self):
        return self.rates.shape[1]

    @property
    def m(self):
        return self.demand.m

    def neighbors(self, u):
        return np.flatnonzero(self.rates[:, u] > 0)

    @property
    def bs_only_users(self):
        return np.flatnonzero(~np.any(self.rates > 0, axis=0))


@dataclass(frozen=True)
class PlacementMatrix:
    """``x[h, f]``: fraction of file ``f`` stored at helper ``h``."""

    x: np.ndarray = field(repr=False)
    delay: float
    coded: bool = False
    converged: bool = True
    gains: tuple = ()

    def cached_files(self, h):
        return np.flatnonzero(self.x[h] > 0)


def _useful_helpers(inst, u):
    """Adjacent helpers faster than the BS, sorted by decreasing rate then id."""
    hs = [h for h in inst.neighbors(u) if inst.rates[h, u] > inst.bs_rate]
    return sorted(hs, key=lambda h: (-inst.rates[h, u], h))


def uncoded_expected_delay(inst, x):
    """Weighted expected download time with best-single-source service."""
    x = np.asarray(x) > 0.5
    total = 0.0
    for u in range(inst.n_users):
        best = np.full(inst.m, inst.bs_rate)
        for h in inst.neighbors(u):
            best = np.where(x[h], np.maximum(best, inst.rates[h, u]), best)
        total += inst.user_weights[u] * float(inst.demand.pmf @ (inst.file_size / best))
    return total


def coded_expected_delay(inst, x):
    """Weighted expected download time with fastest-first MDS service."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    bs = inst.file_size / inst.bs_rate
    total = 0.0
    for u in range(inst.n_users):
        hs = _useful_helpers(inst, u)
        delay = np.full(inst.m, bs)
        got = np.zeros(inst.m)
        for h in hs:
            take = np.minimum(x[h], 1.0 - got)
            delay -= take * (bs - inst.file_size / inst.rates[h, u])
            got += take
        total += inst.user_weights[u] * float(inst.demand.pmf @ delay)
    return total


def delay_saving(inst, x, coded=False):
    """Expected download-time saving relative to BS-only service.

    Accumulated from per-link gains, so an empty placement saves exactly 0.
    """
    bs = inst.file_size / inst.bs_rate
    total = 0.0
    if coded:
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        for u in range(inst.n_users):
            got = np.zeros(inst.m)
            gain = np.zeros(inst.m)
            for h in _useful_helpers(inst, u):
                take = np.minimum(x[h], 1.0 - got)
                gain += take * (bs - inst.file_size / inst.rates[h, u])
                got += take
            total += inst.user_weights[u] * float(inst.demand.pmf @ gain)
        return total
    x = np.asarray(x) > 0.5
    for u in range(inst.n_users):
        best = np.full(inst.m, inst.bs_rate)
        for h in inst.neighbors(u):
            best = np.where(x[h], np.maximum(best, inst.rates[h, u]), best)
        total += inst.user_weights[u] * float(inst.demand.pmf @ (bs - inst.file_size / best))
    return total


def greedy_uncoded_placement(inst):
    """Greedy maximization of the delay saving under per-helper capacities.

    Each step adds the (helper, file) pair with the largest marginal saving
    among helpers with free space, ties going to the lowest helper then file
    index. The saving is monotone submodular and the capacities form a
    partition matroid, so the result is within 1/2 of the optimum.
    """
    H, m = inst.n_helpers, inst.m
    x = np.zeros((H, m))
    # best[u, f]: current best source rate for user u and file f
    best = np.full((inst.n_users, m), inst.bs_rate)
    w = inst.user_weights[:, None] * inst.demand.pmf[None, :] * inst.file_size
    free = inst.capacity.copy()
    gains = []
    while True:
        open_h = np.flatnonzero(free > 0)
        if len(open_h) == 0:
            break
        top, arg = -1.0, None
        for h in open_h:
            r = inst.rates[h][:, None]
            improved = np.maximum(best, r)
            g = np.sum(w * (1.0 / best - 1.0 / improved), axis=0)
            g[x[h] > 0] = -np.inf
            f = int(np.argmax(g))
            if g[f] > top:
                top, arg = float(g[f]), (int(h), f)
        if arg is None:
            break
        h, f = arg
        x[h, f] = 1.0
        free[h] -= 1
        best[:, f] = np.maximum(best[:, f], inst.rates[h])
        gains.append(top)
        if np.all(x[h] > 0):
            free[h] = 0
    return PlacementMatrix(x, uncoded_expected_delay(inst, x), gains=tuple(gains))


def coded_placement(inst, iterations=10_000, tolerance=1e-9):
    """Optimal fractional (MDS-coded) placement.

    Variables are ``x[h, f]`` and, per user ``u``, file ``f`` and rank ``j`` in
    the user's speed-ordered helper list, the cumulative fraction ``y`` fetched
    from the ``j`` fastest helpers: ``y <= 1`` and ``y <= sum_{i<=j} x[h_i, f]``.
    The delay is ``bs - sum_j (d_{j+1} - d_j) y_j`` with per-unit delays
    ``d_j`` ascending and ``d_{J+1}`` the BS delay, so minimizing it drives
    every ``y`` to its upper envelope.

    ``iterations`` and ``tolerance`` are passed to the HiGHS solver; an early
    stop returns the solver's last point with ``converged=False``.
    """
    H, m = inst.n_helpers, inst.m
    bs = inst.file_size / inst.bs_rate
    nx = H * m
    cost = [np.zeros(nx)]
    rows, cols, vals = [], [], []
    n_y = 0
    row = 0
    for u in range(inst.n_users):
        hs = _useful_helpers(inst, u)
        if not hs:
            continue
        d = [inst.file_size / inst.rates[h, u] for h in hs] + [bs]
        coef = np.array([d[j] - d[j + 1] for j in range(len(hs))])  # <= 0
        for f in range(m):
            wt = inst.user_weights[u] * inst.demand.pmf[f]
            c = np.zeros(len(hs))
            c[:] = wt * coef
            cost.append(c)
            for j in range(len(hs)):
                yv = nx + n_y + j
                rows.append(row)
                cols.append(yv)
                vals.append(1.0)
                for h in hs[: j + 1]:
                    rows.append(row)
                    cols.append(h * m + f)
                    vals.append(-1.0)
                row += 1
            n_y += len(hs)
    # capacity rows
    for h in range(H):
        for f in range(m):
            rows.append(row)
            cols.append(h * m + f)
            vals.append(1.0)
        row += 1
    b = np.concatenate([np.zeros(row - H), inst.capacity.astype(float)])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(row, nx + n_y))
    c = np.concatenate(cost)
    res = linprog(
        c,
        A_ub=A,
        b_ub=b,
        bounds=(0.0, 1.0),
        method="highs",
        options={
            "maxiter": int(iterations),
            "primal_feasibility_tolerance": tolerance,
            "dual_feasibility_tolerance": tolerance,
        },
    )
    if res.x is None:
        x = np.zeros((H, m))
        converged = False
    else:
        x = np.clip(res.x[:nx].reshape(H, m), 0.0, 1.0)
        converged = res.status == 0
    return PlacementMatrix(x, coded_expected_delay(inst, x), coded=True, converged=bool(converged))


def random_femto_instance(n_helpers, n_users, m, capacity, gamma_r, seed, *,
                          radius=0.5, bs_rate=1.0, rate_scale=10.0):
    """Helpers and users placed uniformly in the unit square.

    A user is adjacent to helpers within ``radius``; the rate decays linearly
    from ``rate_scale`` at distance 0 to ``2 * bs_rate`` at the radius.
    """
    from .network import zipf_pmf
    from .rng import INSTANCE, make_rng

    rng = make_rng(seed, INSTANCE)
    hp = rng.random((n_helpers, 2))
    up = rng.random((n_users, 2))
    d = np.hypot(*(hp[:, None, :] - up[None, :, :]).transpose(2, 0, 1))
    hi, lo = rate_scale, 2.0 * bs_rate
    rates = np.where(d <= radius, hi - (hi - lo) * d / radius, 0.0)
    cap = np.broadcast_to(np.asarray(capacity), (n_helpers,))
    return FemtoInstance(rates, cap, zipf_pmf(m, gamma_r), bs_rate=bs_rate)


def write_placement_csv(path, placement):
    """Rows ``helper_id, file_id, fraction`` for every nonzero entry (file_id is 1-based)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["helper_id", "file_id", "fraction"])
        H, m = placement.x.shape
        for h in range(H):
            for f in range(m):
                v = float(placement.x[h, f])
                if v > 0:
                    w.writerow([h, f + 1, repr(v)])


def read_placement_csv(path, n_helpers, m):
    x = np.zeros((n_helpers, m))
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            x[int(r["helper_id"]), int(r["file_id"]) - 1] = float(r["fraction"])
    return x
