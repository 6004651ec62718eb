"""Slotted simulator of queue-driven adaptive video streaming from helpers.

Every slot each user requests its next chunk from the adjacent helper with the
shortest queue, picking the quality level that minimizes ``Q B - Theta D``.
Helpers independently serve the user with the largest ``Q C`` product, and a
user may be served by several helpers in the same slot. All decisions use the
start-of-slot state and are applied together.

Units: bits are abstract "bits" per slot, quality indices are dimensionless,
time is in slots (one chunk plays per slot).
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .rng import LIBRARY, RATES, STREAMING, TOPOLOGY, make_rng

__all__ = [
    "VideoLibraryStream",
    "StreamingTopology",
    "UtilitySpec",
    "StreamingResult",
    "synthetic_library",
    "read_library",
    "write_library",
    "select_helper",
    "select_quality",
    "schedule_macro_diversity",
    "step_queues",
    "auxiliary_target",
    "step_virtual_queue",
    "step_playback",
    "window_delay",
    "prebuffer_start",
    "playback_trace",
    "run_streaming",
    "backlog_slope",
    "ring_topology",
    "write_summary_csv",
]


@dataclass(frozen=True)
class VideoLibraryStream:
    """``bits[f, t, l]`` and ``quality[f, t, l]`` for file ``f``, chunk ``t``, level ``l``."""

    bits: np.ndarray = field(repr=False)
    quality: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=float)
        d = np.asarray(self.quality, dtype=float)
        if b.ndim != 3 or b.shape != d.shape or b.shape[2] < 1:
            raise InvalidParameterError("bits and quality must share shape (files, chunks, levels)")
        if np.any(np.diff(b, axis=2) <= 0) or np.any(np.diff(d, axis=2) <= 0):
            raise InvalidParameterError("bits and quality must increase strictly with level")
        if np.any(b <= 0):
            raise InvalidParameterError("chunk sizes must be positive")
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "quality", d)

    @property
    def n_files(self):
        return self.bits.shape[0]

    @property
    def n_chunks(self):
        return self.bits.shape[1]

    @property
    def n_levels(self):
        return self.bits.shape[2]

    @property
    def quality_range(self):
        return float(self.quality.min()), float(self.quality.max())


def synthetic_library(n_files, n_chunks, level_bits, level_quality, seed, *, jitter=0.2):
    """VBR-style library: per-chunk multiplicative jitter on sizes, additive on quality.

    The jitter is applied per chunk to all levels alike, so monotonicity in the
    level is preserved whenever the nominal ladders are strictly increasing and
    the quality perturbation stays below half the smallest ladder gap.
    """
    lb = np.asarray(level_bits, dtype=float)
    lq = np.asarray(level_quality, dtype=float)
    rng = make_rng(seed, LIBRARY)
    scale = 1.0 + jitter * (2.0 * rng.random((n_files, n_chunks, 1)) - 1.0)
    gap = np.min(np.diff(lq)) if len(lq) > 1 else 1.0
    shift = 0.45 * gap * jitter * (2.0 * rng.random((n_files, n_chunks, 1)) - 1.0)
    return VideoLibraryStream(lb[None, None, :] * scale, lq[None, None, :] + shift)


LIBRARY_COLUMNS = ("file", "chunk", "level", "bits", "quality")


def write_library(path, lib):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LIBRARY_COLUMNS)
        for f in range(lib.n_files):
            for t in range(lib.n_chunks):
                for l in range(lib.n_levels):
                    w.writerow([f, t, l, repr(float(lib.bits[f, t, l])), repr(float(lib.quality[f, t, l]))])


def read_library(path):
    """Read a ``file, chunk, level, bits, quality`` table (0-based indices, dense)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidParameterError("empty library file")
    idx = np.array([[int(r["file"]), int(r["chunk"]), int(r["level"])] for r in rows])
    shape = tuple(idx.max(axis=0) + 1)
    if len(rows) != shape[0] * shape[1] * shape[2]:
        raise InvalidParameterError("library table must list every (file, chunk, level)")
    b = np.full(shape, np.nan)
    d = np.full(shape, np.nan)
    for (f, t, l), r in zip(idx, rows):
        b[f, t, l] = float(r["bits"])
        d[f, t, l] = float(r["quality"])
    if np.isnan(b).any():
        raise InvalidParameterError("duplicate entries in library table")
    return VideoLibraryStream(b, d)


@dataclass(frozen=True)
class StreamingTopology:
    """Helpers, users, cached content and link rates.

    ``rates`` is ``(H, U)`` peak bits per slot (zero off the adjacency) for the
    constant and two-state models, or a ``(T, H, U)`` trace. Under the
    two-state model each link independently drops to ``low_factor`` of its
    peak with probability ``p_bad`` every slot.
    """

    rates: np.ndarray = field(repr=False)
    helper_files: np.ndarray = field(repr=False)
    user_files: np.ndarray
    rate_model: str = "constant"
    p_bad: float = 0.0
    low_factor: float = 0.5
    bs_delay: int = 5

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if self.rate_model not in ("constant", "two-state", "trace"):
            raise InvalidParameterError(f"unknown rate model {self.rate_model!r}")
        if (r.ndim != 3) == (self.rate_model == "trace") or np.any(r < 0):
            raise InvalidParameterError("rates must be nonnegative; 3-D exactly for the trace model")
        hf = np.asarray(self.helper_files, dtype=bool)
        uf = np.asarray(self.user_files, dtype=np.int64)
        if hf.shape[0] != r.shape[-2] or uf.shape[0] != r.shape[-1]:
            raise InvalidParameterError("helper_files / user_files disagree with rates")
        if self.bs_delay < 1:
            raise InvalidParameterError("bs_delay must be >= 1 slot")
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "helper_files", hf)
        object.__setattr__(self, "user_files", uf)

    @property
    def adjacency(self):
        return (self.rates > 0).any(axis=0) if self.rates.ndim == 3 else self.rates > 0

    @property
    def n_helpers(self):
        return self.rates.shape[-2]

    @property
    def n_users(self):
        return self.rates.shape[-1]

    def candidates(self):
        """``(H, U)`` mask of helpers adjacent to ``u`` that cache ``u``'s file."""
        return self.adjacency & self.helper_files[:, self.user_files]

    def rates_at(self, t, rng=None):
        if self.rate_model == "trace":
            return self.rates[t % self.rates.shape[0]]
        if self.rate_model == "two-state":
            bad = rng.random(self.rates.shape) < self.p_bad
            return np.where(bad, self.rates * self.low_factor, self.rates)
        return self.rates


@dataclass(frozen=True)
class UtilitySpec:
    """Concave utility family (``log`` or ``power`` with exponent in (0, 1)) and weight ``V``."""

    family: str = "log"
    V: float = 1.0
    exponent: float = 0.5

    def __post_init__(self):
        if self.family not in ("log", "power"):
            raise InvalidParameterError(f"unknown utility family {self.family!r}")
        if self.V < 0:
            raise InvalidParameterError("V must be >= 0")
        if self.family == "power" and not (0 < self.exponent < 1):
            raise InvalidParameterError("power utility needs 0 < exponent < 1")

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "log":
            return np.log(x)
        return x ** self.exponent


# policy pieces ------------------------------------------------------------------

def select_helper(queues_u, candidates_u):
    """Shortest-queue helper among candidates (lowest id on ties); -1 if none."""
    q = np.where(candidates_u, np.asarray(queues_u, dtype=float), np.inf)
    if not np.any(candidates_u):
        return -1
    return int(np.argmin(q))


def select_quality(q_star, theta, bits, quality):
    """``argmin_l q_star * bits[l] - theta * quality[l]``, lowest level on ties."""
    return int(np.argmin(q_star * np.asarray(bits) - theta * np.asarray(quality)))


def schedule_macro_diversity(queues, rates):
    """Per helper, the user maximizing ``Q C``; returns service ``mu`` of shape ``(H, U)``.

    A helper whose best weight is zero idles.
    """
    w = np.asarray(queues, float) * np.asarray(rates, float)
    mu = np.zeros_like(w)
    best = np.argmax(w, axis=1)
    h = np.arange(w.shape[0])
    active = w[h, best] > 0
    mu[h[active], best[active]] = np.asarray(rates, float)[h[active], best[active]]
    return mu


def step_queues(queues, service, arrivals):
    """``Q <- max(Q - mu, 0) + arrivals``."""
    return np.maximum(np.asarray(queues) - service, 0.0) + arrivals


def auxiliary_target(theta, utility, lo, hi):
    """``argmax_{lo <= g <= hi} V phi(g) - theta g`` in closed form."""
    theta = np.asarray(theta, dtype=float)
    V = utility.V
    if V == 0:
        return np.full_like(theta, lo)
    with np.errstate(divide="ignore"):
        if utility.family == "log":
            g = V / theta
        else:
            a = utility.exponent
            g = (V * a / theta) ** (1.0 / (1.0 - a))
    return np.clip(g, lo, hi)


def step_virtual_queue(theta, chosen_quality, utility, lo, hi):
    """``Theta <- max(Theta + gamma - D, 0)`` with ``gamma`` from :func:`auxiliary_target`."""
    g = auxiliary_target(theta, utility, lo, hi)
    return np.maximum(np.asarray(theta) + g - chosen_quality, 0.0)


def step_playback(psi_prev, playing, completed):
    """``Psi_t = max(Psi_{t-1} - 1{playing}, 0) + |a_t|``."""
    return np.maximum(np.asarray(psi_prev) - np.asarray(playing, dtype=int), 0) + completed


def window_delay(delays, arrivals, t, window):
    """Largest delay among chunks that arrived in ``[t - window + 1, t]``; 0 if none."""
    if window < 1:
        raise InvalidParameterError("window must be >= 1")
    best = 0
    for w, a in zip(delays, arrivals):
        if t - window + 1 <= a <= t and w > best:
            best = w
    return best


def prebuffer_start(psi, e, xi, t0=1):
    """First slot ``t >= t0`` with ``Psi_t > 0`` and ``Psi_t >= xi E_t``; None if never.

    ``psi[i]`` and ``e[i]`` describe slot ``t0 + i``.
    """
    if xi <= 0:
        raise InvalidParameterError("xi must be > 0")
    for i, (p, x) in enumerate(zip(psi, e)):
        if p > 0 and p >= xi * x:
            return t0 + i
    return None


def playback_trace(completed, e, xi):
    """Buffer recursion with pre-buffering and re-buffering for one user.

    ``completed[i]`` and ``e[i]`` are ``|a_t|`` and ``E_t`` for slot
    ``t = i + 1``. Playback starts at the first slot meeting the
    :func:`prebuffer_start` rule and consumes one chunk per slot afterwards.
    When the buffer empties during playback a stall is logged and the same
    rule decides the restart. Returns ``(psi, starts, stalls)``.
    """
    psi = np.zeros(len(completed), dtype=np.int64)
    starts, stalls = [], []
    prev, start = 0, None
    for i, (a, x) in enumerate(zip(completed, e)):
        t = i + 1
        playing = start is not None and t > start
        cur = max(prev - int(playing), 0) + int(a)
        if playing and cur == 0:
            stalls.append(t)
            start = None
        elif start is None and cur > 0 and cur >= xi * x:
            start = t
            starts.append(t)
        psi[i] = cur
        prev = cur
    return psi, starts, stalls


# simulation ----------------------------------------------------------------------

@dataclass(frozen=True)
class StreamingResult:
    mean_quality: np.ndarray
    utility_sum: float
    backlog: np.ndarray = field(repr=False)
    mean_backlog: float
    max_backlog: float
    stall_count: np.ndarray
    start_slots: tuple
    bs_fallbacks: int
    unstable: bool
    slope: float


def backlog_slope(backlog, per_slot_scale):
    """Least-squares slope of the second half of ``backlog``, relative to ``per_slot_scale``."""
    y = np.asarray(backlog, dtype=float)
    y = y[len(y) // 2:]
    if len(y) < 2 or per_slot_scale <= 0:
        return 0.0
    x = np.arange(len(y), dtype=float)
    return float(np.polyfit(x, y, 1)[0]) / per_slot_scale


TRACE_COLUMNS = ("t", "user", "helper", "quality", "bits", "Q_after", "theta_after", "psi", "stall_flag")


def run_streaming(topology, library, utility, horizon, seed, *, xi=1.0, window=10,
                  warmup_slots=None, instability_tol=0.02, trace_path=None):
    """Run the policy for ``horizon`` slots.

    Metrics use slots after ``warmup_slots`` (default: half the horizon) so the
    start-up transient of the virtual queues is excluded. A run is flagged
    unstable when the total backlog grows over the second half by more than
    ``instability_tol`` times the mean arrival rate (bits per slot).
    """
    if horizon < 1:
        raise InvalidParameterError("horizon must be >= 1")
    if np.any(topology.user_files >= library.n_files):
        raise InvalidParameterError("a user requests a file missing from the library")
    H, U = topology.n_helpers, topology.n_users
    warm = horizon // 2 if warmup_slots is None else int(warmup_slots)
    if not 0 <= warm < horizon:
        raise InvalidParameterError("warmup_slots must lie in [0, horizon)")
    lo, hi = library.quality_range
    cand = topology.candidates()
    has_helper = cand.any(axis=0)
    rng = make_rng(seed, STREAMING)
    rate_rng = make_rng(seed, RATES)
    offset = rng.integers(0, library.n_chunks, size=U)
    users = np.arange(U)

    Q = np.zeros((H, U))
    theta = np.zeros(U)
    fifo = [[deque() for _ in range(U)] for _ in range(H)]  # (chunk seq, remaining bits, request slot)
    done = [set() for _ in range(U)]
    next_play = np.zeros(U, dtype=np.int64)
    recent = [deque() for _ in range(U)]  # (arrival slot, delay)
    bs_pending = deque()  # (arrival slot, user, seq)
    psi = np.zeros(U, dtype=np.int64)
    start = np.full(U, -1)
    starts = [[] for _ in range(U)]
    stalls = np.zeros(U, dtype=np.int64)
    q_sum = np.zeros(U)
    backlog = np.zeros(horizon)
    arrivals_total = 0.0
    bs_count = 0

    writer = None
    fh = None
    if trace_path is not None:
        fh = open(trace_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
    try:
        for t in range(1, horizon + 1):
            seq = t - 1
            chunk = (offset + seq) % library.n_chunks
            B = library.bits[topology.user_files, chunk]  # (U, L)
            D = library.quality[topology.user_files, chunk]

            # congestion control from start-of-slot state
            qc = np.where(cand, Q, np.inf)
            h_star = np.where(has_helper, np.argmin(qc, axis=0), -1)
            q_star = np.where(has_helper, Q[np.maximum(h_star, 0), users], 0.0)
            obj = q_star[:, None] * B - theta[:, None] * D
            level = np.where(has_helper, np.argmin(obj, axis=1), 0)
            bits = B[users, level]
            qual = D[users, level]

            # scheduling from start-of-slot state
            C = topology.rates_at(t - 1, rate_rng)
            mu = schedule_macro_diversity(Q, C)

            arr = np.zeros((H, U))
            arr[h_star[has_helper], users[has_helper]] = bits[has_helper]
            Q = step_queues(Q, mu, arr)
            arrivals_total += float(arr.sum())

            completed_now = [[] for _ in range(U)]
            for h, u in zip(*np.nonzero(mu)):
                budget = mu[h, u]
                dq = fifo[h][u]
                while dq and budget > 0:
                    s, rem, req = dq[0]
                    if rem <= budget + 1e-12:
                        budget -= rem
                        dq.popleft()
                        completed_now[u].append((s, req))
                    else:
                        dq[0] = (s, rem - budget, req)
                        budget = 0
            for u in users[has_helper]:
                fifo[h_star[u]][u].append((seq, float(bits[u]), t))
            for u in users[~has_helper]:
                bs_pending.append((t + topology.bs_delay, int(u), seq))
                bs_count += 1
            while bs_pending and bs_pending[0][0] <= t:
                _, u, s = bs_pending.popleft()
                completed_now[u].append((s, t - topology.bs_delay))

            theta = step_virtual_queue(theta, qual, utility, lo, hi)
            if t > warm:
                q_sum += qual

            a_t = np.zeros(U, dtype=np.int64)
            e_t = np.zeros(U)
            for u in range(U):
                for s, req in completed_now[u]:
                    done[u].add(s)
                    recent[u].append((t, t - req))
                while next_play[u] in done[u]:
                    done[u].discard(next_play[u])
                    next_play[u] += 1
                    a_t[u] += 1
                rq = recent[u]
                while rq and rq[0][0] < t - window + 1:
                    rq.popleft()
                e_t[u] = max((w for _, w in rq), default=0)

            playing = (start >= 0) & (t > start)
            psi = step_playback(psi, playing, a_t)
            stall = playing & (psi == 0)
            stalls += stall
            start[stall] = -1
            go = (start < 0) & ~stall & (psi > 0) & (psi >= xi * e_t)
            for u in np.flatnonzero(go):
                starts[u].append(t)
            start[go] = t
            backlog[t - 1] = Q.sum()

            if writer is not None:
                for u in range(U):
                    hs = int(h_star[u])
                    writer.writerow([t, u, hs, int(level[u]), repr(float(bits[u])),
                                     repr(float(Q[hs, u]) if hs >= 0 else 0.0),
                                     repr(float(theta[u])), int(psi[u]), int(stall[u])])
    finally:
        if fh is not None:
            fh.close()

    n_metric = horizon - warm
    mean_q = q_sum / n_metric
    rate = arrivals_total / horizon
    slope = backlog_slope(backlog, rate)
    return StreamingResult(
        mean_quality=mean_q,
        utility_sum=float(np.sum(utility.phi(mean_q))),
        backlog=backlog,
        mean_backlog=float(backlog[warm:].mean()),
        max_backlog=float(backlog.max()),
        stall_count=stalls,
        start_slots=tuple(tuple(s) for s in starts),
        bs_fallbacks=bs_count,
        unstable=bool(slope > instability_tol),
        slope=slope,
    )


def write_summary_csv(path, result):
    """Two-column ``metric, value`` table; per-user rows are suffixed with the user id."""
    rows = [("utility_sum", repr(result.utility_sum)),
            ("mean_backlog", repr(result.mean_backlog)),
            ("max_backlog", repr(result.max_backlog)),
            ("unstable", int(result.unstable)),
            ("backlog_slope", repr(result.slope)),
            ("bs_fallbacks", result.bs_fallbacks)]
    for u, (q, s) in enumerate(zip(result.mean_quality, result.stall_count)):
        rows.append((f"mean_quality_u{u}", repr(float(q))))
        rows.append((f"stalls_u{u}", int(s)))
        rows.append((f"first_start_u{u}", result.start_slots[u][0] if result.start_slots[u] else ""))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(rows)


def ring_topology(n_helpers, n_users, helpers_per_user, rate, *, n_files=1, rate_model="constant",
                  p_bad=0.0, bs_delay=5, seed=0):
    """Users attached to ``helpers_per_user`` consecutive helpers on a ring.

    User ``u`` is adjacent to helpers ``u, u+1, ...`` (mod ``H``) at ``rate``
    bits per slot; every helper caches every file and each user watches a file
    drawn uniformly from the seed.
    """
    if not 1 <= helpers_per_user <= n_helpers:
        raise InvalidParameterError("helpers_per_user must lie in [1, n_helpers]")
    r = np.zeros((n_helpers, n_users))
    for u in range(n_users):
        for j in range(helpers_per_user):
            r[(u + j) % n_helpers, u] = rate
    files = make_rng(seed, TOPOLOGY).integers(0, n_files, size=n_users)
    return StreamingTopology(r, np.ones((n_helpers, n_files), bool), files,
                             rate_model=rate_model, p_bad=p_bad, bs_delay=bs_delay)
