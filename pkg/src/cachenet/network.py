"""Requests, node placement, clustering and TDMA reuse under the protocol model.

File indices are 0-based throughout the Python API; index ``f`` is the file of
popularity rank ``f + 1``. Exports to CSV use 1-based ranks.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameterError
from .rng import PLACEMENT, REQUESTS, make_rng

__all__ = [
    "RequestModel",
    "RateTable",
    "NetworkGeometry",
    "ClusterPartition",
    "ReusePattern",
    "zipf_pmf",
    "sample_requests",
    "place_nodes",
    "partition_clusters",
    "reuse_factor",
    "color_clusters",
    "protocol_feasible",
    "export_geometry_csv",
]


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RequestModel:
    """Zipf request law over a library of ``m`` files."""

    m: int
    gamma_r: float
    pmf: np.ndarray = field(repr=False)

    @property
    def cdf(self):
        c = np.cumsum(self.pmf)
        c[-1] = 1.0
        return c


def zipf_pmf(m, gamma_r):
    """Return the Zipf request model ``P(f) ∝ f**-gamma_r`` for ranks ``1..m``.

    The normalizer is accumulated with ``math.fsum`` so the pmf sums to one to
    within a few ulps even for very large libraries.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise InvalidParameterError(f"library size m must be a positive integer, got {m!r}")
    if not np.isfinite(gamma_r) or gamma_r < 0:
        raise InvalidParameterError(f"Zipf exponent must be >= 0, got {gamma_r!r}")
    w = np.arange(1, m + 1, dtype=float) ** (-float(gamma_r))
    pmf = w / math.fsum(w)
    return RequestModel(int(m), float(gamma_r), _frozen(pmf))


def sample_requests(model, n, seed):
    """Draw ``n`` i.i.d. file indices from ``model`` by inverse-CDF lookup."""
    if n < 0:
        raise InvalidParameterError("n must be >= 0")
    u = make_rng(seed, REQUESTS).random(n)
    idx = np.searchsorted(model.cdf, u, side="right")
    return np.minimum(idx, model.m - 1)


@dataclass(frozen=True)
class RateTable:
    """Link spectral efficiency ``C_r`` as a non-increasing step function of range.

    ``steps`` is a sequence of ``(r_max, rate)`` pairs sorted by ``r_max``; a
    range ``r`` gets the rate of the first step with ``r <= r_max``. Ranges past
    the last step get ``rate`` of the last step.
    """

    steps: tuple = ((math.inf, 1.0),)

    def __post_init__(self):
        steps = tuple((float(a), float(b)) for a, b in self.steps)
        if not steps:
            raise InvalidParameterError("rate table needs at least one step")
        bounds = [s[0] for s in steps]
        rates = [s[1] for s in steps]
        if bounds != sorted(bounds):
            raise InvalidParameterError("rate table bounds must be increasing")
        if any(b > a for a, b in zip(rates, rates[1:])):
            raise InvalidParameterError("C_r must be non-increasing in the transmission range")
        if any(r <= 0 for r in rates):
            raise InvalidParameterError("rates must be positive")
        object.__setattr__(self, "steps", steps)

    def __call__(self, r):
        for bound, rate in self.steps:
            if r <= bound:
                return rate
        return self.steps[-1][1]


@dataclass(frozen=True)
class NetworkGeometry:
    """Node positions in the unit square plus protocol-model parameters."""

    n: int
    positions: np.ndarray = field(repr=False)
    mode: str
    r: float = math.sqrt(2.0)
    delta: float = 0.0
    rate_table: RateTable = RateTable()
    requested_n: int | None = None

    @property
    def c_r(self):
        return self.rate_table(self.r)

    def with_range(self, r, delta=None):
        from dataclasses import replace

        return replace(self, r=float(r), delta=self.delta if delta is None else float(delta))


def place_nodes(n, mode="grid", seed=0, *, r=math.sqrt(2.0), delta=0.0, rate_table=None):
    """Place nodes on the unit square.

    Grid mode puts ``s = floor(sqrt(n))`` nodes per axis at cell centers
    ``(i + 1/2) / s``, so neighbours are ``1/s`` apart. A non-square ``n`` is
    truncated to ``s*s`` nodes and ``requested_n`` keeps the original value.
    Uniform mode draws i.i.d. positions from the seed.
    """
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    if delta < 0:
        raise InvalidParameterError("delta must be >= 0")
    if mode == "grid":
        s = math.isqrt(n)
        c = (np.arange(s) + 0.5) / s
        xs, ys = np.meshgrid(c, c)  # row-major: id = row * s + col
        pos = np.column_stack([xs.ravel(), ys.ravel()])
    elif mode == "uniform":
        pos = make_rng(seed, PLACEMENT).random((n, 2))
    else:
        raise InvalidParameterError(f"unknown placement mode {mode!r}")
    return NetworkGeometry(
        n=len(pos),
        positions=_frozen(pos),
        mode=mode,
        r=float(r),
        delta=float(delta),
        rate_table=rate_table or RateTable(),
        requested_n=int(n),
    )


@dataclass(frozen=True)
class ClusterPartition:
    """Square clusters of side ``side`` tiling the unit square.

    ``n_axis`` clusters per axis; cluster ``row * n_axis + col`` covers
    ``[col*side, (col+1)*side) x [row*side, (row+1)*side)`` clipped to the square.
    """

    side: float
    n_axis: int
    cluster_of: np.ndarray = field(repr=False)
    sizes: np.ndarray = field(repr=False)

    @property
    def n_clusters(self):
        return self.n_axis * self.n_axis

    @property
    def g_c(self):
        """Scalar cluster size when all clusters are equal, else the size vector."""
        if self.sizes.size and np.all(self.sizes == self.sizes[0]):
            return int(self.sizes[0])
        return self.sizes

    def grid_index(self, cluster):
        return divmod(int(cluster), self.n_axis)

    def members(self, cluster):
        return np.flatnonzero(self.cluster_of == cluster)

    def cluster_areas(self):
        edges = np.minimum(np.arange(self.n_axis + 1) * self.side, 1.0)
        w = np.diff(edges)
        return np.outer(w, w).ravel()


def partition_clusters(geometry, cluster_side):
    if not (cluster_side > 0):
        raise InvalidParameterError(f"cluster side must be positive, got {cluster_side!r}")
    if cluster_side > 1:
        raise InvalidParameterError("cluster side must be <= 1")
    # tolerate 1/side landing a hair above an integer
    n_axis = max(1, math.ceil(1.0 / cluster_side - 1e-9))
    ij = np.floor(geometry.positions / cluster_side).astype(np.int64)
    ij = np.clip(ij, 0, n_axis - 1)
    cluster_of = ij[:, 1] * n_axis + ij[:, 0]
    sizes = np.bincount(cluster_of, minlength=n_axis * n_axis)
    return ClusterPartition(float(cluster_side), n_axis, _frozen(cluster_of), _frozen(sizes))


def reuse_factor(delta):
    """Reuse factor ``K = (ceil(sqrt(2) (1 + delta)) + 1)**2``."""
    if not np.isfinite(delta) or delta < 0:
        raise InvalidParameterError(f"delta must be >= 0, got {delta!r}")
    return (math.ceil(math.sqrt(2.0) * (1.0 + delta)) + 1) ** 2


@dataclass(frozen=True)
class ReusePattern:
    K: int
    colors: np.ndarray = field(repr=False)

    def clusters_with_color(self, color):
        return np.flatnonzero(self.colors == color)


def color_clusters(partition, K):
    """Periodic TDMA coloring: cluster at (row, col) gets ``(row % k) * k + col % k``."""
    k = math.isqrt(K) if K >= 1 else 0
    if K < 1 or k * k != K:
        raise InvalidParameterError(f"reuse factor must be a perfect square, got {K!r}")
    idx = np.arange(partition.n_clusters)
    row, col = np.divmod(idx, partition.n_axis)
    return ReusePattern(int(K), _frozen((row % k) * k + (col % k)))


def protocol_feasible(tx, rx, active_tx: Iterable[int], geometry):
    """Protocol-model check for the link ``tx -> rx``.

    True iff ``d(tx, rx) <= r`` and every other active transmitter is strictly
    farther than ``(1 + delta) r`` from the receiver.
    """
    pos = geometry.positions
    if np.hypot(*(pos[tx] - pos[rx])) > geometry.r:
        return False
    others = [a for a in active_tx if a != tx]
    if not others:
        return True
    d = np.hypot(*(pos[others] - pos[rx]).T)
    return bool(np.all(d > (1.0 + geometry.delta) * geometry.r))


GEOMETRY_COLUMNS = ("node_id", "x", "y", "cluster_id", "color")


def export_geometry_csv(path, geometry, partition, pattern):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GEOMETRY_COLUMNS)
        for u in range(geometry.n):
            c = int(partition.cluster_of[u])
            x, y = geometry.positions[u]
            w.writerow([u, repr(float(x)), repr(float(y)), c, int(pattern.colors[c])])


def read_geometry_csv(path) -> Sequence[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != GEOMETRY_COLUMNS:
        raise InvalidParameterError("unexpected geometry CSV header")
    return rows
