"""Configuration-driven experiments with checksummed outputs.

A configuration is a JSON object::

    {"kind": "tradeoff", "seeds": [0, 1], "params": {...}}

Parameter keys carry their unit in the name (``rate_bits_per_slot``,
``cluster_sizes_nodes`` ...). Every run writes its CSV outputs plus
``manifest.json`` holding the config hash, tool and RNG versions and one
SHA-256 per output file.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidConfigError, InvalidParameterError, NumericalFailure, UnsupportedParametersError
from .rng import RNG_VERSION

__all__ = [
    "KINDS",
    "ExperimentConfig",
    "RunManifest",
    "CurveComparison",
    "NoOverlapError",
    "run",
    "verify_manifest",
    "compare_curves",
    "load_config",
]

DEFAULTS = {
    "tradeoff": {
        "library_size_files": 1000,
        "zipf_exponent": 0.6,
        "cache_size_files": 1,
        "node_count": 10000,
        "placement": "grid",
        "reuse_factor": 4,
        "interference_delta": None,
        "cluster_sides_unit": [1 / k for k in range(2, 11)],
        "cluster_sizes_nodes": None,
        "caching": "optimal",
        "caching_zipf_exponent": None,
        "rounds": 1000,
        "estimator": "ensemble",
        "admission_cap_links": None,
    },
    "femto-place": {
        "helper_count": 4,
        "user_count": 20,
        "library_size_files": 30,
        "zipf_exponent": 0.6,
        "helper_capacity_files": 3,
        "coverage_radius_unit": 0.5,
        "bs_rate_bits_per_s": 1.0,
        "peak_rate_bits_per_s": 10.0,
        "solver_iterations": 10000,
        "solver_tolerance": 1e-9,
    },
    "coded": {
        "user_count": 3,
        "library_size_files": 3,
        "cache_size_files": 2,
        "requests_file_ids": None,
    },
    "streaming": {
        "helper_count": 4,
        "user_count": 20,
        "helpers_per_user": 2,
        "rate_bits_per_slot": 10.0,
        "rate_model": "constant",
        "bad_state_probability": 0.0,
        "file_count": 5,
        "chunk_count": 200,
        "level_bits": [1.0, 1.5, 2.2, 3.0],
        "level_quality": [0.80, 0.87, 0.92, 0.95],
        "vbr_jitter": 0.2,
        "library_path": None,
        "utility": "log",
        "utility_exponent": 0.5,
        "V_values": [1, 10, 100],
        "horizon_slots": 4000,
        "warmup_slots": 2000,
        "xi": 1.0,
        "window_slots": 10,
        "bs_delay_slots": 5,
        "write_trace": False,
    },
    "scaling": {
        "zipf_exponent": 0.6,
        "library_size_files": 1000,
        "cache_size_files": 1,
        "reuse_factor": 4,
        "link_rate_bits_per_s_per_hz": 1.0,
        "cluster_sizes_nodes": None,
        "fit_A": 1.0,
        "fit_B": None,
        "fit_D": None,
        "fit_a_gamma": None,
        "rho_2": None,
        "points": 200,
    },
    "baseline": {
        "node_count": 10000,
        "bs_rate_bits_per_s_per_hz": 1.0,
        "rounds": None,
    },
}
KINDS = tuple(DEFAULTS)


class NoOverlapError(InvalidParameterError):
    """Simulated and theoretical curves share no outage range."""


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    seeds: tuple = (0,)

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise InvalidConfigError("kind", f"unknown experiment kind {self.kind!r}")
        unknown = sorted(set(self.params) - set(DEFAULTS[self.kind]))
        if unknown:
            raise InvalidConfigError(unknown[0], "unknown parameter")
        seeds = tuple(self.seeds)
        if not seeds or any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in seeds):
            raise InvalidConfigError("seeds", "need a nonempty list of nonnegative integers")
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def resolved(self):
        p = dict(DEFAULTS[self.kind])
        p.update(self.params)
        return p

    def to_dict(self):
        return {"kind": self.kind, "seeds": list(self.seeds), "params": dict(sorted(self.params.items()))}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InvalidConfigError("config", "top level must be an object")
        extra = sorted(set(d) - {"kind", "seeds", "params"})
        if extra:
            raise InvalidConfigError(extra[0], "unknown top-level key")
        if "kind" not in d:
            raise InvalidConfigError("kind", "missing")
        params = d.get("params", {})
        if not isinstance(params, dict):
            raise InvalidConfigError("params", "must be an object")
        return cls(d["kind"], params, tuple(d.get("seeds", (0,))))

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise InvalidConfigError("config", f"not valid JSON ({e.msg})") from None

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def with_seed_offset(self, offset):
        return ExperimentConfig(self.kind, self.params, tuple(s + offset for s in self.seeds))


def load_config(path):
    return ExperimentConfig.from_json(Path(path).read_text())


@dataclass(frozen=True)
class RunManifest:
    config_sha256: str
    tool_version: str
    rng_version: str
    outputs: dict

    def to_json(self):
        return json.dumps({
            "config_sha256": self.config_sha256,
            "tool_version": self.tool_version,
            "rng_version": self.rng_version,
            "outputs": dict(sorted(self.outputs.items())),
        }, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["config_sha256"], d["tool_version"], d["rng_version"], d["outputs"])


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def verify_manifest(out_dir):
    """Names of outputs whose checksum no longer matches (missing files included)."""
    out = Path(out_dir)
    man = RunManifest.from_json((out / "manifest.json").read_text())
    bad = []
    for name, digest in sorted(man.outputs.items()):
        p = out / name
        if not p.exists() or _sha256(p) != digest:
            bad.append(name)
    return bad


# validation helpers ----------------------------------------------------------------

def _int(p, key, lo=None, allow_none=False):
    v = p[key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise InvalidConfigError(key, "must be an integer")
    if lo is not None and v < lo:
        raise InvalidConfigError(key, f"must be >= {lo}")
    return v


def _num(p, key, lo=None, hi=None, strict_lo=False, allow_none=False):
    v = p[key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise InvalidConfigError(key, "must be a finite number")
    if lo is not None and (v <= lo if strict_lo else v < lo):
        raise InvalidConfigError(key, f"must be {'>' if strict_lo else '>='} {lo}")
    if hi is not None and v > hi:
        raise InvalidConfigError(key, f"must be <= {hi}")
    return float(v)


def _choice(p, key, options):
    if p[key] not in options:
        raise InvalidConfigError(key, f"must be one of {', '.join(map(str, options))}")
    return p[key]


def _num_list(p, key, allow_none=False):
    v = p[key]
    if v is None and allow_none:
        return None
    if not isinstance(v, list) or not v or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise InvalidConfigError(key, "must be a nonempty list of numbers")
    return [float(x) for x in v]


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# experiment kinds ------------------------------------------------------------------

def _run_tradeoff(cfg, out, workers):
    from .d2d import CachingSpec, branch1_throughput, simulate_tradeoff, write_theory_csv
    from .network import place_nodes, reuse_factor, zipf_pmf

    p = cfg.resolved
    m = _int(p, "library_size_files", 1)
    g = _num(p, "zipf_exponent", 0.0)
    M = _int(p, "cache_size_files", 1)
    if M > m:
        raise InvalidConfigError("cache_size_files", "must not exceed library_size_files")
    n = _int(p, "node_count", 1)
    placement = _choice(p, "placement", ("grid", "uniform"))
    delta = _num(p, "interference_delta", 0.0, allow_none=True)
    K = _int(p, "reuse_factor", 1, allow_none=True)
    if K is None:
        if delta is None:
            raise InvalidConfigError("reuse_factor", "give reuse_factor or interference_delta")
        K = reuse_factor(delta)
    if math.isqrt(K) ** 2 != K:
        raise InvalidConfigError("reuse_factor", "must be a perfect square")
    rounds = _int(p, "rounds", 1)
    estimator = _choice(p, "estimator", ("ensemble", "served"))
    cap = _int(p, "admission_cap_links", 1, allow_none=True)
    kind = _choice(p, "caching", ("optimal", "zipf", "deterministic"))
    gc = _num(p, "caching_zipf_exponent", 0.0, allow_none=True)
    if kind == "zipf" and gc is None:
        raise InvalidConfigError("caching_zipf_exponent", "required for zipf caching")

    geometry = place_nodes(n, placement, seed=cfg.seeds[0], delta=delta or 0.0)
    if "cluster_sizes_nodes" in cfg.params and "cluster_sides_unit" in cfg.params:
        raise InvalidConfigError("cluster_sizes_nodes", "give cluster sizes or cluster sides, not both")
    sides = None if "cluster_sizes_nodes" in cfg.params else _num_list(p, "cluster_sides_unit")
    if sides is None:
        sizes = _num_list(p, "cluster_sizes_nodes")
        if any(s < 1 or s > geometry.n for s in sizes):
            raise InvalidConfigError("cluster_sizes_nodes", "each size must lie in [1, node_count]")
        sides = [math.sqrt(s / geometry.n) for s in sizes]
    if any(not 0 < s <= 1 for s in sides):
        raise InvalidConfigError("cluster_sides_unit", "each side must lie in (0, 1]")

    model = zipf_pmf(m, g)
    curve = simulate_tradeoff(geometry, model, CachingSpec(kind, gc), M, sides, K=K, rounds=rounds,
                              seeds=cfg.seeds, admission_cap=cap, estimator=estimator, workers=workers)
    if any(not math.isfinite(q.t_min) for q in curve.points):
        raise NumericalFailure("non-finite throughput estimate")
    curve.write_csv(out / "tradeoff.csv")
    files = ["tradeoff.csv"]
    if 0 < g < 1:
        # branch 1 at every simulated outage inside its range, plus a sweep
        rho = np.geomspace(g, 20 * g, 200)
        pts = [((1 - g) * math.exp(g - r), M / (K * r * m)) for r in rho]
        for q in curve.points:
            if 0 < q.p_o <= 1 - g:
                pts.append((q.p_o, float(branch1_throughput(q.p_o, g, m, M, K))))
        pts = sorted(set(pts))
        write_theory_csv(out / "theory.csv", [(1, pp, tt) for pp, tt in pts])
        files.append("theory.csv")
    return files


def _run_femto(cfg, out, workers):
    from .femto import coded_placement, delay_saving, greedy_uncoded_placement, random_femto_instance
    from .femto import write_placement_csv

    p = cfg.resolved
    H = _int(p, "helper_count", 1)
    U = _int(p, "user_count", 1)
    m = _int(p, "library_size_files", 1)
    g = _num(p, "zipf_exponent", 0.0)
    cap = _int(p, "helper_capacity_files", 0)
    radius = _num(p, "coverage_radius_unit", 0.0, strict_lo=True)
    bs = _num(p, "bs_rate_bits_per_s", 0.0, strict_lo=True)
    peak = _num(p, "peak_rate_bits_per_s", 0.0, strict_lo=True)
    if peak <= 2 * bs:
        raise InvalidConfigError("peak_rate_bits_per_s", "must exceed twice bs_rate_bits_per_s")
    it = _int(p, "solver_iterations", 1)
    tol = _num(p, "solver_tolerance", 0.0, strict_lo=True)
    files = []
    rows = []
    for seed in cfg.seeds:
        inst = random_femto_instance(H, U, m, cap, g, seed, radius=radius, bs_rate=bs, rate_scale=peak)
        greedy = greedy_uncoded_placement(inst)
        coded = coded_placement(inst, iterations=it, tolerance=tol)
        if not coded.converged:
            raise NumericalFailure(f"coded placement did not converge for seed {seed}")
        for tag, pl in (("uncoded", greedy), ("coded", coded)):
            name = f"placement_{tag}_seed{seed}.csv"
            write_placement_csv(out / name, pl)
            files.append(name)
        rows.append([seed, repr(greedy.delay), repr(coded.delay),
                     repr(delay_saving(inst, greedy.x)), repr(delay_saving(inst, coded.x, coded=True))])
    _write_rows(out / "summary.csv", ["seed", "uncoded_delay_s", "coded_delay_s", "uncoded_saving_s", "coded_saving_s"], rows)
    return files + ["summary.csv"]


def _run_coded(cfg, out, workers):
    from .coded import decode_check, deliver, random_requests, subpacketize

    p = cfg.resolved
    n = _int(p, "user_count", 1)
    m = _int(p, "library_size_files", 1)
    M = _int(p, "cache_size_files", 0)
    try:
        plan = subpacketize(n, m, M)
    except (UnsupportedParametersError, InvalidParameterError) as e:
        raise InvalidConfigError("cache_size_files", str(e)) from None
    req = p["requests_file_ids"]
    if req is None:
        req = list(range(n)) if n <= m else [f for f in random_requests(plan, cfg.seeds[0])]
    else:
        if not isinstance(req, list) or len(req) != n or any(not isinstance(f, int) or not 1 <= f <= m for f in req):
            raise InvalidConfigError("requests_file_ids", "need one 1-based file id per user")
        req = [f - 1 for f in req]
    session = deliver(plan, req)
    ok = decode_check(session)
    if not ok:
        raise NumericalFailure("coded delivery failed the decodability check")
    (out / "session.txt").write_text(session.dump())
    files = ["session.txt"]
    if m <= 26:
        (out / "session_named.txt").write_text("".join(f"{u + 1} | {s}\n" for u, s in session.named()))
        files.append("session_named.txt")
    total = session.total
    _write_rows(out / "summary.csv", ["metric", "value"], [
        ["t", plan.t],
        ["packets_per_file", plan.packets_per_file],
        ["transmissions", len(session.transmissions)],
        ["normalized_total", f"{total.numerator}/{total.denominator}"],
        ["decodable", int(ok)],
    ])
    return files + ["summary.csv"]


def _run_streaming(cfg, out, workers):
    from .streaming import UtilitySpec, read_library, ring_topology, run_streaming, synthetic_library
    from .streaming import write_summary_csv

    p = cfg.resolved
    H = _int(p, "helper_count", 1)
    U = _int(p, "user_count", 1)
    deg = _int(p, "helpers_per_user", 1)
    if deg > H:
        raise InvalidConfigError("helpers_per_user", "must not exceed helper_count")
    rate = _num(p, "rate_bits_per_slot", 0.0, strict_lo=True)
    rate_model = _choice(p, "rate_model", ("constant", "two-state"))
    p_bad = _num(p, "bad_state_probability", 0.0, 1.0)
    horizon = _int(p, "horizon_slots", 1)
    warm = _int(p, "warmup_slots", 0)
    if warm >= horizon:
        raise InvalidConfigError("warmup_slots", "must be smaller than horizon_slots")
    xi = _num(p, "xi", 0.0, strict_lo=True)
    window = _int(p, "window_slots", 1)
    bs_delay = _int(p, "bs_delay_slots", 1)
    fam = _choice(p, "utility", ("log", "power"))
    expo = _num(p, "utility_exponent", 0.0, 1.0, strict_lo=True)
    Vs = _num_list(p, "V_values")
    if any(v < 0 for v in Vs):
        raise InvalidConfigError("V_values", "must be >= 0")
    rows = []
    files = []
    for seed in cfg.seeds:
        if p["library_path"] is not None:
            lib = read_library(p["library_path"])
        else:
            lb, lq = _num_list(p, "level_bits"), _num_list(p, "level_quality")
            if len(lb) != len(lq):
                raise InvalidConfigError("level_quality", "must match level_bits in length")
            try:
                lib = synthetic_library(_int(p, "file_count", 1), _int(p, "chunk_count", 1), lb, lq, seed,
                                        jitter=_num(p, "vbr_jitter", 0.0, 0.99))
            except InvalidParameterError as e:
                raise InvalidConfigError("level_bits", str(e)) from None
        topo = ring_topology(H, U, deg, rate, n_files=lib.n_files, rate_model=rate_model, p_bad=p_bad,
                             bs_delay=bs_delay, seed=seed)
        for V in Vs:
            tag = f"seed{seed}_V{V:g}"
            trace = out / f"trace_{tag}.csv" if p["write_trace"] else None
            res = run_streaming(topo, lib, UtilitySpec(fam, V, expo), horizon, seed, xi=xi, window=window,
                                warmup_slots=warm, trace_path=trace)
            if not math.isfinite(res.utility_sum):
                raise NumericalFailure("non-finite utility")
            write_summary_csv(out / f"summary_{tag}.csv", res)
            files.append(f"summary_{tag}.csv")
            if trace is not None:
                files.append(trace.name)
            rows.append([seed, repr(V), repr(res.utility_sum), repr(res.mean_backlog),
                         int(res.stall_count.sum()), int(res.unstable)])
    _write_rows(out / "streaming.csv", ["seed", "V", "utility_sum", "mean_backlog_bits", "stalls", "unstable"], rows)
    return files + ["streaming.csv"]


def _run_scaling(cfg, out, workers):
    import warnings

    from .d2d import ScalingCurveParams, theorem_curve, write_theory_csv

    p = cfg.resolved
    g = _num(p, "zipf_exponent", 0.0, 1.0, strict_lo=True)
    if g >= 1:
        raise InvalidConfigError("zipf_exponent", "must be < 1")
    m = _int(p, "library_size_files", 1)
    M = _int(p, "cache_size_files", 1)
    K = _int(p, "reuse_factor", 1)
    c_r = _num(p, "link_rate_bits_per_s_per_hz", 0.0, strict_lo=True)
    params = ScalingCurveParams(
        g, A=_num(p, "fit_A", 0.0, strict_lo=True), B=_num(p, "fit_B", 0.0, allow_none=True),
        D=_num(p, "fit_D", 0.0, allow_none=True), a_gamma=_num(p, "fit_a_gamma", 0.0, allow_none=True),
        rho_2=_num(p, "rho_2", 0.0, allow_none=True))
    gcs = _num_list(p, "cluster_sizes_nodes", allow_none=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = theorem_curve(params, m, M, K, c_r, gcs, n_points=_int(p, "points", 2))
    write_theory_csv(out / "theory.csv", rows)
    return ["theory.csv"]


def _run_baseline(cfg, out, workers):
    from .d2d import TradeoffCurve, bs_unicast_baseline

    p = cfg.resolved
    n = _int(p, "node_count", 1)
    bs = _num(p, "bs_rate_bits_per_s_per_hz", 0.0, strict_lo=True)
    rounds = _int(p, "rounds", 1, allow_none=True)
    pt = bs_unicast_baseline(None, n, bs, rounds)
    TradeoffCurve((pt,)).write_csv(out / "baseline.csv")
    return ["baseline.csv"]


RUNNERS = {
    "tradeoff": _run_tradeoff,
    "femto-place": _run_femto,
    "coded": _run_coded,
    "streaming": _run_streaming,
    "scaling": _run_scaling,
    "baseline": _run_baseline,
}


def run(config, out_dir, *, workers=1):
    """Execute ``config``, write outputs and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        names = RUNNERS[config.kind](config, out, workers)
    except (InvalidParameterError, UnsupportedParametersError) as e:
        if isinstance(e, InvalidConfigError):
            raise
        raise InvalidConfigError("params", str(e)) from None
    (out / "config.json").write_text(config.to_json())
    names = sorted(set(names) | {"config.json"})
    man = RunManifest(config.digest(), __version__, RNG_VERSION, {n: _sha256(out / n) for n in names})
    (out / "manifest.json").write_text(man.to_json())
    return man


# curve comparison -------------------------------------------------------------------

@dataclass(frozen=True)
class CurveComparison:
    """Per-point ``(T_theory - t_sim) / t_sim`` on the shared outage range."""

    p: np.ndarray
    simulated: np.ndarray
    theoretical: np.ndarray
    deviation: np.ndarray
    tolerance: float

    @property
    def max_abs_deviation(self):
        return float(np.max(np.abs(self.deviation)))

    @property
    def mean_abs_deviation(self):
        return float(np.mean(np.abs(self.deviation)))

    @property
    def passed(self):
        return self.max_abs_deviation <= self.tolerance

    def rows(self):
        return [[repr(float(a)), repr(float(b)), repr(float(c)), repr(float(d))]
                for a, b, c, d in zip(self.p, self.simulated, self.theoretical, self.deviation)]

    def write_csv(self, path):
        _write_rows(path, ["p_o", "t_sim", "t_theory", "relative_deviation"], self.rows())


def compare_curves(simulated, theoretical, tolerance=0.25, branch=None):
    """Compare a simulated tradeoff curve with a theoretical ``(branch, p, T)`` curve.

    Either argument may be a CSV path or already-loaded data (a
    ``TradeoffCurve`` and a list of rows). The theoretical curve is linearly
    interpolated in ``p``; only simulated points inside its outage range with
    positive throughput are compared.
    """
    from .d2d import TradeoffCurve, read_theory_csv

    sim = TradeoffCurve.read_csv(simulated) if isinstance(simulated, (str, os.PathLike)) else simulated
    th = read_theory_csv(theoretical) if isinstance(theoretical, (str, os.PathLike)) else theoretical
    if branch is not None:
        th = [r for r in th if r[0] == branch]
    if not th:
        raise NoOverlapError("theoretical curve is empty")
    tp = np.array([r[1] for r in th])
    tt = np.array([r[2] for r in th])
    order = np.argsort(tp, kind="stable")
    tp, tt = tp[order], tt[order]
    pts = [q for q in sim.sorted().points if tp[0] <= q.p_o <= tp[-1] and q.t_min > 0]
    if not pts:
        raise NoOverlapError(f"no simulated point inside the theoretical range [{tp[0]:.4g}, {tp[-1]:.4g}]")
    p = np.array([q.p_o for q in pts])
    s = np.array([q.t_min for q in pts])
    t = np.interp(p, tp, tt)
    return CurveComparison(p, s, t, (t - s) / s, float(tolerance))
