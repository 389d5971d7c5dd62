"""Scenario documents, random waypoints, runs, RunLog CSV files and run metrics."""

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .chain import CompositeChain, Pose, load_chain, data_path, with_base
from .collision import (
    Box,
    Capsule,
    CollisionTree,
    CollisionVolume,
    CollisionWorld,
    Halfspace,
    Sphere,
    world_min_distance,
)
from .docs import DocNode, DocumentError
from .planner import PlannerConfig, RunLog, Waypoint, plan

BUNDLED = ("s1_floor", "s2_sphere", "s3_twoarm")
SMOOTH_PERIOD = 5.0
VELOCITY_AMPLITUDE = 1.39
FFT_CUTOFF_HZ = 0.5


# -- configuration -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ArmSpec:
    id: str
    chain: object  # KinematicChain mounted at its base pose
    home: np.ndarray


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    arms: tuple
    trees: tuple
    tree_pairs: Optional[tuple]
    self_exclude: dict
    center: np.ndarray
    radius: float
    n_waypoints: int
    T_traj: float
    seed: int
    planner: PlannerConfig
    outward: bool = False
    source_text: str = ""
    source: str = "<string>"
    overrides: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        h = hashlib.sha256(self.source_text.encode())
        h.update(json.dumps(self.overrides, sort_keys=True).encode())
        return h.hexdigest()[:16]

    def with_overrides(self, seed=None, T_traj=None, d_buff=None, n_waypoints=None):
        """Copy with CLI-style overrides applied (``d_act`` keeps its margin over ``d_buff``)."""
        over = dict(self.overrides)
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
            over["seed"] = int(seed)
        if T_traj is not None:
            if not T_traj > 0:
                raise ValueError("T_traj must be positive")
            kw["T_traj"] = float(T_traj)
            over["T_traj"] = float(T_traj)
        if n_waypoints is not None:
            if n_waypoints < 0:
                raise ValueError("n_waypoints must be non-negative")
            kw["n_waypoints"] = int(n_waypoints)
            over["n_waypoints"] = int(n_waypoints)
        if d_buff is not None:
            margin = self.planner.d_act - self.planner.d_buff
            cfg = replace(self.planner, d_buff=float(d_buff), d_act=float(d_buff) + margin)
            cfg.validate()
            kw["planner"] = cfg
            over["d_buff"] = float(d_buff)
        return replace(self, overrides=over, **kw)

    def composite(self):
        return CompositeChain([a.chain for a in self.arms])

    def world(self):
        return CollisionWorld(self.trees, self.tree_pairs, self.self_exclude)

    @property
    def q0(self):
        return np.concatenate([a.home for a in self.arms])


def _pose_node(node):
    if node is None:
        return Pose.identity()
    quat = node["quat"].vector(4) if node.has("quat") else np.array([1.0, 0.0, 0.0, 0.0])
    if abs(np.linalg.norm(quat) - 1.0) > 1e-9:
        raise node.error("quaternion is not unit norm within 1e-9")
    return Pose(node["xyz"].vector(3) if node.has("xyz") else np.zeros(3), quat)


def _shape(node):
    kind = node["shape"].str()
    params = node["params"]
    try:
        if kind == "sphere":
            return Sphere(params["radius"].float())
        if kind == "capsule":
            return Capsule(params["radius"].float(), params["a"].vector(3), params["b"].vector(3))
        if kind == "halfspace":
            return Halfspace(params["normal"].vector(3), params["offset"].float())
        if kind == "box":
            return Box(params["half_extents"].vector(3))
    except ValueError as exc:
        if isinstance(exc, DocumentError):
            raise
        raise params.error(str(exc)) from exc
    raise node["shape"].error(f"unknown shape '{kind}' (sphere, capsule, halfspace, box)")


def _resolve_chain_file(name, base_dir):
    p = Path(name)
    if not p.is_absolute() and base_dir is not None and (base_dir / p).exists():
        return base_dir / p
    if p.exists():
        return p
    bundled = data_path(name)
    if bundled.exists():
        return bundled
    raise FileNotFoundError(name)


def parse_scenario(text, source="<string>", base_dir=None):
    """Parse and validate a scenario document. Raises DocumentError with a line location."""
    doc = DocNode.parse(text, source)
    name = doc["name"].str() if doc.has("name") else Path(source).stem
    arms = []
    arm_index = {}
    for cn in doc["chains"].items():
        aid = cn["id"].str()
        if aid in arm_index:
            raise cn["id"].error(f"duplicate chain id '{aid}'")
        try:
            path = _resolve_chain_file(cn["file"].str(), base_dir)
        except FileNotFoundError:
            raise cn["file"].error(f"chain document '{cn['file'].str()}' not found") from None
        chain = with_base(load_chain(path), _pose_node(cn.get("base")))
        home = cn["home"].vector(chain.dof)
        if np.any(home < chain.q_lb) or np.any(home > chain.q_ub):
            raise cn["home"].error("home configuration outside joint limits")
        arm_index[aid] = len(arms)
        arms.append(ArmSpec(aid, chain, home))
    if not arms:
        raise doc["chains"].error("at least one chain is required")

    coll = doc["collision"]
    groups = {}
    order = []
    for vn in coll["volumes"].items():
        shape = _shape(vn)
        att = vn["attach"]
        transform = _pose_node(vn.get("transform"))
        if att.is_scalar():
            if att.str() != "world":
                raise att.error("attach must be 'world' or {chain, link}")
            tid = vn["tree"].str() if vn.has("tree") else "environment"
            owner, link = None, None
        else:
            cid = att["chain"].str()
            if cid not in arm_index:
                raise att["chain"].error(f"unknown chain '{cid}'")
            owner = arm_index[cid]
            link = att["link"].int()
            if not 0 <= link < arms[owner].chain.n_frames:
                raise att["link"].error(f"link {link} outside 0..{arms[owner].chain.n_frames - 1}")
            tid = cid
        if tid not in groups:
            if tid in arm_index and owner is None:
                raise vn.error(f"environment tree id '{tid}' clashes with a chain id")
            groups[tid] = (owner, [])
            order.append(tid)
        if groups[tid][0] != owner:
            raise vn.error(f"tree '{tid}' mixes owners")
        groups[tid][1].append(CollisionVolume(shape, link, transform))
    trees = tuple(CollisionTree(t, groups[t][1], groups[t][0]) for t in order)

    tree_pairs = None
    if coll.has("pairs"):
        tree_pairs = []
        for pn in coll["pairs"].items():
            a, b = (x.str() for x in pn.items())
            for x, node in ((a, pn), (b, pn)):
                if x not in groups:
                    raise node.error(f"unknown tree '{x}'")
            tree_pairs.append((a, b))
        tree_pairs = tuple(tree_pairs)
    self_exclude = {}
    if coll.has("self_exclude"):
        se = coll["self_exclude"]
        for key in se.keys():
            if key not in arm_index:
                raise se[key].error(f"unknown chain '{key}'")
            self_exclude[key] = [tuple(int(v) for v in p.vector(2)) for p in se[key].items()]

    wn = doc["waypoints"]
    radius = wn["radius"].float()
    if not radius > 0:
        raise wn["radius"].error("radius must be positive")
    count = wn["count"].int()
    if count < 0:
        raise wn["count"].error("count must be non-negative")
    T_traj = wn["T_traj"].float()
    if not T_traj > 0:
        raise wn["T_traj"].error("T_traj must be positive")
    orientation = wn["orientation"].str() if wn.has("orientation") else "inward"
    if orientation not in ("inward", "outward"):
        raise wn["orientation"].error("orientation must be 'inward' or 'outward'")

    pn = doc.get("planner")
    kw = {}
    if pn is not None:
        for key, attr in (("dt", "dt"), ("lambda", "lam"), ("d_buff", "d_buff"), ("d_act", "d_act"), ("delta_q", "delta_q"), ("ubA_big", "ubA_big")):
            if pn.has(key):
                kw[attr] = pn[key].float()
        if pn.has("gamma"):
            g = pn["gamma"]
            kw["gamma"] = g.float() if g.is_scalar() else g.vector(6)
        if pn.has("max_nwsr"):
            kw["max_nwsr"] = pn["max_nwsr"].int()
        if pn.has("literal_eq12"):
            kw["literal_eq12"] = pn["literal_eq12"].bool()
    comp = CompositeChain([a.chain for a in arms])
    try:
        planner = PlannerConfig(**kw).validate(comp)
    except ValueError as exc:
        raise pn.error(str(exc)) if pn is not None else DocumentError(str(exc), source) from exc

    cfg = ScenarioConfig(
        name,
        tuple(arms),
        trees,
        tree_pairs,
        self_exclude,
        wn["center"].vector(3),
        radius,
        count,
        T_traj,
        wn["seed"].int(),
        planner,
        orientation == "outward",
        text,
        source,
    )
    try:
        world = cfg.world()
        d0 = world_min_distance(world, comp, cfg.q0)
    except (ValueError, KeyError) as exc:
        raise coll.error(str(exc)) from exc
    if d0.distance < planner.d_buff:
        raise doc["chains"].error(f"home configuration clearance {d0.distance:.4f} m is below d_buff (pair {d0.pair})")
    return cfg


def load_scenario(ref):
    """Load a scenario from a path or a bundled name such as ``s1_floor``."""
    p = Path(ref)
    if not p.exists():
        cand = data_path(ref if ref.endswith(".yaml") else ref + ".yaml")
        if not cand.exists():
            raise DocumentError(f"no scenario file or bundled scenario named '{ref}'", str(ref))
        p = cand
    return parse_scenario(p.read_text(encoding="utf-8"), str(p), p.parent)


# -- waypoints ------------------------------------------------------------------------


def generate_waypoint(rng, center, radius, duration=1.0, outward=False):
    """Random pose on a sphere surface, approach axis (tool z) along the inward normal.

    The direction is a normalised Gaussian triple. Tool x is world x projected
    onto the tangent plane, or world y where that projection vanishes.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    d = rng.standard_normal(3)
    n = d / np.linalg.norm(d)
    z = n if outward else -n
    x = np.array([1.0, 0.0, 0.0])
    x = x - (x @ z) * z
    if np.linalg.norm(x) < 1e-9:
        x = np.array([0.0, 1.0, 0.0])
        x = x - (x @ z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    return Waypoint(Pose.from_matrix(R, np.asarray(center, dtype=float) + radius * n), duration)


def scenario_waypoints(config):
    """Segments for a run: one waypoint per arm per segment, all from one seeded stream."""
    rng = np.random.default_rng(config.seed)
    return [
        tuple(generate_waypoint(rng, config.center, config.radius, config.T_traj, config.outward) for _ in config.arms)
        for _ in range(config.n_waypoints)
    ]


def run(config):
    comp = config.composite()
    world = config.world()
    log = plan(comp, world, config.q0, scenario_waypoints(config), config.planner)
    log.meta = {
        "scenario": config.name,
        "seed": config.seed,
        "config_hash": config.config_hash,
        "T_traj": config.T_traj,
        "dt": config.planner.dt,
        "d_buff": config.planner.d_buff,
        "d_act": config.planner.d_act,
        "arms": len(config.arms),
        "dof": comp.dof,
    }
    return log


# -- RunLog CSV -----------------------------------------------------------------------


def fmt(x):
    return format(float(x), ".17g")


def runlog_header(n):
    return ["t"] + [f"q_{i}" for i in range(n)] + [f"qd_{i}" for i in range(n)] + ["solve_time_us", "nwsr", "nac", "min_dist_m", "status"]


def write_runlog(log, path):
    n = log.q.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(runlog_header(n))
        for k in range(len(log)):
            w.writerow(
                [fmt(log.t[k])]
                + [fmt(v) for v in log.q[k]]
                + [fmt(v) for v in log.qd[k]]
                + [fmt(log.solve_time[k] * 1e6), str(int(log.nwsr[k])), str(int(log.nac[k])), fmt(log.min_dist[k]), log.status[k]]
            )


class SchemaError(ValueError):
    pass


def read_runlog(path, dt=None):
    """Read a RunLog CSV. ``dt`` defaults to the metadata sidecar, else the tick spacing."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file, expected a header row")
    header = rows[0]
    if len(header) < 6 or (len(header) - 6) % 2:
        raise SchemaError(f"{path}: header has {len(header)} columns; expected t, q_*, qd_*, solve_time_us, nwsr, nac, min_dist_m, status")
    n = (len(header) - 6) // 2
    expected = runlog_header(n)
    for c, (got, want) in enumerate(zip(header, expected)):
        if got.strip() != want:
            raise SchemaError(f"{path}: column {c + 1}: expected '{want}', found '{got}'")
    data = []
    status = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path}: line {r}: {len(row)} fields, expected {len(header)}")
        try:
            data.append([float(v) for v in row[:-1]])
        except ValueError:
            c = next(i for i, v in enumerate(row[:-1]) if not _is_float(v))
            raise SchemaError(f"{path}: line {r}, column {c + 1} ('{header[c]}'): not a number: {row[c]!r}") from None
        status.append(row[-1])
    D = np.array(data, dtype=float).reshape(-1, len(header) - 1)
    meta = read_meta(path.parent / "meta.json") if (path.parent / "meta.json").exists() else {}
    if dt is None:
        dt = meta.get("dt")
    if dt is None:
        dt = float(np.round(np.median(np.diff(D[:, 0])), 9)) if len(D) > 1 else float("nan")
    return RunLog(
        float(dt),
        D[:, 0],
        D[:, 1 : 1 + n],
        D[:, 1 + n : 1 + 2 * n],
        D[:, 1 + 2 * n] * 1e-6,
        D[:, 2 + 2 * n].astype(int),
        D[:, 3 + 2 * n].astype(int),
        D[:, 4 + 2 * n],
        status,
        meta=meta,
    )


def _is_float(v):
    try:
        float(v)
        return True
    except ValueError:
        return False


def write_meta(meta, path):
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_meta(path):
    return json.loads(Path(path).read_text())


def write_reference(log, path):
    """Desired and achieved end-effector positions per tick (``reference.csv``)."""
    arms = log.ref_pos.shape[1]
    header = ["t"]
    for a in range(arms):
        header += [f"ref_x_{a}", f"ref_y_{a}", f"ref_z_{a}", f"ach_x_{a}", f"ach_y_{a}", f"ach_z_{a}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(log)):
            row = [fmt(log.t[k])]
            for a in range(arms):
                row += [fmt(v) for v in log.ref_pos[k, a]] + [fmt(v) for v in log.ach_pos[k, a]]
            w.writerow(row)


def read_reference(path, log):
    """Attach ``ref_pos``/``ach_pos`` from a ``reference.csv`` to ``log`` (in place)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[0] != "t" or (len(header) - 1) % 6:
        raise SchemaError(f"{path}: unexpected header")
    arms = (len(header) - 1) // 6
    D = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    if len(D) != len(log):
        raise SchemaError(f"{path}: {len(D)} rows but the run log has {len(log)} ticks")
    X = D[:, 1:].reshape(-1, arms, 6)
    log.ref_pos = X[:, :, :3].copy()
    log.ach_pos = X[:, :, 3:].copy()
    return log


def write_waypoint_errors(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment", "arm", "position_error_m", "orientation_error_rad"])
        for s, errs in enumerate(log.waypoint_errors):
            for a, e in enumerate(errs):
                w.writerow([s, a, fmt(np.linalg.norm(e[:3])), fmt(np.linalg.norm(e[3:]))])


# -- metrics --------------------------------------------------------------------------


def solve_stats(log):
    if len(log) == 0:
        raise ValueError("solve statistics need a non-empty log")
    return {
        "median_solve_time": float(np.median(log.solve_time)),
        "mean_nwsr": float(np.mean(log.nwsr)),
        "mean_nac": float(np.mean(log.nac)),
    }


def differentiate_twice(x, dt):
    """Second derivative along axis 0: central differences inside, one-sided at the ends."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 3:
        raise ValueError(f"need at least 3 samples to differentiate twice, got {x.shape[0]}")
    return np.gradient(np.gradient(x, dt, axis=0), dt, axis=0)


def jerk_samples(log):
    """Per-joint jerk ``(ticks, n)`` from the commanded joint velocities."""
    if len(log) < 3:
        raise ValueError(f"jerk needs at least 3 ticks, log has {len(log)}")
    return differentiate_twice(log.qd, log.dt)


def reference_profiles(T=SMOOTH_PERIOD, amplitude=VELOCITY_AMPLITUDE, dt=0.002, periods=4, seed=0):
    """Smooth (sinusoid) and rough (uniform random) joint velocity profiles and their jerk.

    Returns a dict with ``t``, ``smooth``, ``rough`` (velocities), ``smooth_jerk``,
    ``rough_jerk``, ``smooth_max`` and ``rough_max``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    n = int(round(periods * T / dt)) + 1
    t = np.arange(n) * dt
    smooth = amplitude * np.sin(2.0 * math.pi * t / T)
    rough = np.random.default_rng(seed).uniform(-amplitude, amplitude, size=n)
    sj = differentiate_twice(smooth, dt)
    rj = differentiate_twice(rough, dt)
    return {
        "t": t,
        "smooth": smooth,
        "rough": rough,
        "smooth_jerk": sj,
        "rough_jerk": rj,
        "smooth_max": float(np.abs(sj).max()),
        "rough_max": float(np.abs(rj).max()),
    }


@dataclass(frozen=True, eq=False)
class JerkHistogram:
    counts: np.ndarray
    edges: np.ndarray
    smooth_max: float
    rough_max: float

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def jerk_histogram(samples, n_bins=1000, dt=0.002):
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("histogram needs at least one sample")
    counts, edges = np.histogram(samples, bins=n_bins)
    ref = reference_profiles(dt=dt)
    return JerkHistogram(counts, edges, ref["smooth_max"], ref["rough_max"])


def trajectory_fft(log, window=None):
    """Mean DFT magnitude over joints of the mean-removed joint positions: ``(freq_hz, magnitude)``.

    ``window="hann"`` tapers the signal first, which removes the leakage a
    trajectory with different start and end positions spreads over all bins.
    """
    if len(log) < 2:
        raise ValueError(f"FFT needs at least 2 ticks, log has {len(log)}")
    x = log.q - log.q.mean(axis=0)
    if window == "hann":
        x = x * np.hanning(len(log))[:, None]
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    mag = np.abs(np.fft.rfft(x, axis=0)).mean(axis=1)
    return np.fft.rfftfreq(len(log), log.dt), mag


def fraction_below(freq, mag, cutoff=FFT_CUTOFF_HZ):
    total = mag.sum()
    if total == 0.0:
        return 1.0
    return float(mag[freq <= cutoff].sum() / total)


def cartesian_deviation(log):
    """Per tick: reference and achieved positions ``(ticks, arms, 3)``, deviation (max over arms) and min distance."""
    if log.ref_pos is None or len(log) == 0:
        return np.zeros((0, 0, 3)), np.zeros((0, 0, 3)), np.zeros(0), np.zeros(0)
    dev = np.linalg.norm(log.ach_pos - log.ref_pos, axis=2)
    return log.ref_pos, log.ach_pos, dev.max(axis=1), log.min_dist


@dataclass(eq=False)
class MetricsReport:
    median_solve_time: float
    mean_nwsr: float
    mean_nac: float
    jerk_histogram: Optional[JerkHistogram]
    jerk_reference_bounds: dict
    fft_freq: np.ndarray
    fft_magnitude: np.ndarray
    waypoint_errors: list
    max_abs_jerk: float = float("nan")
    fft_fraction_below: float = float("nan")
    min_distance: float = float("nan")
    halted_ticks: int = 0
    ticks: int = 0
    errors: dict = field(default_factory=dict)


def compute_metrics(log):
    """All metrics that can be derived from the log alone; failures are recorded in ``errors``."""
    errors = {}
    stats = solve_stats(log) if len(log) else {"median_solve_time": float("nan"), "mean_nwsr": float("nan"), "mean_nac": float("nan")}
    hist = None
    max_jerk = float("nan")
    ref = reference_profiles(dt=log.dt if np.isfinite(log.dt) else 0.002)
    bounds = {"smooth_max": ref["smooth_max"], "rough_max": ref["rough_max"]}
    try:
        j = jerk_samples(log)
        hist = jerk_histogram(j, dt=log.dt)
        max_jerk = float(np.abs(j).max())
    except ValueError as exc:
        errors["jerk"] = str(exc)
    freq, mag, frac = np.zeros(0), np.zeros(0), float("nan")
    try:
        freq, mag = trajectory_fft(log)
        frac = fraction_below(freq, mag)
    except ValueError as exc:
        errors["fft"] = str(exc)
    return MetricsReport(
        stats["median_solve_time"],
        stats["mean_nwsr"],
        stats["mean_nac"],
        hist,
        bounds,
        freq,
        mag,
        list(log.waypoint_errors),
        max_jerk,
        frac,
        float(np.min(log.min_dist)) if len(log) else float("nan"),
        log.halted_ticks,
        len(log),
        errors,
    )


def write_metrics(report, log, outdir):
    """``stats.csv``, ``jerk_hist.csv``, ``fft.csv`` and (with reference data) ``cartesian.csv``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "stats.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key, val in (
            ("ticks", report.ticks),
            ("halted_ticks", report.halted_ticks),
            ("median_solve_time_s", report.median_solve_time),
            ("mean_nwsr", report.mean_nwsr),
            ("mean_nac", report.mean_nac),
            ("min_distance_m", report.min_distance),
            ("max_abs_jerk", report.max_abs_jerk),
            ("smooth_reference_max_jerk", report.jerk_reference_bounds["smooth_max"]),
            ("rough_reference_max_jerk", report.jerk_reference_bounds["rough_max"]),
            ("fft_fraction_below_0.5hz", report.fft_fraction_below),
        ):
            w.writerow([key, str(val) if isinstance(val, int) else fmt(val)])
        for key, msg in sorted(report.errors.items()):
            w.writerow([f"error_{key}", msg])
    with open(outdir / "jerk_hist.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center", "count"])
        if report.jerk_histogram is not None:
            for c, n in zip(report.jerk_histogram.centers, report.jerk_histogram.counts):
                w.writerow([fmt(c), int(n)])
    with open(outdir / "fft.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "magnitude"])
        for f, m in zip(report.fft_freq, report.fft_magnitude):
            w.writerow([fmt(f), fmt(m)])
    if log.ref_pos is not None:
        ref, ach, dev, dmin = cartesian_deviation(log)
        arms = ref.shape[1] if ref.ndim == 3 else 0
        with open(outdir / "cartesian.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["t"]
            for a in range(arms):
                header += [f"ref_x_{a}", f"ref_y_{a}", f"ref_z_{a}", f"ach_x_{a}", f"ach_y_{a}", f"ach_z_{a}"]
            w.writerow(header + ["deviation_m", "min_dist_m"])
            for k in range(len(dev)):
                row = [fmt(log.t[k])]
                for a in range(arms):
                    row += [fmt(v) for v in ref[k, a]] + [fmt(v) for v in ach[k, a]]
                w.writerow(row + [fmt(dev[k]), fmt(dmin[k])])


def write_run(log, outdir):
    """Write a run directory and return the metrics computed from the files just written."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_meta(log.meta, outdir / "meta.json")
    write_runlog(log, outdir / "runlog.csv")
    write_reference(log, outdir / "reference.csv")
    write_waypoint_errors(log, outdir / "waypoints.csv")
    return analyze_dir(outdir / "runlog.csv", outdir)


def analyze_dir(runlog_path, outdir):
    """Recompute every metric CSV from a RunLog file (and its ``reference.csv`` if present)."""
    runlog_path = Path(runlog_path)
    log = read_runlog(runlog_path)
    ref = runlog_path.parent / "reference.csv"
    if ref.exists():
        read_reference(ref, log)
    report = compute_metrics(log)
    write_metrics(report, log, outdir)
    return log, report


__all__ = [
    "ScenarioConfig",
    "ArmSpec",
    "RunLog",
    "MetricsReport",
    "JerkHistogram",
    "parse_scenario",
    "load_scenario",
    "generate_waypoint",
    "scenario_waypoints",
    "run",
    "solve_stats",
    "jerk_samples",
    "jerk_histogram",
    "reference_profiles",
    "trajectory_fft",
    "fraction_below",
    "cartesian_deviation",
    "compute_metrics",
    "write_runlog",
    "read_runlog",
    "write_run",
    "analyze_dir",
]
