"""Per-tick velocity-level IK as a QP, plus versine-ramp task-space interpolation.

Each tick solves for joint velocities ``qd`` minimising::

    |v_d - J qd|^2 + |(x - x_d) + dt J qd|^2_gamma + lambda |qd|^2

subject to merged position/velocity bounds and one linearised clearance row
per volume pair closer than ``d_act``. The new joint position is the explicit
Euler step ``q + dt * qd``.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .chain import CompositeChain, Pose, SpatialVelocity, composite_jacobian_from_frames, pose_error_rp
from .qp import ActiveSetSolver, QPProblem, QPSolution, QPStatus
from .transforms import exp_so3, log_so3, matrix_to_rotvec

ZERO_GRADIENT = 1e-12  # rows whose gradient max-norm is below this constrain nothing


@dataclass
class PlannerConfig:
    dt: float = 0.002
    gamma: object = 1.0  # scalar, 6-vector diagonal or 6x6 matrix, applied per arm
    lam: float = 1e-3
    d_buff: float = 0.05
    d_act: Optional[float] = None  # default d_buff + 0.10
    delta_q: float = 1e-5
    ubA_big: float = 1e10
    max_nwsr: int = 200
    literal_eq12: bool = False

    def __post_init__(self):
        if self.d_act is None:
            self.d_act = self.d_buff + 0.10
        self.gamma_matrix()  # shape check

    def gamma_matrix(self):
        cached = getattr(self, "_gamma_cache", None)
        if cached is not None and cached[0] is self.gamma:
            return cached[1]
        G = self._gamma_matrix()
        self._gamma_cache = (self.gamma, G)
        return G

    def _gamma_matrix(self):
        G = np.asarray(self.gamma, dtype=float)
        if G.ndim == 0:
            G = G * np.eye(6)
        elif G.shape == (6,):
            G = np.diag(G)
        if G.shape != (6, 6):
            raise ValueError("gamma must be a scalar, a 6-vector or a 6x6 matrix")
        return G

    def validate(self, comp=None):
        """Raise ValueError on the first violated invariant."""
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.d_buff > 0:
            raise ValueError("d_buff must be positive")
        if not self.d_act >= self.d_buff:
            raise ValueError("d_act must be at least d_buff")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if np.any(np.linalg.eigvalsh(0.5 * (self.gamma_matrix() + self.gamma_matrix().T)) < 0):
            raise ValueError("gamma must be non-negative")
        if not self.delta_q > 0:
            raise ValueError("delta_q must be positive")
        if comp is not None and not self.delta_q < self.dt * float(np.min(comp.qd_ub)):
            raise ValueError("delta_q must be smaller than dt * min(qd_ub)")
        if self.max_nwsr < 1:
            raise ValueError("max_nwsr must be at least 1")
        return self


@dataclass(frozen=True)
class Waypoint:
    pose: Pose
    duration: float
    terminal_velocity: SpatialVelocity = field(default_factory=SpatialVelocity.zero)

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("waypoint duration must be positive")


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    """Desired pose and twist of every arm at time ``t``.

    Stored as arrays (``p_d`` ``(k, 3)``, ``R_d`` ``(k, 3, 3)``, ``v`` ``(6k,)``
    linear-then-angular per arm); ``x_d`` and ``v_d`` give the object views.
    """

    t: float
    p_d: np.ndarray
    R_d: np.ndarray
    v: np.ndarray

    @classmethod
    def from_poses(cls, t, x_d, v_d):
        x_d, v_d = tuple(x_d), tuple(v_d)
        return cls(
            float(t),
            np.array([x.position for x in x_d]).reshape(-1, 3),
            np.array([x.rotation for x in x_d]).reshape(-1, 3, 3),
            np.concatenate([w.as_vector() for w in v_d]),
        )

    @property
    def x_d(self):
        return tuple(Pose.from_matrix(R, p) for R, p in zip(self.R_d, self.p_d))

    @property
    def v_d(self):
        return tuple(SpatialVelocity(self.v[6 * a : 6 * a + 3], self.v[6 * a + 3 : 6 * a + 6]) for a in range(len(self.p_d)))


@dataclass(frozen=True, eq=False)
class StepResult:
    q_d: np.ndarray
    qd_d: np.ndarray
    solve_time: float
    nwsr: int
    nac: int
    min_distance: float
    status: QPStatus
    solution: Optional[QPSolution] = None

    @property
    def halted(self):
        return self.status is not QPStatus.SOLVED


# -- interpolation -------------------------------------------------------------


def versine_ramp(t, T):
    """Cycloidal ramp ``s(t) = t/T - sin(2 pi t/T)/(2 pi)`` and its derivative."""
    if not T > 0:
        raise ValueError("T must be positive")
    if t < 0 or t > T:
        raise ValueError(f"t={t} outside [0, {T}]")
    u = 2.0 * math.pi * t / T
    return t / T - math.sin(u) / (2.0 * math.pi), (1.0 - math.cos(u)) / T


def interpolate(start, wp, t):
    """Desired ``(Pose, SpatialVelocity)`` at ``t`` seconds into the segment from ``start`` to ``wp``.

    Position blends linearly and orientation about the fixed axis of the
    relative rotation, both driven by the versine ramp.
    """
    seg = Segment((start,), (wp,))
    sample = seg.sample(t)
    return sample.x_d[0], sample.v_d[0]


class Segment:
    """Interpolation data for one synchronised segment (one waypoint per arm)."""

    def __init__(self, starts, waypoints):
        self.duration = float(waypoints[0].duration)
        if any(w.duration != self.duration for w in waypoints):
            raise ValueError("waypoints of one segment must share a duration")
        self.p0 = np.array([s.position for s in starts])
        self.R0 = np.array([s.rotation for s in starts])
        self.dp = np.array([w.pose.position for w in waypoints]) - self.p0
        self.r = np.array([matrix_to_rotvec(w.pose.rotation @ s.rotation.T) for s, w in zip(starts, waypoints)])

    def sample(self, t, t_global=None):
        s, sd = versine_ramp(t, self.duration)
        p, R, v = _sample_kernel(s, sd, self.p0, self.R0, self.dp, self.r)
        return TrajectorySample(t if t_global is None else t_global, p, R, v)


@njit(cache=True)
def _sample_kernel(s, sd, p0, R0, dp, r):
    k = p0.shape[0]
    p = p0 + s * dp
    R = np.empty((k, 3, 3))
    v = np.empty(6 * k)
    for a in range(k):
        E = exp_so3(s * r[a])
        for i in range(3):
            for j in range(3):
                R[a, i, j] = E[i, 0] * R0[a, 0, j] + E[i, 1] * R0[a, 1, j] + E[i, 2] * R0[a, 2, j]
            v[6 * a + i] = sd * dp[a, i]
            v[6 * a + 3 + i] = sd * r[a, i]
    return p, R, v


# -- QP assembly -----------------------------------------------------------------


@njit(cache=True)
def _cost_kernel(J, G, R_ee, p_ee, R_d, p_d, v, dt, lam):
    """``H = J'J + dt^2 J'GJ + lam I`` and ``g = -J'v + dt J'G e`` with G applied per arm."""
    k = p_d.shape[0]
    n = J.shape[1]
    e = np.empty(6 * k)
    for a in range(k):
        for r in range(3):
            e[6 * a + r] = p_ee[a, r] - p_d[a, r]
        e[6 * a + 3 : 6 * a + 6] = log_so3(R_ee[a] @ R_d[a].T)
    GJ = np.zeros((6 * k, n))
    Ge = np.zeros(6 * k)
    for a in range(k):
        for r in range(6):
            for c in range(6):
                w = G[r, c]
                if w != 0.0:
                    Ge[6 * a + r] += w * e[6 * a + c]
                    for j in range(n):
                        GJ[6 * a + r, j] += w * J[6 * a + c, j]
    H = np.empty((n, n))
    g = np.empty(n)
    for i in range(n):
        for j in range(i, n):
            acc = 0.0
            acc2 = 0.0
            for r in range(6 * k):
                acc += J[r, i] * J[r, j]
                acc2 += J[r, i] * GJ[r, j]
            acc2b = 0.0
            for r in range(6 * k):
                acc2b += J[r, j] * GJ[r, i]
            h = acc + dt * dt * 0.5 * (acc2 + acc2b)
            H[i, j] = h
            H[j, i] = h
        H[i, i] += lam
        acc = 0.0
        acc2 = 0.0
        for r in range(6 * k):
            acc += J[r, i] * v[r]
            acc2 += J[r, i] * Ge[r]
        g[i] = -acc + dt * acc2
    return H, g


def _cost_terms(comp, frames, sample, config):
    J = composite_jacobian_from_frames(comp, frames)
    R_ee = np.array([R[-1] for R, _ in frames])
    p_ee = np.array([p[-1] for _, p in frames])
    return _cost_kernel(J, config.gamma_matrix(), R_ee, p_ee, sample.R_d, sample.p_d, sample.v, config.dt, config.lam)


def merged_bounds(comp, q, dt):
    lb = np.maximum(comp.qd_lb, (comp.q_lb - q) / dt)
    ub = np.minimum(comp.qd_ub, (comp.q_ub - q) / dt)
    # a position just outside its limit would give lb > ub; hold that joint
    lb = np.minimum(lb, ub)
    return lb, ub


def _collision_rows(evaluator, world, q, d_now, config):
    idx = np.nonzero(d_now < config.d_act)[0]
    grads = evaluator.gradients(q, idx, config.delta_q)
    keep = np.abs(grads).max(axis=1, initial=0.0) > ZERO_GRADIENT if len(idx) else np.zeros(0, bool)
    idx, grads = idx[keep], grads[keep]
    A = grads * config.dt
    if config.literal_eq12:
        lbA = np.full(len(idx), config.d_buff)
    else:
        lbA = config.d_buff - d_now[idx]
    ubA = np.full(len(idx), config.ubA_big)
    return tuple(world.pairs[k] for k in idx), A, lbA, ubA


def assemble_qp(comp, world, q, sample, config):
    """QP for one tick at joint configuration ``q``. Returns ``(problem, pair ids per row)``."""
    if isinstance(comp, CompositeChain) is False:
        comp = CompositeChain([comp])
    q = np.asarray(q, dtype=float)
    frames = comp.frames(q)
    H, g = _cost_terms(comp, frames, sample, config)
    lb, ub = merged_bounds(comp, q, config.dt)
    ev = world.evaluator(comp)
    d_now = ev.distances(q)[0] if len(world.pairs) else np.zeros(0)
    pairs, A, lbA, ubA = _collision_rows(ev, world, q, d_now, config)
    return QPProblem.trusted(H, g, np.ascontiguousarray(A.reshape(-1, comp.dof)), lbA, ubA, lb, ub), pairs


# -- stepping ----------------------------------------------------------------------


class Planner:
    """Stateful tick-by-tick planner. Keeps the previous solution for warm starts,
    re-mapping general rows by volume-pair identity."""

    def __init__(self, comp, world, config=None):
        if not isinstance(comp, CompositeChain):
            comp = CompositeChain([comp])
        self.comp = comp
        self.world = world
        self.config = (config or PlannerConfig()).validate(comp)
        self.evaluator = world.evaluator(comp)
        self.solver = ActiveSetSolver(self.config.max_nwsr)
        self._warm = None  # (pair ids, solution)
        self._dist_cache = None  # (q bytes, distances)

    def reset(self):
        self._warm = None
        self._dist_cache = None

    def _distances(self, q):
        if not len(self.world.pairs):
            return np.zeros(0)
        key = q.tobytes()
        if self._dist_cache is not None and self._dist_cache[0] == key:
            return self._dist_cache[1]
        d = self.evaluator.distances(q)[0]
        self._dist_cache = (key, d)
        return d

    def _warm_for(self, pairs):
        if self._warm is None:
            return None
        old_pairs, sol = self._warm
        n = self.comp.dof
        lookup = {p: j for j, p in enumerate(old_pairs)}
        rows = np.zeros(len(pairs), dtype=np.int8)
        for j, p in enumerate(pairs):
            k = lookup.get(p)
            if k is not None:
                rows[j] = sol.sides[n + k]
        sides = np.concatenate([sol.sides[:n], rows])
        return QPSolution(sol.a_star, sol.status, 0, (), 0.0, np.zeros(len(sides)), sides)

    def assemble(self, q, sample):
        comp, config = self.comp, self.config
        frames = comp.frames(q)
        H, g = _cost_terms(comp, frames, sample, config)
        lb, ub = merged_bounds(comp, q, config.dt)
        pairs, A, lbA, ubA = _collision_rows(self.evaluator, self.world, q, self._distances(q), config)
        return QPProblem.trusted(H, g, np.ascontiguousarray(A.reshape(-1, comp.dof)), lbA, ubA, lb, ub), pairs

    def step(self, q, sample):
        q = np.asarray(q, dtype=float)
        t0 = time.perf_counter()
        problem, pairs = self.assemble(q, sample)
        sol = self.solver.solve(problem, warm=self._warm_for(pairs))
        elapsed = time.perf_counter() - t0
        if sol.status is QPStatus.SOLVED:
            qd = sol.a_star.copy()
            self._warm = (pairs, sol)
        else:
            qd = np.zeros_like(q)
            self._warm = None
        q_d = q + self.config.dt * qd
        d = self._distances(q_d)
        dmin = float(d.min()) if len(d) else math.inf
        return StepResult(q_d, qd, elapsed, sol.nwsr, sol.nac, dmin, sol.status, sol)


def step(q, sample, comp, world, config=None, planner=None):
    """One tick. Pass the same ``planner`` across calls to keep warm starts."""
    planner = planner or Planner(comp, world, config)
    return planner.step(q, sample)


# -- whole runs ---------------------------------------------------------------------


@dataclass(eq=False)
class RunLog:
    """Per-tick record arrays plus run metadata.

    ``ref_pos`` and ``ach_pos`` hold the desired and achieved end-effector
    positions, ``(ticks, arms, 3)``.
    """

    dt: float
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    solve_time: np.ndarray
    nwsr: np.ndarray
    nac: np.ndarray
    min_dist: np.ndarray
    status: list
    ref_pos: Optional[np.ndarray] = None
    ach_pos: Optional[np.ndarray] = None
    waypoint_errors: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def halted_ticks(self):
        return sum(1 for s in self.status if s != QPStatus.SOLVED.value)

    @classmethod
    def empty(cls, n, dt, arms=1):
        z = np.zeros(0)
        return cls(dt, z, np.zeros((0, n)), np.zeros((0, n)), z, np.zeros(0, int), np.zeros(0, int), z, [],
                   np.zeros((0, arms, 3)), np.zeros((0, arms, 3)))


def plan(comp, world, q0, waypoints, config=None, planner=None):
    """Run every segment tick by tick and return the RunLog.

    ``waypoints`` is a list of segments; a segment is a Waypoint (single arm) or
    a sequence of Waypoints, one per arm, sharing one duration. Each segment
    starts from the current end-effector pose.
    """
    if not isinstance(comp, CompositeChain):
        comp = CompositeChain([comp])
    planner = planner or Planner(comp, world, config)
    config = planner.config
    dt = config.dt
    k_arms = len(comp.chains)
    q = np.array(q0, dtype=float)
    segs = [(w,) if isinstance(w, Waypoint) else tuple(w) for w in waypoints]
    counts = [int(round(s[0].duration / dt)) for s in segs]
    K, n = sum(counts), comp.dof
    t = np.empty(K)
    Q = np.empty((K, n))
    QD = np.empty((K, n))
    st = np.empty(K)
    nwsr = np.empty(K, dtype=int)
    nac = np.empty(K, dtype=int)
    dmin = np.empty(K)
    status = []
    ref = np.empty((K, k_arms, 3))
    ach = np.empty((K, k_arms, 3))
    errors = []
    row = 0
    t_global = 0.0
    for seg, count in zip(segs, counts):
        if len(seg) != k_arms:
            raise ValueError(f"segment has {len(seg)} waypoints for {k_arms} arms")
        segment = Segment(comp.ee_poses(q), seg)
        T = segment.duration
        for k in range(1, count + 1):
            tl = min(k * dt, T)
            t_now = t_global + k * dt
            sample = segment.sample(tl, t_now)
            res = planner.step(q, sample)
            q = res.q_d
            t[row] = t_now
            Q[row] = q
            QD[row] = res.qd_d
            st[row] = res.solve_time
            nwsr[row] = res.nwsr
            nac[row] = res.nac
            dmin[row] = res.min_distance
            status.append(res.status.value)
            ref[row] = sample.p_d
            row += 1
        t_global += count * dt
        final = comp.ee_poses(q)
        errors.append([pose_error_rp(f.position, f.rotation, w.pose.position, w.pose.rotation) for f, w in zip(final, seg)])
    # achieved positions by FK on the logged joint trajectory
    for a, (chain, off) in enumerate(zip(comp.chains, comp.offsets)):
        if K:
            _, p = chain.frames_batch(Q[:, off : off + chain.dof])
            ach[:, a] = p[:, -1]
    return RunLog(dt, t, Q, QD, st, nwsr, nac, dmin, status, ref, ach, errors)
