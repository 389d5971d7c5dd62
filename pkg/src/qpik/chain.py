"""Serial-chain kinematics: forward kinematics, geometric Jacobians, pose error.

Frames of an ``N``-joint chain are indexed ``0..N+1``: frame 0 is the base,
frame ``i`` (1..N) is the child link of joint ``i`` and frame ``N+1`` is the
end-effector (tool) frame. Collision volumes attach to these same indices.
"""

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .docs import DocNode, DocumentError
from .transforms import matrix_to_quat, matrix_to_rotvec, normalize_quat, quat_to_matrix, skew

BIG = 1e9  # position limit used for continuous joints, rad


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid pose: position (m) and scalar-first unit quaternion."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError("pose position must be finite")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", normalize_quat(np.array(self.orientation, dtype=float).reshape(4)))

    @classmethod
    def identity(cls):
        return cls(np.zeros(3))

    @classmethod
    def from_matrix(cls, R, p):
        return cls(p, matrix_to_quat(R))

    @cached_property
    def rotation(self):
        return quat_to_matrix(self.orientation)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def __repr__(self):
        return f"Pose(position={self.position.tolist()}, orientation={self.orientation.tolist()})"


@dataclass(frozen=True)
class SpatialVelocity:
    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float).reshape(3)
        ang = np.array(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise ValueError("spatial velocity must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self):
        return np.concatenate([self.linear, self.angular])


@dataclass(frozen=True)
class JointSpec:
    name: str
    axis: np.ndarray
    origin: Pose
    q_lb: float
    q_ub: float
    qd_lb: float
    qd_ub: float

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if not n > 1e-9:
            raise ValueError(f"joint '{self.name}': axis has zero norm")
        object.__setattr__(self, "axis", axis / n)
        if not self.q_lb <= self.q_ub:
            raise ValueError(f"joint '{self.name}': q_lb > q_ub")
        if not self.qd_lb < 0.0 < self.qd_ub:
            raise ValueError(f"joint '{self.name}': velocity limits must straddle zero")


@dataclass(frozen=True, eq=False)
class KinematicChain:
    name: str
    joints: tuple
    base_transform: Pose = field(default_factory=Pose.identity)
    tool_transform: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if len(self.joints) < 1:
            raise ValueError(f"chain '{self.name}' has no joints")

    @property
    def dof(self):
        return len(self.joints)

    @property
    def n_frames(self):
        return self.dof + 2

    @cached_property
    def q_lb(self):
        return np.array([j.q_lb for j in self.joints])

    @cached_property
    def q_ub(self):
        return np.array([j.q_ub for j in self.joints])

    @cached_property
    def qd_lb(self):
        return np.array([j.qd_lb for j in self.joints])

    @cached_property
    def qd_ub(self):
        return np.array([j.qd_ub for j in self.joints])

    @cached_property
    def _kernel_data(self):
        # origin_R @ Rot(axis, q) = A0 + sin(q) A1 + (1 - cos(q)) A2
        A0 = np.array([j.origin.rotation for j in self.joints])
        K = np.array([skew(j.axis) for j in self.joints])
        A1 = A0 @ K
        A2 = A1 @ K
        t = np.array([j.origin.position for j in self.joints])
        axes = np.array([j.axis for j in self.joints])
        return (
            np.ascontiguousarray(A0),
            np.ascontiguousarray(A1),
            np.ascontiguousarray(A2),
            t,
            axes,
            self.base_transform.rotation.copy(),
            self.base_transform.position.copy(),
            self.tool_transform.rotation.copy(),
            self.tool_transform.position.copy(),
        )

    def frames_batch(self, Q):
        """World rotations ``(B, N+2, 3, 3)`` and origins ``(B, N+2, 3)`` for a batch of configurations."""
        Q = np.ascontiguousarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[1] != self.dof:
            raise ValueError(f"expected joint batch of shape (B, {self.dof}), got {Q.shape}")
        return _fk_kernel(Q, *self._kernel_data)

    def frames(self, q):
        q = _check_q(q, self.dof)
        R, p = self.frames_batch(q[None, :])
        return R[0], p[0]

    def joint_axes_world(self, R):
        """World joint axes from frame rotations of a single configuration."""
        return _axes_world(R, self._kernel_data[4])


def _check_q(q, dof):
    q = np.asarray(q, dtype=float)
    if q.shape != (dof,):
        raise ValueError(f"expected joint vector of length {dof}, got shape {q.shape}")
    return q


@njit(cache=True)
def _fk_into(q, A0, A1, A2, t, base_R, base_p, tool_R, tool_p, R, p, f0):
    """Frames of one configuration written to ``R[f0:f0+N+2]``, ``p[f0:f0+N+2]``."""
    N = q.shape[0]
    R[f0] = base_R
    p[f0] = base_p
    for i in range(N):
        s = np.sin(q[i])
        c1 = 1.0 - np.cos(q[i])
        a, b = f0 + i, f0 + i + 1
        for k in range(3):
            # column k of the joint rotation, kept in registers
            m0 = A0[i, 0, k] + s * A1[i, 0, k] + c1 * A2[i, 0, k]
            m1 = A0[i, 1, k] + s * A1[i, 1, k] + c1 * A2[i, 1, k]
            m2 = A0[i, 2, k] + s * A1[i, 2, k] + c1 * A2[i, 2, k]
            for r in range(3):
                R[b, r, k] = R[a, r, 0] * m0 + R[a, r, 1] * m1 + R[a, r, 2] * m2
        for r in range(3):
            p[b, r] = p[a, r] + R[a, r, 0] * t[i, 0] + R[a, r, 1] * t[i, 1] + R[a, r, 2] * t[i, 2]
    a, b = f0 + N, f0 + N + 1
    for r in range(3):
        p[b, r] = p[a, r] + R[a, r, 0] * tool_p[0] + R[a, r, 1] * tool_p[1] + R[a, r, 2] * tool_p[2]
        for k in range(3):
            R[b, r, k] = R[a, r, 0] * tool_R[0, k] + R[a, r, 1] * tool_R[1, k] + R[a, r, 2] * tool_R[2, k]


@njit(cache=True)
def _fk_kernel(Q, A0, A1, A2, t, axes, base_R, base_p, tool_R, tool_p):
    B, N = Q.shape
    R = np.empty((B, N + 2, 3, 3))
    p = np.empty((B, N + 2, 3))
    for b in range(B):
        _fk_into(Q[b], A0, A1, A2, t, base_R, base_p, tool_R, tool_p, R[b], p[b], 0)
    return R, p


@njit(cache=True)
def _axes_world(R, axes):
    N = axes.shape[0]
    z = np.empty((N, 3))
    for i in range(N):
        for r in range(3):
            z[i, r] = R[i + 1, r, 0] * axes[i, 0] + R[i + 1, r, 1] * axes[i, 1] + R[i + 1, r, 2] * axes[i, 2]
    return z


@njit(cache=True)
def _jacobian_kernel(z, p, target):
    N = z.shape[0]
    J = np.zeros((6, N))
    for i in range(N):
        dx = target[0] - p[i + 1, 0]
        dy = target[1] - p[i + 1, 1]
        dz = target[2] - p[i + 1, 2]
        J[0, i] = z[i, 1] * dz - z[i, 2] * dy
        J[1, i] = z[i, 2] * dx - z[i, 0] * dz
        J[2, i] = z[i, 0] * dy - z[i, 1] * dx
        J[3, i] = z[i, 0]
        J[4, i] = z[i, 1]
        J[5, i] = z[i, 2]
    return J


def forward_kinematics(chain, q):
    """Return ``(link_poses, ee_pose)``; ``link_poses[0]`` is the base frame."""
    R, p = chain.frames(q)
    poses = [Pose.from_matrix(R[i], p[i]) for i in range(chain.n_frames)]
    return poses[:-1], poses[-1]


def jacobian_from_frames(chain, R, p, frame=None):
    """Geometric Jacobian of ``frame`` (default: end-effector) from precomputed frames.

    Joints that do not precede ``frame`` in the chain get zero columns.
    """
    frame = chain.n_frames - 1 if frame is None else frame
    J = _jacobian_kernel(chain.joint_axes_world(R), p, p[frame])
    if frame <= chain.dof:
        J[:, frame:] = 0.0
    return J


def geometric_jacobian(chain, q, frame=None):
    R, p = chain.frames(q)
    return jacobian_from_frames(chain, R, p, frame)


def pose_error_rp(p, R, p_d, R_d):
    e = np.empty(6)
    e[:3] = p - p_d
    e[3:] = matrix_to_rotvec(R @ R_d.T)
    return e


def pose_error(x, x_d):
    """6-vector ``(x - x_d)``: position difference then log-map of ``R(x) R(x_d)^T``."""
    return pose_error_rp(x.position, x.rotation, x_d.position, x_d.rotation)


@dataclass(frozen=True, eq=False)
class CompositeChain:
    """Several chains stacked into one joint vector (arm-major order)."""

    chains: tuple

    def __post_init__(self):
        object.__setattr__(self, "chains", tuple(self.chains))
        if not self.chains:
            raise ValueError("composite needs at least one chain")

    @cached_property
    def offsets(self):
        return tuple(int(x) for x in np.cumsum([0] + [c.dof for c in self.chains[:-1]]))

    @property
    def dof(self):
        return sum(c.dof for c in self.chains)

    def split(self, q_stacked):
        q_stacked = _check_q(q_stacked, self.dof)
        return [q_stacked[o : o + c.dof] for o, c in zip(self.offsets, self.chains)]

    def _stack(self, attr):
        return np.concatenate([getattr(c, attr) for c in self.chains])

    @cached_property
    def q_lb(self):
        return self._stack("q_lb")

    @cached_property
    def q_ub(self):
        return self._stack("q_ub")

    @cached_property
    def qd_lb(self):
        return self._stack("qd_lb")

    @cached_property
    def qd_ub(self):
        return self._stack("qd_ub")

    def frames(self, q_stacked):
        return [c.frames(qi) for c, qi in zip(self.chains, self.split(q_stacked))]

    def ee_poses(self, q_stacked):
        return [Pose.from_matrix(R[-1], p[-1]) for R, p in self.frames(q_stacked)]


def composite_jacobian_from_frames(comp, frames):
    J = np.zeros((6 * len(comp.chains), comp.dof))
    for k, (chain, off, (R, p)) in enumerate(zip(comp.chains, comp.offsets, frames)):
        J[6 * k : 6 * k + 6, off : off + chain.dof] = jacobian_from_frames(chain, R, p)
    return J


def composite_jacobian(comp, q_stacked):
    """Block-diagonal stack of per-arm end-effector Jacobians, ``(6k, N_total)``."""
    return composite_jacobian_from_frames(comp, comp.frames(q_stacked))


# -- chain documents ---------------------------------------------------------


def _read_pose(node):
    return Pose(node["xyz"].vector(3), node["quat"].vector(4)) if node is not None else Pose.identity()


def _check_quat(node):
    if node is None:
        return
    qn = node["quat"]
    n = np.linalg.norm(qn.vector(4))
    if abs(n - 1.0) > 1e-9:
        raise qn.error(f"quaternion norm {n:.12g} is not 1 within 1e-9")


def parse_chain(text, source="<string>"):
    doc = DocNode.parse(text, source)
    name = doc["name"].str() if doc.has("name") else Path(source).stem
    for key in ("base_transform", "tool_transform"):
        _check_quat(doc.get(key))
    joints = []
    for jn in doc["joints"].items():
        jname = jn["name"].str()
        _check_quat(jn["origin"])
        q_lim = jn["q_limits"].vector(2) if jn.has("q_limits") else np.array([-BIG, BIG])
        qd_lim = jn["qd_limits"].vector(2)
        try:
            joints.append(
                JointSpec(
                    jname,
                    jn["axis"].vector(3),
                    _read_pose(jn["origin"]),
                    float(q_lim[0]),
                    float(q_lim[1]),
                    float(qd_lim[0]),
                    float(qd_lim[1]),
                )
            )
        except ValueError as exc:
            raise DocumentError(str(exc), source, jn.line, 1, jn.path) from exc
    if not joints:
        raise doc["joints"].error("chain needs at least one joint")
    return KinematicChain(name, joints, _read_pose(doc.get("base_transform")), _read_pose(doc.get("tool_transform")))


def load_chain(path):
    path = Path(path)
    return parse_chain(path.read_text(encoding="utf-8"), str(path))


def data_path(name):
    """Path of a bundled data file (chain or scenario document)."""
    return Path(str(resources.files("qpik") / "data" / name))


def with_base(chain, base):
    """Copy of ``chain`` mounted at ``base`` (a Pose) instead of its own base transform."""
    R = base.rotation @ chain.base_transform.rotation
    p = base.position + base.rotation @ chain.base_transform.position
    return KinematicChain(chain.name, chain.joints, Pose.from_matrix(R, p), chain.tool_transform)
