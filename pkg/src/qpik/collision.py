"""Collision volumes attached to chain links, pairwise distances and their joint-space gradients.

Sphere, capsule and halfspace pairs use closed forms and return signed
distances (negative when penetrating). Pairs involving a box go through GJK
and only report separation distance.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .chain import Pose, _fk_into
from .gjk import PenetrationUnsupported, box_support, gjk_distance, point_support, segment_support

SPHERE, CAPSULE, HALFSPACE, BOX = 0, 1, 2, 3

# packed posed-volume row layout
_TYPE, _RAD, _C, _A, _B, _N, _OFF, _R, _HALF = 0, 1, 2, 5, 8, 11, 14, 15, 24
ROW = 27

INF = float("inf")


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")

    def at(self, position, orientation=(1.0, 0.0, 0.0, 0.0)):
        return Posed(self, Pose(position, orientation))


@dataclass(frozen=True, eq=False)
class Capsule:
    radius: float
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")
        object.__setattr__(self, "a", np.array(self.a, dtype=float).reshape(3))
        object.__setattr__(self, "b", np.array(self.b, dtype=float).reshape(3))

    def at(self, position=(0.0, 0.0, 0.0), orientation=(1.0, 0.0, 0.0, 0.0)):
        return Posed(self, Pose(position, orientation))


@dataclass(frozen=True, eq=False)
class Halfspace:
    """Solid ``{x : normal . x <= offset}``; ``normal`` points out of the solid."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = np.array(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("halfspace normal must be unit norm")
        object.__setattr__(self, "normal", n)

    def at(self, position=(0.0, 0.0, 0.0), orientation=(1.0, 0.0, 0.0, 0.0)):
        return Posed(self, Pose(position, orientation))


@dataclass(frozen=True, eq=False)
class Box:
    half_extents: np.ndarray

    def __post_init__(self):
        h = np.array(self.half_extents, dtype=float).reshape(3)
        if not np.all(h > 0):
            raise ValueError("box half-extents must be positive")
        object.__setattr__(self, "half_extents", h)

    def at(self, position, orientation=(1.0, 0.0, 0.0, 0.0)):
        return Posed(self, Pose(position, orientation))


@dataclass(frozen=True)
class Posed:
    shape: object
    pose: Pose


def _local_row(shape):
    """Packed row of a shape in its own frame (identity pose)."""
    row = np.zeros(ROW)
    row[_R : _R + 9] = np.eye(3).ravel()
    if isinstance(shape, Sphere):
        row[_TYPE], row[_RAD] = SPHERE, shape.radius
    elif isinstance(shape, Capsule):
        row[_TYPE], row[_RAD] = CAPSULE, shape.radius
        row[_A : _A + 3], row[_B : _B + 3] = shape.a, shape.b
    elif isinstance(shape, Halfspace):
        row[_TYPE] = HALFSPACE
        row[_N : _N + 3], row[_OFF] = shape.normal, shape.offset
    elif isinstance(shape, Box):
        row[_TYPE] = BOX
        row[_HALF : _HALF + 3] = shape.half_extents
    else:
        raise TypeError(f"unsupported shape {shape!r}")
    return row


@njit(cache=True)
def _pose_row(local, R, p, out):
    """Write ``local`` transformed by the rigid motion (R, p) into ``out``."""
    out[:] = local
    for r in range(3):
        out[_C + r] = p[r]
        out[_A + r] = p[r] + R[r, 0] * local[_A] + R[r, 1] * local[_A + 1] + R[r, 2] * local[_A + 2]
        out[_B + r] = p[r] + R[r, 0] * local[_B] + R[r, 1] * local[_B + 1] + R[r, 2] * local[_B + 2]
        out[_N + r] = R[r, 0] * local[_N] + R[r, 1] * local[_N + 1] + R[r, 2] * local[_N + 2]
        for k in range(3):
            out[_R + 3 * r + k] = R[r, k]
    out[_OFF] = local[_OFF] + out[_N] * p[0] + out[_N + 1] * p[1] + out[_N + 2] * p[2]


@njit(cache=True)
def _point_segment(p, a, b):
    abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    den = abx * abx + aby * aby + abz * abz
    t = 0.0
    if den > 0.0:
        t = ((p[0] - a[0]) * abx + (p[1] - a[1]) * aby + (p[2] - a[2]) * abz) / den
        t = min(1.0, max(0.0, t))
    dx = p[0] - (a[0] + t * abx)
    dy = p[1] - (a[1] + t * aby)
    dz = p[2] - (a[2] + t * abz)
    return np.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True)
def _segment_segment(p1, q1, p2, q2):
    # closest points of two segments (Ericson, Real-Time Collision Detection); scalar form avoids temporaries
    d1x, d1y, d1z = q1[0] - p1[0], q1[1] - p1[1], q1[2] - p1[2]
    d2x, d2y, d2z = q2[0] - p2[0], q2[1] - p2[1], q2[2] - p2[2]
    rx, ry, rz = p1[0] - p2[0], p1[1] - p2[1], p1[2] - p2[2]
    a = d1x * d1x + d1y * d1y + d1z * d1z
    e = d2x * d2x + d2y * d2y + d2z * d2z
    f = d2x * rx + d2y * ry + d2z * rz
    eps = 1e-300
    if a <= eps and e <= eps:
        s = 0.0
        t = 0.0
    elif a <= eps:
        s = 0.0
        t = min(1.0, max(0.0, f / e))
    else:
        c = d1x * rx + d1y * ry + d1z * rz
        if e <= eps:
            t = 0.0
            s = min(1.0, max(0.0, -c / a))
        else:
            b = d1x * d2x + d1y * d2y + d1z * d2z
            den = a * e - b * b
            if den > 1e-14 * a * e:
                s = min(1.0, max(0.0, (b * f - c * e) / den))
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(1.0, max(0.0, -c / a))
            elif t > 1.0:
                t = 1.0
                s = min(1.0, max(0.0, (b - c) / a))
    dx = p1[0] + d1x * s - p2[0] - d2x * t
    dy = p1[1] + d1y * s - p2[1] - d2y * t
    dz = p1[2] + d1z * s - p2[2] - d2z * t
    return np.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True)
def _row_less(x, y):
    for k in range(ROW):
        if x[k] < y[k]:
            return True
        if x[k] > y[k]:
            return False
    return False


@njit(cache=True)
def _analytic_distance(x, y):
    """Signed distance of two packed rows; NaN for pairs that need GJK or are unsupported."""
    # canonical operand order makes the result exactly symmetric
    if x[_TYPE] > y[_TYPE] or (x[_TYPE] == y[_TYPE] and _row_less(y, x)):
        x, y = y, x
    tx, ty = int(x[_TYPE]), int(y[_TYPE])
    if tx == BOX or ty == BOX:
        return np.nan
    if tx == SPHERE and ty == SPHERE:
        dx, dy, dz = x[_C] - y[_C], x[_C + 1] - y[_C + 1], x[_C + 2] - y[_C + 2]
        return np.sqrt(dx * dx + dy * dy + dz * dz) - x[_RAD] - y[_RAD]
    if tx == SPHERE and ty == CAPSULE:
        return _point_segment(x[_C : _C + 3], y[_A : _A + 3], y[_B : _B + 3]) - x[_RAD] - y[_RAD]
    if tx == CAPSULE and ty == CAPSULE:
        return _segment_segment(x[_A : _A + 3], x[_B : _B + 3], y[_A : _A + 3], y[_B : _B + 3]) - x[_RAD] - y[_RAD]
    if ty == HALFSPACE and tx == SPHERE:
        h = y[_N] * x[_C] + y[_N + 1] * x[_C + 1] + y[_N + 2] * x[_C + 2]
        return h - y[_OFF] - x[_RAD]
    if ty == HALFSPACE and tx == CAPSULE:
        ha = y[_N] * x[_A] + y[_N + 1] * x[_A + 1] + y[_N + 2] * x[_A + 2]
        hb = y[_N] * x[_B] + y[_N + 1] * x[_B + 1] + y[_N + 2] * x[_B + 2]
        return min(ha, hb) - y[_OFF] - x[_RAD]
    return np.nan


@njit(cache=True)
def _pose_all(frames_R, frames_p, vol_frame, vol_local_R, vol_local_p, vol_rows):
    B = frames_R.shape[0]
    V = vol_rows.shape[0]
    out = np.empty((B, V, ROW))
    R = np.empty((3, 3))
    p = np.empty(3)
    for b in range(B):
        for v in range(V):
            f = vol_frame[v]
            FR = frames_R[b, f]
            Fp = frames_p[b, f]
            for r in range(3):
                p[r] = Fp[r] + FR[r, 0] * vol_local_p[v, 0] + FR[r, 1] * vol_local_p[v, 1] + FR[r, 2] * vol_local_p[v, 2]
                for k in range(3):
                    R[r, k] = FR[r, 0] * vol_local_R[v, 0, k] + FR[r, 1] * vol_local_R[v, 1, k] + FR[r, 2] * vol_local_R[v, 2, k]
            _pose_row(vol_rows[v], R, p, out[b, v])
    return out


@njit(cache=True)
def _pair_distances(posed, pairs):
    B = posed.shape[0]
    P = pairs.shape[0]
    d = np.empty((B, P))
    for b in range(B):
        for k in range(P):
            d[b, k] = _analytic_distance(posed[b, pairs[k, 0]], posed[b, pairs[k, 1]])
    return d


def _gjk_rows(x, y):
    """Distance for a packed pair involving a box."""
    x, y = (x, y) if x[_TYPE] == BOX else (y, x)
    R = x[_R : _R + 9].reshape(3, 3)
    c = x[_C : _C + 3]
    half = x[_HALF : _HALF + 3]
    ty = int(y[_TYPE])
    if ty == HALFSPACE:
        n = y[_N : _N + 3]
        # lowest box vertex along the normal, exact
        return float(n @ c - np.abs(R.T @ n) @ half - y[_OFF])
    if ty == BOX:
        other = box_support(y[_R : _R + 9].reshape(3, 3), y[_C : _C + 3], y[_HALF : _HALF + 3])
        radius = 0.0
    elif ty == SPHERE:
        other, radius = point_support(y[_C : _C + 3]), y[_RAD]
    else:
        other, radius = segment_support(y[_A : _A + 3], y[_B : _B + 3]), y[_RAD]
    return gjk_distance(box_support(R, c, half), other) - radius


@njit(cache=True)
def _batch_distances(Q, dofs, offs, foffs, A0, A1, A2, t, bR, bp, tR, tp, n_frames, vol_frame, vol_local_R, vol_local_p, vol_rows, vols, pairs):
    """FK of every chain, posing of the volumes in ``vols`` and analytic pair distances in one pass.

    ``pairs`` index into ``vols``; unsupported combinations come back as NaN.
    """
    B = Q.shape[0]
    P = pairs.shape[0]
    V = vols.shape[0]
    d = np.empty((B, P))
    R = np.empty((n_frames + 1, 3, 3))
    p = np.empty((n_frames + 1, 3))
    R[n_frames] = np.eye(3)
    p[n_frames] = 0.0
    posed = np.empty((V, ROW))
    Rv = np.empty((3, 3))
    pv = np.empty(3)
    for b in range(B):
        for c in range(dofs.shape[0]):
            n = dofs[c]
            _fk_into(Q[b, offs[c] : offs[c] + n], A0[c, :n], A1[c, :n], A2[c, :n], t[c, :n], bR[c], bp[c], tR[c], tp[c], R, p, foffs[c])
        for j in range(V):
            v = vols[j]
            f = vol_frame[v]
            for r in range(3):
                pv[r] = p[f, r] + R[f, r, 0] * vol_local_p[v, 0] + R[f, r, 1] * vol_local_p[v, 1] + R[f, r, 2] * vol_local_p[v, 2]
                for k in range(3):
                    Rv[r, k] = R[f, r, 0] * vol_local_R[v, 0, k] + R[f, r, 1] * vol_local_R[v, 1, k] + R[f, r, 2] * vol_local_R[v, 2, k]
            _pose_row(vol_rows[v], Rv, pv, posed[j])
        for k in range(P):
            d[b, k] = _analytic_distance(posed[pairs[k, 0]], posed[pairs[k, 1]])
    return d


def _distances(posed, pairs):
    d = _pair_distances(posed, pairs)
    bad = np.isnan(d)
    if bad.any():
        for b, k in zip(*np.nonzero(bad)):
            x, y = posed[b, pairs[k, 0]], posed[b, pairs[k, 1]]
            if x[_TYPE] == HALFSPACE and y[_TYPE] == HALFSPACE:
                raise ValueError("halfspace-halfspace distance is unsupported")
            d[b, k] = _gjk_rows(x, y)
    return d


def primitive_distance(a, b):
    """Signed shortest distance between two posed shapes (``shape.at(...)``)."""
    rows = np.zeros((1, 2, ROW))
    for i, ps in enumerate((a, b)):
        local = _local_row(ps.shape)
        _pose_row(local, ps.pose.rotation, ps.pose.position, rows[0, i])
    return float(_distances(rows, np.array([[0, 1]]))[0, 0])


# -- trees and worlds ---------------------------------------------------------

WORLD = None


@dataclass(frozen=True)
class CollisionVolume:
    shape: object
    link: Optional[int] = WORLD  # frame index within the owner chain, or None for world-fixed
    local_transform: Pose = field(default_factory=Pose.identity)


@dataclass(frozen=True)
class CollisionTree:
    id: str
    volumes: tuple
    owner: Optional[int] = None  # chain index in the composite, None for the environment

    def __post_init__(self):
        object.__setattr__(self, "volumes", tuple(self.volumes))
        if not self.volumes:
            raise ValueError(f"collision tree '{self.id}' is empty")
        for v in self.volumes:
            if self.owner is None and v.link is not None:
                raise ValueError(f"environment tree '{self.id}' has a link-attached volume")
            if self.owner is not None and v.link is None:
                raise ValueError(f"robot tree '{self.id}' has a world-fixed volume")


@dataclass(frozen=True)
class DistanceResult:
    distance: float
    pair: Optional[tuple]  # ((tree_id, volume_index), (tree_id, volume_index))


class CollisionWorld:
    """Trees plus the policy deciding which volume pairs are checked.

    ``tree_pairs`` lists checked tree-id pairs (a tree paired with itself means
    self-collision). By default every robot tree is checked against itself,
    every other robot tree and every environment tree. Within one chain,
    volumes on the same or consecutive frames never form a pair, nor do frame
    pairs listed in ``self_exclude[tree_id]``. Pairs of two immobile volumes
    (world-fixed or on a chain base) are dropped since their distance is constant.
    """

    def __init__(self, trees, tree_pairs=None, self_exclude=None):
        self.trees = tuple(trees)
        ids = [t.id for t in self.trees]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate collision tree id")
        self._index = {t.id: i for i, t in enumerate(self.trees)}
        if tree_pairs is None:
            tree_pairs = []
            for i, ta in enumerate(self.trees):
                for tb in self.trees[i:]:
                    if ta.owner is None and tb.owner is None:
                        continue
                    tree_pairs.append((ta.id, tb.id))
        canon = set()
        for a, b in tree_pairs:
            ia, ib = self._index[a], self._index[b]
            key = (min(ia, ib), max(ia, ib))
            if key in canon:
                raise ValueError(f"tree pair {a}/{b} listed twice")
            canon.add(key)
        self.tree_pairs = tuple(sorted(canon))
        self.self_exclude = {k: {tuple(sorted(p)) for p in v} for k, v in (self_exclude or {}).items()}
        self.pairs = tuple(self._enumerate_pairs())
        self._pair_lookup = {p: k for k, p in enumerate(self.pairs)}
        self._evaluators = {}

    def _excluded(self, ta, va, tb, vb):
        A, B = ta.volumes[va], tb.volumes[vb]
        static_a = ta.owner is None or A.link == 0
        static_b = tb.owner is None or B.link == 0
        if static_a and static_b:
            return True
        if ta.owner is not None and ta.owner == tb.owner:
            if abs(A.link - B.link) <= 1:
                return True
            for tid in {ta.id, tb.id}:
                if tuple(sorted((A.link, B.link))) in self.self_exclude.get(tid, ()):
                    return True
        return False

    def _enumerate_pairs(self):
        for ia, ib in self.tree_pairs:
            ta, tb = self.trees[ia], self.trees[ib]
            for va in range(len(ta.volumes)):
                start = va + 1 if ia == ib else 0
                for vb in range(start, len(tb.volumes)):
                    if not self._excluded(ta, va, tb, vb):
                        yield ((ta.id, va), (tb.id, vb))

    def pair_index(self, pair):
        (ta, va), (tb, vb) = pair
        key = pair
        if (self._index.get(ta, -1), va) > (self._index.get(tb, -1), vb):
            key = ((tb, vb), (ta, va))
        if key not in self._pair_lookup:
            raise KeyError(f"unknown or excluded volume pair {pair!r}")
        return self._pair_lookup[key]

    def evaluator(self, comp):
        ev = self._evaluators.get(id(comp))
        if ev is None or ev.comp is not comp:
            ev = DistanceEvaluator(self, comp)
            self._evaluators[id(comp)] = ev
        return ev


class DistanceEvaluator:
    """Batched distance/gradient evaluation of a world's pairs over one composite chain."""

    def __init__(self, world, comp):
        self.world = world
        self.comp = comp
        frame_offset = np.cumsum([0] + [c.n_frames for c in comp.chains])
        self.world_frame = int(frame_offset[-1])
        vol_index = {}
        frames, local_R, local_p, rows, owners = [], [], [], [], []
        for t in world.trees:
            for k, v in enumerate(t.volumes):
                if t.owner is None:
                    f = self.world_frame
                else:
                    if t.owner >= len(comp.chains):
                        raise ValueError(f"tree '{t.id}' owner {t.owner} not in composite")
                    if not 0 <= v.link < comp.chains[t.owner].n_frames:
                        raise ValueError(f"tree '{t.id}' volume {k} attaches to missing frame {v.link}")
                    f = int(frame_offset[t.owner]) + v.link
                vol_index[(t.id, k)] = len(rows)
                frames.append(f)
                local_R.append(v.local_transform.rotation)
                local_p.append(v.local_transform.position)
                rows.append(_local_row(v.shape))
                owners.append(-1 if t.owner is None else t.owner)
        self.vol_frame = np.array(frames, dtype=np.int64)
        self.vol_local_R = np.array(local_R).reshape(-1, 3, 3)
        self.vol_local_p = np.array(local_p).reshape(-1, 3)
        self.vol_rows = np.array(rows).reshape(-1, ROW)
        self.vol_owner = np.array(owners, dtype=np.int64)
        self.pairs = np.array([[vol_index[a], vol_index[b]] for a, b in world.pairs], dtype=np.int64).reshape(-1, 2)
        # joints that can move each pair: union of the owners' joint ranges
        self.pair_chains = [sorted({int(self.vol_owner[i]) for i in pr if self.vol_owner[i] >= 0}) for pr in self.pairs]
        # padded per-chain kinematics for the fused kernel
        n_max = max(c.dof for c in comp.chains)
        data = [c._kernel_data for c in comp.chains]
        def padded(k, shape):
            out = np.zeros((len(data),) + shape)
            for i, dd in enumerate(data):
                out[i, : len(dd[k])] = dd[k]
            return out
        self._kin = (
            np.array([c.dof for c in comp.chains], dtype=np.int64),
            np.array(comp.offsets, dtype=np.int64),
            np.array(frame_offset[:-1], dtype=np.int64),
            padded(0, (n_max, 3, 3)),
            padded(1, (n_max, 3, 3)),
            padded(2, (n_max, 3, 3)),
            padded(3, (n_max, 3)),
            np.array([dd[5] for dd in data]),
            np.array([dd[6] for dd in data]),
            np.array([dd[7] for dd in data]),
            np.array([dd[8] for dd in data]),
            self.world_frame,
        )
        self._kin = self._kin + (self.vol_frame, self.vol_local_R, self.vol_local_p, self.vol_rows)
        self._pair_sets = {}
        self._grad_cols = {}

    def frames_batch(self, Q):
        """Stacked frames of all chains plus a trailing world frame, ``(B, F+1, ...)``."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        B = Q.shape[0]
        if len(self.comp.chains) == 1:
            R, p = self.comp.chains[0].frames_batch(Q)
            return _append_world_frame(R, p)
        R = np.empty((B, self.world_frame + 1, 3, 3))
        p = np.empty((B, self.world_frame + 1, 3))
        f = 0
        for chain, off in zip(self.comp.chains, self.comp.offsets):
            R[:, f : f + chain.n_frames], p[:, f : f + chain.n_frames] = chain.frames_batch(Q[:, off : off + chain.dof])
            f += chain.n_frames
        R[:, f] = np.eye(3)
        p[:, f] = 0.0
        return R, p

    def posed(self, Q):
        R, p = self.frames_batch(Q)
        return _pose_all(R, p, self.vol_frame, self.vol_local_R, self.vol_local_p, self.vol_rows)

    def _compact(self, pair_idx):
        """Volumes used by the selected pairs and the pairs re-indexed into that list."""
        key = None if pair_idx is None else pair_idx.tobytes()
        hit = self._pair_sets.get(key)
        if hit is None:
            pairs = self.pairs if pair_idx is None else self.pairs[pair_idx]
            vols, inv = np.unique(pairs, return_inverse=True)
            hit = (pairs, vols.astype(np.int64), inv.reshape(pairs.shape).astype(np.int64))
            if len(self._pair_sets) > 4096:
                self._pair_sets.clear()
            self._pair_sets[key] = hit
        return hit

    def distances(self, Q, pair_idx=None):
        """Pair distances ``(B, P)`` for configurations ``Q`` (rows of stacked joint vectors)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if pair_idx is not None:
            pair_idx = np.asarray(pair_idx, dtype=np.int64)
        pairs, vols, local = self._compact(pair_idx)
        if len(pairs) == 0:
            return np.zeros((Q.shape[0], 0))
        if Q.shape[1] != self.comp.dof:
            raise ValueError(f"expected joint batch of shape (B, {self.comp.dof}), got {Q.shape}")
        d = _batch_distances(np.ascontiguousarray(Q), *self._kin, vols, local)
        if np.isnan(d).any():
            # box pairs go through GJK on the fully posed volumes
            return _distances(self.posed(Q), pairs)
        return d

    def perturbed(self, q, delta_q):
        """Rows ``q + delta_q e_i`` (even) and ``q - delta_q e_i`` (odd) for every joint ``i``."""
        q = np.asarray(q, dtype=float)
        n = len(q)
        Q = np.repeat(q[None, :], 2 * n, axis=0)
        i = np.arange(n)
        Q[2 * i, i] = q + delta_q
        Q[2 * i + 1, i] = q - delta_q
        return Q

    def _owner_columns(self, pair_idx):
        """Joint columns of the chains owning the selected pairs (None when every chain is involved)."""
        key = pair_idx.tobytes()
        cols = self._grad_cols.get(key, False)
        if cols is False:
            owners = {c for k in pair_idx for c in self.pair_chains[k]}
            if len(owners) == len(self.comp.chains):
                cols = None
            else:
                ranges = [np.arange(o, o + c.dof) for i, (c, o) in enumerate(zip(self.comp.chains, self.comp.offsets)) if i in owners]
                cols = np.concatenate(ranges) if ranges else np.zeros(0, np.int64)
            if len(self._grad_cols) > 4096:
                self._grad_cols.clear()
            self._grad_cols[key] = cols
        return cols

    def gradients(self, q, pair_idx, delta_q):
        """Symmetric-difference gradients ``(P, n)`` for the selected pairs."""
        pair_idx = np.asarray(pair_idx, dtype=np.int64)
        n = len(q)
        if len(pair_idx) == 0:
            return np.zeros((0, n))
        cols = self._owner_columns(pair_idx)
        if cols is None:
            d = self.distances(self.perturbed(q, delta_q), pair_idx)
            return ((d[0::2] - d[1::2]) / (2.0 * delta_q)).T
        # joints of chains owning none of the volumes leave every pose unchanged, so their columns are exactly zero
        grad = np.zeros((len(pair_idx), n))
        if len(cols):
            Q = self.perturbed(q, delta_q).reshape(n, 2, n)[cols].reshape(-1, n)
            d = self.distances(Q, pair_idx)
            grad[:, cols] = ((d[0::2] - d[1::2]) / (2.0 * delta_q)).T
        return grad


@njit(cache=True)
def _append_world_frame(R, p):
    B, F = p.shape[0], p.shape[1]
    R2 = np.empty((B, F + 1, 3, 3))
    p2 = np.empty((B, F + 1, 3))
    R2[:, :F] = R
    p2[:, :F] = p
    for b in range(B):
        R2[b, F] = np.eye(3)
        p2[b, F] = 0.0
    return R2, p2


def world_min_distance(world, comp, q_stacked):
    ev = world.evaluator(comp)
    if len(world.pairs) == 0:
        return DistanceResult(INF, None)
    d = ev.distances(q_stacked)[0]
    k = int(np.argmin(d))
    return DistanceResult(float(d[k]), world.pairs[k])


def pair_distance(world, comp, q_stacked, pair):
    k = world.pair_index(pair)
    return float(world.evaluator(comp).distances(q_stacked, [k])[0, 0])


def distance_gradient(world, comp, q_stacked, pair, delta_q=1e-5):
    """Central-difference gradient of one pair's distance with respect to the stacked joints."""
    if not delta_q > 0:
        raise ValueError("delta_q must be positive")
    q = np.asarray(q_stacked, dtype=float)
    grad = np.empty(len(q))
    for i in range(len(q)):
        qp = q.copy()
        qm = q.copy()
        qp[i] = q[i] + delta_q
        qm[i] = q[i] - delta_q
        grad[i] = (pair_distance(world, comp, qp, pair) - pair_distance(world, comp, qm, pair)) / (2.0 * delta_q)
    return grad


@dataclass(frozen=True, eq=False)
class ActivePair:
    pair: tuple
    distance: float
    gradient: np.ndarray


def active_pairs(world, comp, q_stacked, d_act, delta_q=1e-5):
    """Every checked pair closer than ``d_act`` with its distance gradient."""
    ev = world.evaluator(comp)
    if len(world.pairs) == 0:
        return []
    d = ev.distances(q_stacked)[0]
    idx = np.nonzero(d < d_act)[0]
    grads = ev.gradients(np.asarray(q_stacked, dtype=float), idx, delta_q)
    return [ActivePair(world.pairs[k], float(d[k]), grads[j]) for j, k in enumerate(idx)]


__all__ = [
    "Sphere",
    "Capsule",
    "Halfspace",
    "Box",
    "Posed",
    "CollisionVolume",
    "CollisionTree",
    "CollisionWorld",
    "DistanceResult",
    "DistanceEvaluator",
    "ActivePair",
    "PenetrationUnsupported",
    "primitive_distance",
    "world_min_distance",
    "pair_distance",
    "distance_gradient",
    "active_pairs",
]
