"""Dense strictly convex QP solver, primal active-set method with warm starts.

Problem form::

    min  1/2 a'Ha + a'g
    s.t. lbA <= A a <= ubA
         lb  <= a   <= ub

Multipliers follow the convention ``H a + g + A'mu + nu = 0``: a constraint
active at its lower side carries a non-positive multiplier, one active at its
upper side a non-negative multiplier. Constraint indices run over the bounds
first (``0..n-1``) and then the general rows (``n..n+m-1``).
"""

import enum
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from numba import njit

DEFAULT_MAX_NWSR = 200
INFINITE_BOUND = 1e9  # bound magnitudes at or above this are left out of the tolerance scale


class QPStatus(str, enum.Enum):
    SOLVED = "Solved"
    MAX_ITERATIONS = "MaxIterations"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True, eq=False)
class QPProblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray
    lbA: np.ndarray
    ubA: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError("H must be square")
        A = np.array(self.A, dtype=float).reshape(-1, n)
        m = A.shape[0]
        fields = dict(H=H, A=A)
        for name, size in (("g", n), ("lb", n), ("ub", n), ("lbA", m), ("ubA", m)):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (size,):
                raise ValueError(f"{name} must have length {size}")
            fields[name] = v
        for k, v in fields.items():
            object.__setattr__(self, k, v)
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-12 * (1.0 + np.max(np.abs(H), initial=0.0)):
            raise ValueError("H is not symmetric")
        if np.any(self.lb > self.ub):
            raise ValueError("lb > ub")
        if np.any(self.lbA > self.ubA):
            raise ValueError("lbA > ubA")

    @classmethod
    def trusted(cls, H, g, A, lbA, ubA, lb, ub):
        """Build without copying or validation, for callers that construct valid data."""
        obj = object.__new__(cls)
        for k, v in zip(("H", "g", "A", "lbA", "ubA", "lb", "ub"), (H, g, A, lbA, ubA, lb, ub)):
            object.__setattr__(obj, k, v)
        return obj

    @property
    def n(self):
        return self.H.shape[0]

    @property
    def m(self):
        return self.A.shape[0]

    def objective(self, a):
        return 0.5 * a @ self.H @ a + a @ self.g

    @cached_property
    def scale(self):
        return _scale(self.H, self.g, self.A, self.lbA, self.ubA, self.lb, self.ub)

    @property
    def tol(self):
        return 1e-8 * (1.0 + self.scale)


@dataclass(frozen=True, eq=False)
class QPSolution:
    a_star: np.ndarray
    status: QPStatus
    nwsr: int
    active_set: tuple
    kkt_residual: float
    multipliers: np.ndarray
    sides: np.ndarray  # -1 lower, +1 upper, 0 inactive; bounds then rows

    @property
    def n(self):
        return len(self.a_star)

    @property
    def nac(self):
        """Active general constraints (bounds excluded)."""
        return sum(1 for i in self.active_set if i >= self.n)

    @property
    def solved(self):
        return self.status is QPStatus.SOLVED


# -- numba kernels ---------------------------------------------------------------


@njit(cache=True)
def _scale(H, g, A, lbA, ubA, lb, ub):
    """Largest data magnitude, ignoring bounds at or beyond INFINITE_BOUND."""
    s = 0.0
    for v in H.ravel():
        s = max(s, abs(v))
    for v in g:
        s = max(s, abs(v))
    for v in A.ravel():
        s = max(s, abs(v))
    for arr in (lbA, ubA, lb, ub):
        for v in arr:
            if abs(v) < INFINITE_BOUND:
                s = max(s, abs(v))
    return s


# Working-set state: sb[i] / sr[j] is -1 (at lower), +1 (at upper) or 0 (inactive).

_DENOM = 1e-14  # step-length denominators below this never block
_PARALLEL = 1e-10  # rows with |a.p| below this fraction of |a||p| count as parallel to the step


@njit(cache=True)
def _cholesky(M):
    """Lower Cholesky factor; returns (L, ok)."""
    k = M.shape[0]
    L = np.zeros((k, k))
    for j in range(k):
        s = M[j, j]
        for t in range(j):
            s -= L[j, t] * L[j, t]
        if not s > 0.0:
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, k):
            v = M[i, j]
            for t in range(j):
                v -= L[i, t] * L[j, t]
            L[i, j] = v / L[j, j]
    return L, True


@njit(cache=True)
def _cho_solve(L, b):
    k = L.shape[0]
    y = np.empty(k)
    for i in range(k):
        v = b[i]
        for t in range(i):
            v -= L[i, t] * y[t]
        y[i] = v / L[i, i]
    for i in range(k - 1, -1, -1):
        v = y[i]
        for t in range(i + 1, k):
            v -= L[t, i] * y[t]
        y[i] = v / L[i, i]
    return y


@njit(cache=True)
def _eqp(H, g, A, lbA, ubA, x, sb, sr, to_target):
    """Step ``p`` to the minimiser on the working set, and row multipliers.

    With ``to_target`` the step also closes the residual of working rows not
    yet at their side value; otherwise those rows are assumed tight.
    Returns ``(p, W, lam, ok)``.
    """
    n = x.shape[0]
    F = np.nonzero(sb == 0)[0]
    W = np.nonzero(sr != 0)[0]
    nf, nw = F.shape[0], W.shape[0]
    c = H @ x + g
    p = np.zeros(n)
    lam = np.zeros(nw)
    if nf == 0:
        return p, W, lam, nw == 0
    Hf = np.empty((nf, nf))
    for a in range(nf):
        for b in range(nf):
            Hf[a, b] = H[F[a], F[b]]
    L, ok = _cholesky(Hf)
    if not ok:
        return p, W, lam, False
    cf = np.empty(nf)
    for a in range(nf):
        cf[a] = c[F[a]]
    z = _cho_solve(L, cf)
    pf = -z
    if nw > 0:
        Af = np.empty((nw, nf))
        for k in range(nw):
            for a in range(nf):
                Af[k, a] = A[W[k], F[a]]
        Y = np.empty((nf, nw))
        for k in range(nw):
            Y[:, k] = _cho_solve(L, Af[k].copy())
        S = Af @ Y
        Ls, ok = _cholesky(S)
        if not ok:
            return p, W, lam, False
        rhs = Af @ z
        if to_target:
            Ax = A @ x
            for k in range(nw):
                j = W[k]
                rhs[k] += (lbA[j] if sr[j] < 0 else ubA[j]) - Ax[j]
        lam = -_cho_solve(Ls, rhs)
        pf = -z - Y @ lam
    for a in range(nf):
        p[F[a]] = pf[a]
    return p, W, lam, True


@njit(cache=True)
def _independent_rows(A, sb, sr):
    """Zero out working rows that are dependent (on the free variables) on earlier rows."""
    F = np.nonzero(sb == 0)[0]
    W = np.nonzero(sr != 0)[0]
    out = sr.copy()
    basis = np.zeros((W.shape[0], F.shape[0]))
    nb = 0
    for j in W:
        v = np.empty(F.shape[0])
        for a in range(F.shape[0]):
            v[a] = A[j, F[a]]
        norm0 = np.sqrt(v @ v)
        for k in range(nb):
            v -= (basis[k] @ v) * basis[k]
        nv = np.sqrt(v @ v)
        if F.shape[0] == 0 or nv <= 1e-10 * max(norm0, 1e-300):
            out[j] = 0
        else:
            basis[nb] = v / nv
            nb += 1
    return out


@njit(cache=True)
def _primal_kernel(H, g, A, lbA, ubA, lb, ub, x, sb, sr, count, max_count, debug):
    """Primal active-set iterations from a feasible ``x`` consistent with the working set.

    Returns ``(x, sb, sr, mult, count, code)``; code 0 optimal, 1 budget
    exhausted, 2 numerical breakdown.
    """
    n = x.shape[0]
    m = sr.shape[0]
    x = x.copy()
    sb = sb.copy()
    sr = sr.copy()
    scale = 1.0
    for v in H.ravel():
        scale = max(scale, 1.0 + abs(v))
    for v in g:
        scale = max(scale, 1.0 + abs(v))
    dual_tol = 1e-12 * scale
    mult = np.zeros(n + m)
    row_norm = np.zeros(m)
    for j in range(m):
        row_norm[j] = np.sqrt(A[j] @ A[j])
    # rows found dependent on the working set are skipped by the ratio test until the next drop
    ignored = np.zeros(n + m, dtype=np.bool_)
    last_add = -1
    stationary = False  # after a full unblocked step x minimises on the working set
    f_prev = np.inf
    while True:
        if debug:
            f = 0.5 * (x @ H @ x) + g @ x
            if f > f_prev + 1e-9 * (1.0 + abs(f_prev)):
                raise AssertionError("objective increased")
            f_prev = f
        p, W, lam, ok = _eqp(H, g, A, lbA, ubA, x, sb, sr, False)
        if not ok:
            if last_add < 0:
                return x, sb, sr, mult, count, 2
            if last_add < n:
                sb[last_add] = 0
            else:
                sr[last_add - n] = 0
            ignored[last_add] = True
            last_add = -1
            continue
        last_add = -1
        pmax = 0.0
        xmax = 0.0
        for i in range(n):
            pmax = max(pmax, abs(p[i]))
            xmax = max(xmax, abs(x[i]))
        if stationary or pmax <= 1e-11 * (1.0 + xmax):
            r = H @ x + g
            for k in range(W.shape[0]):
                r += lam[k] * A[W[k]]
            worst = -1
            worst_val = dual_tol
            for i in range(n):
                if sb[i] == 0 or lb[i] == ub[i]:
                    continue
                wrong = -r[i] if sb[i] < 0 else r[i]
                if wrong > worst_val:
                    worst, worst_val = i, wrong
            for k in range(W.shape[0]):
                j = W[k]
                if lbA[j] == ubA[j]:
                    continue
                wrong = lam[k] if sr[j] < 0 else -lam[k]
                if wrong > worst_val:
                    worst, worst_val = n + j, wrong
            if worst < 0:
                for i in range(n):
                    if sb[i] != 0:
                        mult[i] = -r[i]
                for k in range(W.shape[0]):
                    mult[n + W[k]] = lam[k]
                return x, sb, sr, mult, count, 0
            if worst < n:
                sb[worst] = 0
            else:
                sr[worst - n] = 0
            ignored[:] = False
            stationary = False
            count += 1
            if count > max_count:
                return x, sb, sr, mult, count, 1
            continue
        # ratio test; strict comparison keeps the lowest blocking index
        alpha = 1.0
        block = -1
        for i in range(n):
            if sb[i] != 0 or ignored[i]:
                continue
            if p[i] < -_DENOM:
                t = (lb[i] - x[i]) / p[i]
            elif p[i] > _DENOM:
                t = (ub[i] - x[i]) / p[i]
            else:
                continue
            t = max(t, 0.0)
            if t < alpha:
                alpha, block = t, i
        Ap = A @ p
        Ax = A @ x
        pnorm = np.sqrt(p @ p)
        for j in range(m):
            if sr[j] != 0 or ignored[n + j]:
                continue
            cut = max(_DENOM, _PARALLEL * row_norm[j] * pnorm)
            if Ap[j] < -cut:
                t = (lbA[j] - Ax[j]) / Ap[j]
            elif Ap[j] > cut:
                t = (ubA[j] - Ax[j]) / Ap[j]
            else:
                continue
            t = max(t, 0.0)
            if t < alpha:
                alpha, block = t, n + j
        x = x + alpha * p
        stationary = block < 0
        if block >= 0:
            if block < n:
                if p[block] < 0:
                    sb[block] = -1
                    x[block] = lb[block]
                else:
                    sb[block] = 1
                    x[block] = ub[block]
                last_add = block
            else:
                sr[block - n] = -1 if Ap[block - n] < 0 else 1
                last_add = block
            count += 1
            if count > max_count:
                return x, sb, sr, mult, count, 1


@njit(cache=True)
def _kkt_residual(H, g, A, lbA, ubA, lb, ub, a, mult):
    n = a.shape[0]
    m = A.shape[0]
    Aa = A @ a
    r = H @ a + g + mult[:n]
    for j in range(m):
        r += mult[n + j] * A[j]
    res = 0.0
    for i in range(n):
        res = max(res, abs(r[i]), lb[i] - a[i], a[i] - ub[i])
    for j in range(m):
        res = max(res, lbA[j] - Aa[j], Aa[j] - ubA[j])
    for k in range(n + m):
        mk = mult[k]
        if mk == 0.0:
            continue
        v = a[k] if k < n else Aa[k - n]
        if k < n:
            lo, hi = lb[k], ub[k]
        else:
            lo, hi = lbA[k - n], ubA[k - n]
        slack = (v - lo) if mk < 0 else (hi - v)
        res = max(res, abs(mk) * abs(slack))
    return res


def kkt_residual(problem, a, multipliers):
    """Max of stationarity, primal infeasibility and complementarity violation."""
    p = problem
    a = np.asarray(a, dtype=float)
    mult = np.asarray(multipliers, dtype=float)
    return float(_kkt_residual(p.H, p.g, p.A, p.lbA, p.ubA, p.lb, p.ub, a, mult))


# -- driver ------------------------------------------------------------------------


class ActiveSetSolver:
    """Primal active-set solver. Holds only its settings between calls.

    With ``debug=True`` it checks that ``H`` is positive definite and that the
    objective never increases across iterations, and ``dump_dir`` (if set)
    receives a plain-text copy of every problem that does not end Solved.
    """

    def __init__(self, max_nwsr=DEFAULT_MAX_NWSR, debug=False, phase1_weight=1e-6, dump_dir=None):
        if max_nwsr < 1:
            raise ValueError("max_nwsr must be at least 1")
        self.max_nwsr = max_nwsr
        self.debug = debug
        self.phase1_weight = phase1_weight
        self.dump_dir = dump_dir
        self._dumped = 0

    def solve(self, problem, warm=None):
        sol = self._solve(problem, warm)
        if warm is not None and sol.status is QPStatus.INFEASIBLE:
            # a stale working set can end in a rank-deficient factorisation; retry from scratch
            cold = self._solve(problem, None)
            sol = QPSolution(
                cold.a_star, cold.status, sol.nwsr + cold.nwsr, cold.active_set,
                cold.kkt_residual, cold.multipliers, cold.sides,
            )
        if self.dump_dir is not None and not sol.solved:
            Path(self.dump_dir).mkdir(parents=True, exist_ok=True)
            dump_problem(problem, Path(self.dump_dir) / f"qp_{self._dumped:05d}_{sol.status.value}.txt")
            self._dumped += 1
        return sol

    def _solve(self, problem, warm):
        P = problem
        if self.debug:
            assert np.linalg.eigvalsh(P.H).min() > 0.0, "H is not positive definite"
        n, m = P.n, P.m
        tol = P.tol
        x, sb, sr = self._initial_point(P, warm, tol)
        count = 0
        if self._violation(P, x) > tol:
            x1, sb1, slack, count, code = self._phase1(P, x)
            if code == 1:
                return self._finish(P, x, np.zeros(n, np.int64), np.zeros(m, np.int64), None, count, QPStatus.MAX_ITERATIONS)
            if slack > tol or code == 2:
                return self._finish(P, x1, np.zeros(n, np.int64), np.zeros(m, np.int64), None, count, QPStatus.INFEASIBLE)
            x = x1
            # warm entries still tight at the new point survive, the rest come from phase 1
            sb = np.where((sb != 0) & _at_side(x, P.lb, P.ub, sb, tol), sb, sb1)
            x = np.where(sb < 0, P.lb, np.where(sb > 0, P.ub, x))
            sr = np.where(_at_side(P.A @ x, P.lbA, P.ubA, sr, tol), sr, 0)
            sr = _independent_rows(P.A, sb, sr)
        x, sb, sr, mult, count, code = _primal_kernel(
            P.H, P.g, P.A, P.lbA, P.ubA, P.lb, P.ub, x, sb, sr, count, self.max_nwsr, self.debug
        )
        if code == 1:
            return self._finish(P, x, sb, sr, None, count, QPStatus.MAX_ITERATIONS)
        if code == 2:
            return self._finish(P, x, sb, sr, None, count, QPStatus.INFEASIBLE)
        return self._finish(P, x, sb, sr, mult, count, QPStatus.SOLVED)

    @staticmethod
    def _violation(P, x):
        return _row_violation(P.A, P.lbA, P.ubA, x)

    def _initial_point(self, P, warm, tol):
        n, m = P.n, P.m
        if warm is None or len(warm.a_star) != n or len(warm.sides) != n + m:
            return np.clip(np.zeros(n), P.lb, P.ub), np.zeros(n, dtype=np.int64), np.zeros(m, dtype=np.int64)
        return _warm_point(P.H, P.g, P.A, P.lbA, P.ubA, P.lb, P.ub, warm.a_star, warm.sides.astype(np.int64), tol)

    def _phase1(self, P, x0):
        """Minimise the total violation of the general rows over the bounds.

        Variables are ``(a, s)`` with elastic rows ``A a + s >= lbA`` and
        ``A a - s <= ubA``; a small proximal term keeps the subproblem strictly
        convex. Returns ``(a, bound sides, max slack, count, code)``.
        """
        n, m = P.n, P.m
        eps = self.phase1_weight
        H = np.diag(np.full(n + m, eps))
        g = np.concatenate([-eps * x0, np.ones(m)])
        A = np.block([[P.A, np.eye(m)], [P.A, -np.eye(m)]])
        lbA = np.concatenate([P.lbA, np.full(m, -np.inf)])
        ubA = np.concatenate([np.full(m, np.inf), P.ubA])
        lb = np.concatenate([P.lb, np.zeros(m)])
        ub = np.concatenate([P.ub, np.full(m, np.inf)])
        Ax = P.A @ x0
        s0 = np.maximum(0.0, np.maximum(P.lbA - Ax, Ax - P.ubA))
        z0 = np.concatenate([x0, s0])
        sb = np.zeros(n + m, dtype=np.int64)
        sb[n:][s0 == 0.0] = -1
        sr = np.zeros(2 * m, dtype=np.int64)
        z, sb, _, _, count, code = _primal_kernel(H, g, A, lbA, ubA, lb, ub, z0, sb, sr, 0, self.max_nwsr, False)
        return z[:n], sb[:n], float(z[n:].max(initial=0.0)), count, code

    @staticmethod
    def _finish(P, x, sb, sr, mult, count, status):
        sides = np.concatenate([sb, sr]).astype(np.int8)
        active = tuple(int(i) for i in np.nonzero(sides)[0])
        if status is QPStatus.SOLVED:
            res = float(_kkt_residual(P.H, P.g, P.A, P.lbA, P.ubA, P.lb, P.ub, x, mult))
        else:
            mult = np.zeros(P.n + P.m)
            res = float("inf")
        return QPSolution(x, status, int(count), active, res, mult, sides)


@njit(cache=True)
def _row_violation(A, lbA, ubA, x):
    worst = 0.0
    if A.shape[0] == 0:
        return worst
    Ax = A @ x
    for j in range(A.shape[0]):
        worst = max(worst, lbA[j] - Ax[j], Ax[j] - ubA[j])
    return worst


@njit(cache=True)
def _warm_point(H, g, A, lbA, ubA, lb, ub, a_prev, sides, tol):
    """Start point and working set from a previous solution.

    Bounds are re-imposed at their remembered sides and independent remembered
    rows kept. If the minimiser on that working set is feasible it is the start
    point; otherwise the clipped previous solution is, with only the rows that
    are tight there.
    """
    n = lb.shape[0]
    sb = sides[:n].copy()
    sr = _independent_rows(A, sb, sides[n:].copy())
    x = np.empty(n)
    for i in range(n):
        if sb[i] < 0:
            x[i] = lb[i]
        elif sb[i] > 0:
            x[i] = ub[i]
        else:
            x[i] = min(max(a_prev[i], lb[i]), ub[i])
    p, _, _, ok = _eqp(H, g, A, lbA, ubA, x, sb, sr, True)
    if ok:
        xw = x + p
        feasible = True
        for i in range(n):
            if xw[i] < lb[i] - tol or xw[i] > ub[i] + tol:
                feasible = False
        if feasible and _row_violation(A, lbA, ubA, xw) <= tol:
            for i in range(n):
                xw[i] = min(max(xw[i], lb[i]), ub[i])
            return xw, sb, sr
    if A.shape[0]:
        Ax = A @ x
        for j in range(A.shape[0]):
            if sr[j] < 0 and abs(Ax[j] - lbA[j]) > tol:
                sr[j] = 0
            elif sr[j] > 0 and abs(Ax[j] - ubA[j]) > tol:
                sr[j] = 0
    return x, sb, sr


def _at_side(v, lo, hi, side, tol):
    return ((side < 0) & (np.abs(v - lo) <= tol)) | ((side > 0) & (np.abs(v - hi) <= tol))


def solve(problem, warm=None, max_nwsr=DEFAULT_MAX_NWSR):
    return ActiveSetSolver(max_nwsr).solve(problem, warm)


# -- plain-text problem dumps -----------------------------------------------


def dump_problem(problem, path):
    """Write a problem as labelled whitespace-separated matrices."""
    buf = io.StringIO()
    buf.write(f"# qp n={problem.n} m={problem.m}\n")
    for name in ("H", "g", "A", "lbA", "ubA", "lb", "ub"):
        arr = np.atleast_2d(getattr(problem, name))
        if name in ("g", "lbA", "ubA", "lb", "ub"):
            arr = arr.reshape(1, -1)
        buf.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
        if arr.size:
            np.savetxt(buf, arr, fmt="%.17g")
    Path(path).write_text(buf.getvalue())


def load_problem(path):
    lines = Path(path).read_text().splitlines()
    data = {}
    k = 1
    while k < len(lines):
        name, r, c = lines[k].split()
        r, c = int(r), int(c)
        rows = [np.array(lines[k + 1 + i].split(), dtype=float) for i in range(r if r * c else 0)]
        data[name] = np.array(rows).reshape(r, c)
        k += 1 + (r if r * c else 0)
    n = data["H"].shape[0]
    return QPProblem(
        data["H"],
        data["g"].ravel(),
        data["A"].reshape(-1, n),
        data["lbA"].ravel(),
        data["ubA"].ravel(),
        data["lb"].ravel(),
        data["ub"].ravel(),
    )
