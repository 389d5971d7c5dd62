"""GJK distance between convex sets given by support functions.

Only separation distance is computed; overlapping sets raise
:class:`PenetrationUnsupported` since no penetration depth is needed for boxes.
"""

from itertools import combinations

import numpy as np


class PenetrationUnsupported(ValueError):
    pass


def _closest_on_simplex(S):
    """Closest point to the origin on the convex hull of the rows of ``S`` (at most 4).

    Enumerates sub-simplices; fine at this size and easy to verify.
    """
    best = None
    best_idx = None
    n = len(S)
    for k in range(n, 0, -1):
        for idx in combinations(range(n), k):
            P = S[list(idx)]
            if k == 1:
                x, lam = P[0], np.ones(1)
            else:
                # minimise |P0 + sum_j mu_j (Pj - P0)|^2
                D = (P[1:] - P[0]).T
                G = D.T @ D
                try:
                    mu = np.linalg.solve(G, -D.T @ P[0])
                except np.linalg.LinAlgError:
                    continue
                lam = np.concatenate([[1.0 - mu.sum()], mu])
                if np.any(lam < -1e-12):
                    continue
                x = P[0] + D @ mu
            d = x @ x
            if best is None or d < best[0] - 1e-18:
                best = (d, x)
                best_idx = [idx[i] for i in range(k) if lam[i] > 1e-12] or [idx[0]]
    return best[1], S[best_idx]


def gjk_distance(support_a, support_b, tol=1e-9, max_iter=100):
    """Distance between two convex sets. ``support_x(d)`` returns the farthest point along ``d``."""
    d = np.array([1.0, 0.0, 0.0])
    w = support_a(-d) - support_b(d)
    simplex = w[None, :]
    v = w
    for _ in range(max_iter):
        vv = v @ v
        if vv <= tol * tol:
            raise PenetrationUnsupported("shapes overlap; box penetration depth is not supported")
        w = support_a(-v) - support_b(v)
        # ||v|| - (v.w)/||v|| is an upper bound on the distance error
        if vv - v @ w <= tol * np.sqrt(vv):
            return float(np.sqrt(vv))
        simplex = np.vstack([simplex, w])
        v, simplex = _closest_on_simplex(simplex)
        if len(simplex) == 4:
            raise PenetrationUnsupported("shapes overlap; box penetration depth is not supported")
    return float(np.sqrt(v @ v))


def box_support(R, center, half):
    def support(d):
        local = R.T @ d
        return center + R @ (np.sign(local) * half)

    return support


def segment_support(a, b):
    def support(d):
        return a if a @ d >= b @ d else b

    return support


def point_support(c):
    return lambda d: c
