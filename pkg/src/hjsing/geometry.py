"""Small convex-geometry helpers: min-norm points, simplex projection, hull vertices."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    tau = css[cond][-1] / rho
    return np.maximum(v - tau, 0.0)


def min_norm_point(points: np.ndarray, tol: float = 1e-12, max_iter: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Wolfe's algorithm for the minimum-norm point of ``co(points)``.

    Returns ``(point, weights)`` with ``weights`` on the simplex over the
    input rows.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    k = len(P)
    scale = max(1.0, float(np.max(np.sum(P * P, axis=1))))
    norms = np.sum(P * P, axis=1)
    S = [int(np.argmin(norms))]
    w = np.array([1.0])
    x = P[S[0]].copy()
    for _ in range(max_iter):
        j = int(np.argmin(P @ x))
        if x @ x - P[j] @ x <= tol * scale or j in S:
            break
        S.append(j)
        w = np.append(w, 0.0)
        for _minor in range(max_iter):
            Q = P[S]
            m = len(S)
            A = np.zeros((m + 1, m + 1))
            A[:m, :m] = Q @ Q.T
            A[:m, m] = 1.0
            A[m, :m] = 1.0
            rhs = np.zeros(m + 1)
            rhs[m] = 1.0
            sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
            v = sol[:m]
            if np.all(v > tol):
                w = v
                x = v @ Q
                break
            neg = v <= tol
            ratios = w[neg] / np.maximum(w[neg] - v[neg], 1e-300)
            theta = float(np.min(ratios)) if ratios.size else 0.0
            theta = min(max(theta, 0.0), 1.0)
            w = w + theta * (v - w)
            keep = w > tol
            if not np.any(keep):
                keep[np.argmax(w)] = True
            S = [s for s, kk in zip(S, keep) if kk]
            w = w[keep]
            w = w / np.sum(w)
            x = w @ P[S]
    weights = np.zeros(k)
    weights[S] = w
    return x, weights


def distance_to_hull(q: np.ndarray, points: np.ndarray) -> float:
    """Euclidean distance from ``q`` to ``co(points)``."""
    P = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(q, dtype=float)
    x, _ = min_norm_point(P)
    return float(np.linalg.norm(x))


def hull_vertices(points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Indices of the vertices of ``co(points)``.

    Exact enumeration for dimension at most 3 (lower-dimensional point sets
    are handled in their affine span); larger dimensions keep every point.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    k, n = P.shape
    if k <= 2:
        if k == 2 and np.linalg.norm(P[0] - P[1]) <= tol:
            return np.array([0])
        return np.arange(k)
    center = P.mean(axis=0)
    U, s, Vt = np.linalg.svd(P - center, full_matrices=False)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    if rank == 0:
        return np.array([0])
    if rank > 3:
        return np.arange(k)
    coords = (P - center) @ Vt[:rank].T
    if rank == 1:
        c = coords[:, 0]
        return np.unique([int(np.argmin(c)), int(np.argmax(c))])
    try:
        hull = ConvexHull(coords)
    except QhullError:
        return np.arange(k)
    return np.sort(hull.vertices)
