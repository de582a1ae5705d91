"""Small dense solvers shared by the geometric and set-valued layers.

Everything here works on problems of a handful of variables and constraints,
so plain combinatorial enumeration and textbook active-set iterations are
used instead of general-purpose convex solvers.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.linalg import null_space, orth
from scipy.optimize import linprog

from .errors import QPFailure

TAU = 1e-9


def dedup_points(P, tol=TAU):
    """Remove near-duplicate rows of P, keeping first occurrences."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[0] == 0:
        return P
    keep = []
    for k in range(P.shape[0]):
        if all(np.max(np.abs(P[k] - P[j])) > tol for j in keep):
            keep.append(k)
    return P[keep]


def orthonormal_span(vectors, n, tol=1e-10):
    """Orthonormal basis (n x d) for the span of the given row vectors."""
    V = np.asarray(vectors, dtype=float).reshape(-1, n)
    if V.shape[0] == 0 or np.max(np.abs(V)) <= tol:
        return np.zeros((n, 0))
    return orth(V.T, rcond=tol)


def complement(S, n):
    """Orthonormal basis of the orthogonal complement of span(S) in R^n."""
    if S.shape[1] == 0:
        return np.eye(n)
    if S.shape[1] == n:
        return np.zeros((n, 0))
    return null_space(S.T)


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    return res


def project_polyhedron(G, h, p, z0, tol=1e-12, max_iter=200):
    """Euclidean projection of p onto {z : G z <= h} by a primal active-set method.

    ``z0`` must be feasible. Returns ``(z, multipliers, active)`` where the
    multipliers belong to the rows listed in ``active``.
    """
    G = np.asarray(G, dtype=float).reshape(-1, len(p))
    h = np.asarray(h, dtype=float)
    p = np.asarray(p, dtype=float)
    n = p.size
    z = np.array(z0, dtype=float)
    if G.shape[0] == 0:
        return p.copy(), np.zeros(0), []
    scale = max(1.0, float(np.max(np.abs(p))), float(np.max(np.abs(z))))
    W = [k for k in range(G.shape[0]) if abs(G[k] @ z - h[k]) <= 1e-10 * scale]
    # keep a linearly independent working set
    W = _independent_rows(G, W)
    for _ in range(max_iter):
        r = p - z
        if W:
            Gw = G[W]
            Q = orth(Gw.T, rcond=1e-12)
            d = r - Q @ (Q.T @ r)
        else:
            d = r
        if np.linalg.norm(d) <= tol * scale:
            lam = np.linalg.lstsq(G[W].T, r, rcond=None)[0] if W else np.zeros(0)
            if lam.size == 0 or np.min(lam) >= -tol * scale:
                return z, lam, W
            W.pop(int(np.argmin(lam)))
            continue
        alpha = 1.0
        block = None
        Gd = G @ d
        for k in range(G.shape[0]):
            if k in W or Gd[k] <= tol * scale:
                continue
            step = (h[k] - G[k] @ z) / Gd[k]
            if step < alpha:
                alpha = max(step, 0.0)
                block = k
        z = z + alpha * d
        if block is not None:
            W.append(block)
    raise QPFailure("active-set projection did not converge")


def _independent_rows(G, rows):
    chosen = []
    for k in rows:
        trial = chosen + [k]
        if np.linalg.matrix_rank(G[trial], tol=1e-10) == len(trial):
            chosen = trial
    return chosen


def kkt_residual(G, h, p, z, lam, active):
    """Max violation over stationarity, feasibility and dual sign conditions."""
    G = np.asarray(G, dtype=float).reshape(-1, len(p))
    stat = z - p
    if active:
        stat = stat + G[active].T @ lam
    res = float(np.max(np.abs(stat))) if stat.size else 0.0
    if G.shape[0]:
        res = max(res, float(np.max(G @ z - h, initial=0.0)))
    if len(active):
        res = max(res, float(-np.min(lam, initial=0.0)))
        res = max(res, float(np.max(np.abs(G[active] @ z - h[active]))))
    return res


def min_norm_point(P, tol=1e-12, max_iter=500):
    """Wolfe's algorithm: point of minimum norm in conv(rows of P).

    Returns ``(x, weights)`` with ``x = weights @ P``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    m = P.shape[0]
    norms2 = np.einsum("ij,ij->i", P, P)
    j = int(np.argmin(norms2))
    S = [j]
    w = np.array([1.0])
    x = P[j].copy()
    big = max(1.0, float(np.max(norms2)))
    for _ in range(max_iter):
        dots = P @ x
        k = int(np.argmin(dots))
        if x @ x - dots[k] <= tol * big or k in S:
            break
        S.append(k)
        w = np.append(w, 0.0)
        for _minor in range(max_iter):
            Q = P[S]
            alpha = _affine_min(Q)
            if np.all(alpha > tol):
                w = alpha
                break
            mask = alpha <= tol
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(mask, w / (w - alpha), np.inf)
            theta = float(np.min(ratios[np.isfinite(ratios)], initial=1.0))
            theta = min(max(theta, 0.0), 1.0)
            w = theta * alpha + (1 - theta) * w
            keep = w > tol
            if not np.any(keep):
                keep[int(np.argmax(w))] = True
            S = [s for s, kk in zip(S, keep) if kk]
            w = w[keep]
            w = w / w.sum()
        x = w @ P[S]
    weights = np.zeros(m)
    weights[S] = w
    return x, weights


def _affine_min(Q):
    k = Q.shape[0]
    M = np.zeros((k + 1, k + 1))
    M[:k, :k] = Q @ Q.T
    M[:k, k] = 1.0
    M[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return sol[:k]


def hull_distance(V, p):
    """Distance from p to conv(rows of V) and the nearest point."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    p = np.asarray(p, dtype=float)
    x, w = min_norm_point(V - p)
    return float(np.linalg.norm(x)), x + p


def enumerate_vertices(G, h, E=None, f=None, tol=TAU):
    """Vertices of the bounded polyhedron {y : G y <= h, E y = f}.

    Plain basis enumeration; meant for a few variables and rows only.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    n = G.shape[1]
    if E is not None and len(E):
        E = np.asarray(E, dtype=float).reshape(-1, n)
        f = np.asarray(f, dtype=float)
        y0, *_ = np.linalg.lstsq(E, f, rcond=None)
        if np.max(np.abs(E @ y0 - f)) > 1e3 * tol:
            return np.zeros((0, n))
        Z = null_space(E, rcond=1e-12)
    else:
        y0 = np.zeros(n)
        Z = np.eye(n)
    d = Z.shape[1]
    Gr = G @ Z
    hr = h - G @ y0
    scale = np.maximum(1.0, np.abs(hr))
    if d == 0:
        ok = np.all(hr >= -tol * scale)
        return y0.reshape(1, n) if ok else np.zeros((0, n))
    norms = np.linalg.norm(Gr, axis=1)
    live = norms > 1e-12
    if np.any(~live & (hr < -tol * scale)):
        return np.zeros((0, n))
    rows = np.flatnonzero(live)
    found = []
    for S in combinations(rows, d):
        M = Gr[list(S)]
        if abs(np.linalg.det(M)) < 1e-12 * max(1.0, np.prod(norms[list(S)])):
            continue
        z = np.linalg.solve(M, hr[list(S)])
        if np.all(Gr @ z <= hr + tol * scale):
            found.append(y0 + Z @ z)
    if not found:
        return np.zeros((0, n))
    return dedup_points(np.array(found), tol=1e2 * tol)
