"""Closed targets, proximal normals and invariance checks."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

from ._linalg import TAU, dedup_points
from .dynamics import SelectionPolicy, _Cache, parallel_map, switching_simulate
from .errors import AimFailure, MalformedCell, NotOnBoundary
from .geometry import Box, Cell, HPolyhedron, _face_points, normal_cone, project_cell
from .setvalued import Mode, eval_G, eval_Gsharp, support


class HJMode(enum.Enum):
    WEAK = "weak"
    STRONG = "strong"
    SI_SUFF = "si_suff"


@dataclass(frozen=True, eq=False)
class ClosedTarget:
    """A finite union of convex polyhedra inside the box."""

    pieces: tuple
    name: str
    box: Box

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))

    @classmethod
    def whole_box(cls, box, name="box"):
        return cls((HPolyhedron(np.zeros((0, box.N)), np.zeros(0)),), name, box)

    @cached_property
    def cells(self):
        return tuple(Cell.build(k, p, self.box) for k, p in enumerate(self.pieces))

    @property
    def diameter(self):
        return self.box.diameter

    def distance(self, x):
        return target_distance(self, x)

    def contains(self, x, tol=TAU):
        return any(p.contains(x, tol) for p in self.pieces)

    def contains_many(self, X, tol=TAU):
        X = np.atleast_2d(X)
        out = np.zeros(len(X), dtype=bool)
        for p in self.pieces:
            out |= np.all(X @ p.A.T <= p.b + tol, axis=1)
        return out

    def signature(self, x, tol=TAU):
        r = [p.A @ x - p.b for p in self.pieces]
        r = np.concatenate(r) if r else np.zeros(0)
        return (r < -tol).tobytes() + (r > tol).tobytes()

    @cached_property
    def boundary_pool(self):
        """Fixed boundary witnesses that carry at least one normal direction."""
        B = boundary_samples(self, 2, np.random.default_rng(0))
        keep = [b for b in B if normal_candidates(self, b, 0).size]
        return np.array(keep).reshape(-1, self.box.N)

    @property
    def is_box(self):
        return all(len(p.A) == 0 for p in self.pieces)


def target_distance(C, x):
    """``(d, projections)`` with every minimizing piece projection."""
    x = np.asarray(x, dtype=float)
    cand = []
    for c in C.cells:
        if c.in_closure(x, 0.0):
            return 0.0, x.reshape(1, -1).copy()
        p = project_cell(c, x)
        cand.append((float(np.linalg.norm(p - x)), p))
    d = min(a for a, _ in cand)
    P = dedup_points(np.array([p for a, p in cand if a <= d + TAU]))
    return d, P


@dataclass(frozen=True)
class NormalSample:
    x: np.ndarray
    zeta: np.ndarray
    sigma: float


def sigma_grid(C):
    return [C.diameter] + [10.0 ** (-k) for k in range(0, 7)]


def realized_radius(C, x, zeta, grid=None):
    """Largest grid radius whose ball centered at ``x + sigma*zeta`` avoids C (except at x)."""
    for s in grid or sigma_grid(C):
        y = x + s * zeta
        if all(float(np.linalg.norm(project_cell(c, y) - y)) >= s * (1 - 1e-9) - TAU for c in C.cells):
            return s
    return None


def normal_candidates(C, x, n_dirs=8, rng=None):
    """Unit vectors from the normal cones of the pieces holding x (no realization test)."""
    rng = rng or np.random.default_rng(0)
    out = []
    for c in C.cells:
        if not c.in_closure(x):
            continue
        V = normal_cone(c, x).V
        if len(V) == 0:
            continue
        out.extend(V)
        if n_dirs and len(V) > 1:
            out.extend(rng.dirichlet(np.ones(len(V)), size=n_dirs) @ V)
    out = [z / np.linalg.norm(z) for z in out if np.linalg.norm(z) > 1e-12]
    return dedup_points(np.array(out), tol=1e-9) if out else np.zeros((0, len(x)))


def proximal_normals(C, x, n_dirs=8, seed=0):
    x = np.asarray(x, dtype=float)
    d, _ = target_distance(C, x)
    if d > TAU:
        raise NotOnBoundary(f"point {x} is not in the target")
    out = []
    for z in normal_candidates(C, x, n_dirs, np.random.default_rng(seed)):
        s = realized_radius(C, x, z)
        if s is not None:
            out.append(NormalSample(x, z, s))
    if not out:
        raise NotOnBoundary(f"point {x} has no realized proximal normal")
    return out


def boundary_samples(C, n_per_face, rng):
    """Vertices, face centroids, random face points and facet-pair intersections."""
    pts = [_face_points(c, rng, per_face=n_per_face) for c in C.cells]
    facets = [f for c in C.cells for f in c.facets]
    for f, g in combinations(facets, 2):
        try:
            both = Cell.build(-1, HPolyhedron(np.vstack([f.closure.A, g.closure.A]),
                                              np.concatenate([f.closure.b, g.closure.b])), C.box)
        except MalformedCell:
            continue
        pts.append(both.vertices)
    P = np.vstack([p for p in pts if len(p)]) if pts else np.zeros((0, C.box.N))
    return dedup_points(P, tol=1e-12)


@dataclass
class InvarianceReport:
    mode: HJMode
    passed: bool
    worst_margin: float
    witness: dict | None
    samples: int
    seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"mode": self.mode.value, "pass": self.passed,
             "worst_margin": self.worst_margin if np.isfinite(self.worst_margin) else None,
             "witness": self.witness, "samples": self.samples, "seed": self.seed}
        d.update(self.extra)
        return d


def speed_bound(field, cx):
    """Largest velocity norm over the box (attained at cell vertices for affine data)."""
    best = 0.0
    for c in cx.cells:
        for x in list(c.vertices) + [c.origin]:
            V = field[c.id].at(x).vertices
            if len(V):
                best = max(best, float(np.max(np.linalg.norm(V, axis=1))))
    return best


def check_hj(field, cx, C, mode, n_samples=8, seed=0, kappa=None, tol=1e-9):
    """Sampled Hamiltonian inequality; ``worst_margin <= tol`` means PASS.

    margins: WEAK ``min <v, zeta>`` over ``G♯``; STRONG ``max <v, zeta>`` over
    ``G♯``; SI_SUFF ``max <v, x - c>`` over ``G`` minus ``kappa * d^2``.
    """
    mode = HJMode(mode) if not isinstance(mode, HJMode) else mode
    rng = np.random.default_rng(seed)
    worst, witness, count = -np.inf, None, 0
    extra = {}
    if mode is HJMode.SI_SUFF:
        kappa = field.lipschitz_k if kappa is None else float(kappa)
        extra = {"kappa": kappa, "conditional": True}
        for x in tube_samples(C, cx, max(n_samples, 1) * 16, rng):
            d, P = target_distance(C, x)
            G = eval_G(field, cx, x)
            for c in P:
                m = support(G, x - c, Mode.MAX) - kappa * d * d
                count += 1
                if _better(m, x, worst, witness):
                    v = G.vertices[int(np.argmax(G.vertices @ (x - c)))]
                    worst, witness = m, {"x": x.tolist(), "zeta": (x - c).tolist(), "v": v.tolist()}
    else:
        for x in boundary_samples(C, n_samples, rng):
            try:
                normals = proximal_normals(C, x, n_dirs=n_samples, seed=int(rng.integers(2 ** 31)))
            except NotOnBoundary:
                continue
            S = eval_Gsharp(field, cx, x)
            V = S.vertices
            for ns in normals:
                vals = V @ ns.zeta
                j = int(np.argmin(vals)) if mode is HJMode.WEAK else int(np.argmax(vals))
                m = float(vals[j])
                count += 1
                if _better(m, x, worst, witness):
                    worst, witness = m, {"x": x.tolist(), "zeta": ns.zeta.tolist(), "v": V[j].tolist()}
    passed = bool(worst <= tol)
    return InvarianceReport(mode, passed, float(worst), None if passed else witness, count, seed, extra)


def _better(m, x, worst, witness):
    """Larger margin wins; near-ties go to the witness closer to the origin."""
    if witness is None or m > worst + 1e-12:
        return True
    return m >= worst - 1e-12 and float(np.linalg.norm(x)) < float(np.linalg.norm(witness["x"]))


def tube_samples(C, cx, n, rng):
    """Points off C within 0.1 * box diameter of it."""
    width = 0.1 * C.diameter
    out = []
    tries = 0
    while len(out) < n and tries < 50 * n:
        tries += 1
        x = cx.box.sample(rng, 1)[0]
        d, _ = target_distance(C, x)
        if TAU < d <= width:
            out.append(x)
    return np.array(out).reshape(-1, cx.N)


@dataclass
class GrowthReport:
    passed: bool
    max_violation: float
    max_distance: float
    k: float
    c_h: float
    h: float
    runs: int
    worst: dict | None

    def to_dict(self):
        return {"pass": self.passed, "max_violation": self.max_violation, "max_distance": self.max_distance,
                "k": self.k, "C_h": self.c_h, "h": self.h, "runs": self.runs, "worst": self.worst}


def _path_distances(C, traj):
    """``d_C`` at nodes and piece midpoints, with the matching times."""
    S, t = traj.states, traj.times
    mids = 0.5 * (S[1:] + S[:-1])
    P = np.vstack([S, mids])
    T = np.concatenate([t, 0.5 * (t[1:] + t[:-1])])
    return T, np.array([target_distance(C, p)[0] for p in P])


def verify_growth(field, cx, C, x0s, T, h, n_policies=1, seed=0, policies=None, threads=1):
    """Check ``d_C(x(t)) <= exp(k t) d_C(x0) + C_h h`` along simulated arcs."""
    k = field.lipschitz_k
    c_h = speed_bound(field, cx)
    cache = _Cache(field, cx)
    jobs = []
    for a, x0 in enumerate(np.atleast_2d(x0s)):
        pols = policies if policies is not None else [SelectionPolicy.random(seed + 1000 * a + j)
                                                      for j in range(n_policies)]
        jobs.extend((a, x0, p) for p in pols)

    def run(job):
        a, x0, pol = job
        tr = switching_simulate(field, cx, x0, T, h, pol, cache=cache)
        d0 = target_distance(C, x0)[0]
        tt, d = _path_distances(C, tr)
        viol = d - np.exp(k * tt) * d0
        j = int(np.argmax(viol))
        return float(viol[j]), float(d.max()), {"start": int(a), "x0": list(map(float, x0)), "t": float(tt[j])}

    res = parallel_map(run, jobs, threads)
    mv = max(r[0] for r in res)
    md = max(r[1] for r in res)
    worst = max(res, key=lambda r: r[0])[2]
    return GrowthReport(bool(mv <= c_h * h), mv, md, k, c_h, float(h), len(res), worst)


class _NormalMemo:
    """Normal-cone generators keyed by the active rows of the target at x."""

    def __init__(self, C):
        self.C = C
        self.memo = {}

    def __call__(self, x):
        key = self.C.signature(x)
        Z = self.memo.get(key)
        if Z is None:
            Z = self.memo[key] = normal_candidates(self.C, x, n_dirs=0)
        return Z


def _adversarial_score(C, rng, normals=None):
    normals = normals or _NormalMemo(C)

    def score(x, t, V):
        d, P = target_distance(C, x)
        if d > TAU:
            return -(V @ (x - P[0]))
        Z = normals(x)
        if len(Z):
            return -np.max(V @ Z.T, axis=1)
        return rng.random(len(V))
    return score


def sample_in_target(C, cx, rng, boundary_first=True):
    """A random point of C: a boundary witness half the time, else a rejection sample."""
    if boundary_first and rng.random() < 0.5:
        B = C.boundary_pool
        if len(B):
            return B[int(rng.integers(len(B)))].copy()
    for _ in range(20):
        X = cx.box.sample(rng, 256)
        inside = np.flatnonzero(C.contains_many(X))
        if inside.size:
            return X[inside[0]]
    return C.cells[0].origin.copy()


def falsify_strong(field, cx, C, T, h, n_trials, seed=0, starts=None, threads=1):
    """Adversarial search for an arc leaving C farther than ``10 * C_h * h``."""
    c_h = speed_bound(field, cx)
    thresh = 10 * c_h * h
    cache = _Cache(field, cx)
    rng0 = np.random.default_rng(seed)
    if starts is None:
        starts = [sample_in_target(C, cx, rng0) for _ in range(n_trials)]
    starts = [np.asarray(s, dtype=float) for s in starts]

    normals = _NormalMemo(C)

    def trial(j):
        rng = np.random.default_rng([seed, j])
        pol = SelectionPolicy.aim(_adversarial_score(C, rng, normals))
        tr = switching_simulate(field, cx, starts[j % len(starts)], T, h, pol, cache=cache)
        _, d = _path_distances(C, tr)
        tr.diagnostics["max_distance"] = float(d.max())
        tr.diagnostics["trial"] = j
        return tr if d.max() > thresh else None

    batch = max(1, threads) * 8
    for lo in range(0, n_trials, batch):
        for tr in parallel_map(trial, range(lo, min(lo + batch, n_trials)), threads):
            if tr is not None:
                return tr
    return None


def synthesize_weak_invariant(field, cx, C, x0, T, h, eps=None):
    """Proximal aiming: choose the essential velocity pointing most into C."""
    c_h = speed_bound(field, cx)
    eps = c_h * h if eps is None else eps
    normals = _NormalMemo(C)

    def score(x, t, V):
        d, P = target_distance(C, x)
        if d > TAU:
            s = np.max(np.stack([V @ (x - c) for c in P]), axis=0)
            if d > eps and s.min() > 0:
                raise AimFailure(f"no essential velocity aims into the target at {x} (d={d:.3g})")
            return s
        Z = normals(x)
        if len(Z):
            return np.max(V @ Z.T, axis=1)
        return np.zeros(len(V))

    tr = switching_simulate(field, cx, x0, T, h, SelectionPolicy.aim(score))
    _, d = _path_distances(C, tr)
    tr.diagnostics["max_distance"] = float(d.max())
    tr.diagnostics["eps"] = float(eps)
    return tr
