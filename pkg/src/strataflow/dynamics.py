"""Trajectories of the regularized inclusion on a stratified complex."""

from __future__ import annotations

import enum
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._linalg import TAU, hull_distance, min_norm_point
from .errors import (
    DescentFailed,
    EscapeBeforeEnd,
    FilippovBoundViolated,
    NotInClosure,
    PolicyViolation,
    StrataflowError,
)
from .geometry import ConeClass, cone_classify, project_cell, rbdry_candidates, tangent_cone
from .setvalued import Polytope, SetUnion, eval_F, eval_Gsharp, intersect_with_cone

log = logging.getLogger(__name__)

EVENT_CAP = 10_000
EVENT_FLOOR = 1e-12


@dataclass(frozen=True)
class Partition:
    nodes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("partition needs at least two strictly increasing nodes")
        object.__setattr__(self, "nodes", t)

    @classmethod
    def uniform(cls, T, n):
        return cls(np.linspace(0.0, T, int(n) + 1))

    @property
    def norm(self):
        return float(np.max(np.diff(self.nodes)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    velocities: np.ndarray
    strata: tuple
    escape: tuple | None = None
    diagnostics: dict = field(default_factory=dict)
    exact: dict | None = None

    @property
    def N(self):
        return self.states.shape[1]

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.states[-1]

    def state_at(self, t):
        return np.array([np.interp(t, self.times, self.states[:, k]) for k in range(self.N)])

    def csv_text(self):
        buf = io.StringIO()
        buf.write(",".join(["t"] + [f"x{k}" for k in range(self.N)] + ["stratum"]) + "\n")
        for t, x, s in zip(self.times, self.states, self.strata):
            buf.write(",".join([format(float(t), ".17g")] + [format(float(v), ".17g") for v in x]
                               + [str(s)]) + "\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(self.csv_text())


class PolicyKind(enum.Enum):
    VERTEX = "vertex"
    MIN_NORM = "min_norm"
    AIM = "aim"
    TABLE = "table"
    RANDOM = "random"


@dataclass(frozen=True, eq=False)
class SelectionPolicy:
    """How a velocity is picked from a queried set.

    ``AIM`` takes ``score(x, t, V) -> array`` and picks the candidate vertex
    with the smallest score. ``TABLE`` holds ``(t0, t1, v)`` rows, active on
    ``[t0, t1)``, and ``default`` elsewhere.
    """

    kind: PolicyKind
    index: int = 0
    score: Callable | None = None
    table: Sequence = ()
    default: np.ndarray | None = None
    seed: int = 0

    @classmethod
    def vertex(cls, index=0):
        return cls(PolicyKind.VERTEX, index=index)

    @classmethod
    def min_norm(cls):
        return cls(PolicyKind.MIN_NORM)

    @classmethod
    def aim(cls, score):
        return cls(PolicyKind.AIM, score=score)

    @classmethod
    def from_table(cls, rows, default):
        return cls(PolicyKind.TABLE, table=tuple((float(a), float(b), np.asarray(v, float)) for a, b, v in rows),
                   default=np.asarray(default, dtype=float))

    @classmethod
    def random(cls, seed=0):
        return cls(PolicyKind.RANDOM, seed=seed)

    def breakpoints(self):
        if self.kind is not PolicyKind.TABLE:
            return np.zeros(0)
        return np.unique(np.array([t for a, b, _ in self.table for t in (a, b)]))

    def lookup(self, t):
        for a, b, v in self.table:
            if a <= t < b:
                return v
        return self.default

    def select(self, S, x, t, rng):
        V = S.vertices
        if len(V) == 0:
            raise PolicyViolation("queried velocity set is empty")
        k = self.kind
        if k is PolicyKind.VERTEX:
            v = V[min(self.index, len(V) - 1)]
        elif k is PolicyKind.MIN_NORM:
            pieces = S.pieces if isinstance(S, SetUnion) else (S,)
            cands = [min_norm_point(p.vertices)[0] for p in pieces if not p.empty]
            v = min(cands, key=lambda c: float(c @ c))
        elif k is PolicyKind.AIM:
            v = V[int(np.argmin(self.score(x, t, V)))]
        elif k is PolicyKind.TABLE:
            v = self.lookup(t)
        else:
            pieces = [p for p in (S.pieces if isinstance(S, SetUnion) else (S,)) if not p.empty]
            P = pieces[int(rng.integers(len(pieces)))].vertices
            if rng.random() < 0.5:
                v = P[int(rng.integers(len(P)))]
            else:
                v = rng.dirichlet(np.ones(len(P))) @ P
        v = np.array(v, dtype=float)
        if not np.any(np.all(V == v, axis=1)) and not S.contains(v, 1e-9):
            raise PolicyViolation(f"policy {k.value} selected {v} outside the queried set")
        return v


def _partition_nodes(pi, T=None):
    if isinstance(pi, Partition):
        return pi.nodes
    if np.isscalar(pi):
        return Partition.uniform(T, int(pi)).nodes
    return Partition(pi).nodes


def euler_arc(field, cx, i, x0, T, pi, policy):
    """Projected Euler polygon in cell i: ``x+ = proj(x + dt * v)``."""
    cell = cx.cell(i)
    x = np.array(x0, dtype=float)
    if not cell.in_rint(x):
        raise NotInClosure(f"start point is not in cell {i}")
    nodes = _partition_nodes(pi, T)
    rng = np.random.default_rng(policy.seed)
    times, states, vels, disp = [nodes[0]], [x], [], []
    escape = None
    for n in range(len(nodes) - 1):
        t, dt = nodes[n], nodes[n + 1] - nodes[n]
        F = eval_F(field, cx, i, x)
        v = policy.select(F, x, t, rng)
        y = x + dt * v
        if not cx.box.contains(y):
            y = np.clip(y, cx.box.lo, cx.box.hi)
            escape = (float(nodes[n + 1]), "box")
        xn = project_cell(cell, y)
        disp.append(float(np.linalg.norm(xn - (x + dt * v))))
        times.append(nodes[n + 1])
        states.append(xn)
        vels.append(v)
        x = xn
        if escape:
            break
        if not cell.in_rint(x):
            escape = (float(nodes[n + 1]), "boundary")
            break
    S = np.array(states)
    return Trajectory(np.array(times), S, np.array(vels).reshape(-1, cx.N),
                      tuple(cx.locate(s) for s in S), escape,
                      {"projection_displacement": disp, "mesh": float(np.max(np.diff(nodes)))})


class _Cache:
    """Per-call memo of cones and velocity sets keyed by point signature."""

    def __init__(self, field, cx):
        self.field, self.cx = field, cx
        self.constant = field.is_constant
        self.cones = {}
        self.gsharp = {}
        self.entered = {}

    def info(self, x):
        key = self.cx.signature(x)
        if key not in self.cones:
            self.cones[key] = [(c, tangent_cone(c, x)) for c in self.cx.closures_containing(x)]
        return key, self.cones[key]

    def gs(self, key, x, cones):
        if self.constant and key in self.gsharp:
            return self.gsharp[key]
        pieces, tags = [], []
        for c, K in cones:
            P = intersect_with_cone(self.field[c.id].at(x), K)
            if not P.empty:
                pieces.append(P)
                tags.append(c.id)
        S = SetUnion(pieces, tags)
        if self.constant:
            self.gsharp[key] = S
        return S

    def enter(self, key, cones, v):
        k2 = (key, v.tobytes())
        c = self.entered.get(k2)
        if c is None:
            c = entered_cell(cones, v)
            if len(self.entered) < 100_000:
                self.entered[k2] = c
        return c


def entered_cell(cones, v):
    """Cell whose tangent cone holds v in its relative interior (lowest dimension wins)."""
    hits = [c for c, K in cones if cone_classify(K, v) is ConeClass.RINT]
    if not hits:
        raise DescentFailed(f"no stratum at this point has {v} in the interior of its tangent cone")
    return min(hits, key=lambda c: c.dim)


def _time_grid(T, h, extra):
    n = max(1, int(math.ceil(T / h - 1e-9)))
    g = np.minimum(np.arange(n + 1) * h, T)
    g[-1] = T
    extra = np.asarray(extra, dtype=float)
    extra = extra[(extra > 0) & (extra < T)]
    g = np.unique(np.concatenate([g, extra]))
    keep = np.concatenate([[True], np.diff(g) > 1e-15])
    return g[keep]


def switching_simulate(field, cx, x0, T, h, policy, cache=None):
    """Event-driven simulation selecting velocities from the essential set ``G♯``.

    Each straight piece stops at the first face of the entered cell, so every
    piece lies in a single stratum.
    """
    if h <= 0 or T <= 0:
        raise ValueError("T and h must be positive")
    x = np.array(x0, dtype=float)
    cx.locate(x)
    cache = cache or _Cache(field, cx)
    grid = _time_grid(T, h, policy.breakpoints())
    rng = np.random.default_rng(policy.seed)
    Bx, bx = cx.box.rows()
    times, states, vels = [0.0], [x.copy()], []
    t = 0.0
    escape = None
    stalls = []
    events = 0
    for n in range(1, len(grid)):
        t_next = grid[n]
        count = 0
        while t < t_next and escape is None:
            key, cones = cache.info(x)
            S = cache.gs(key, x, cones)
            v = policy.select(S, x, t, rng)
            remaining = t_next - t
            if count >= EVENT_CAP:
                if not stalls or stalls[-1] != float(t_next):
                    log.warning("StallDetected: %d face crossings before t=%.17g; finishing step", count, t_next)
                    stalls.append(float(t_next))
                s, crossing = remaining, False
            else:
                c = cache.enter(key, cones, v)
                Ai, bi = c.ineq
                av = Ai @ v
                out = av > 1e-13 * max(1.0, float(np.linalg.norm(v)))
                s_face = float(np.min(np.maximum((bi[out] - Ai[out] @ x) / av[out], 0.0), initial=np.inf))
                crossing = s_face < remaining
                s = min(s_face, remaining)
                if crossing and s < EVENT_FLOOR:
                    s = min(EVENT_FLOOR, remaining)
            bv = Bx @ v
            outb = bv > 0
            s_box = float(np.min(np.maximum((bx[outb] - Bx[outb] @ x) / bv[outb], 0.0), initial=np.inf))
            if s_box < s or (s_box <= s and s_box < remaining):
                s = s_box
                escape = (float(t + s), "box")
            x = x + s * v
            t = t_next if (s == remaining and escape is None) else t + s
            times.append(t)
            states.append(x.copy())
            vels.append(v)
            if crossing:
                count += 1
                events += 1
        if escape is not None:
            break
    S = np.array(states)
    return Trajectory(np.array(times), S, np.array(vels).reshape(-1, cx.N),
                      tuple(cx.locate(s) for s in S), escape,
                      {"events": events, "stalls": stalls, "h": float(h)})


@dataclass(frozen=True)
class Residual:
    rho: float
    passed: bool
    per_interval: np.ndarray
    strata: tuple

    def to_dict(self):
        return {"rho": self.rho, "pass": self.passed}


def interval_strata(cx, traj):
    """Stratum of each open interval, read off at its midpoint."""
    S = traj.states
    return tuple(cx.locate(0.5 * (S[n] + S[n + 1]), tol=TAU) for n in range(len(S) - 1))


def validate_trajectory(field, cx, traj, tol=1e-9):
    """``rho = sum dt * dist(velocity, F_j(x_n))`` with j the interval's stratum."""
    strata = interval_strata(cx, traj)
    dt = np.diff(traj.times)
    d = np.zeros(len(dt))
    for n, j in enumerate(strata):
        if dt[n] == 0:
            continue
        d[n] = field[j].at(traj.states[n]).distance(traj.velocities[n])
    rho = float(np.sum(dt * d))
    return Residual(rho, rho <= tol, dt * d, strata)


def filippov_reconstruct(field, cx, i, y):
    """Trajectory z of ``F_i`` tracking the arc y, with the exponential bound per node.

    Returns ``(z, bound)``. Velocities of z are the points of ``F_i(proj z)``
    nearest to those of y; the discrete Gronwall argument gives
    ``|y_n - z_n| <= exp(k (t_n - a)) * rho_n`` with rho accumulated at left
    nodes.
    """
    cell = cx.cell(i)
    k = field[i].k
    t = y.times
    Y = y.states
    z = [Y[0].copy()]
    zv = []
    rho = [0.0]
    for n in range(len(t) - 1):
        dt = t[n + 1] - t[n]
        F = field[i].at(project_cell(cell, Y[n]))
        rho.append(rho[-1] + dt * F.distance(y.velocities[n]))
        w = field[i].at(project_cell(cell, z[-1])).nearest(y.velocities[n])
        zv.append(w)
        z.append(z[-1] + dt * w)
    Z = np.array(z)
    rho = np.array(rho)
    bound = np.exp(k * (t - t[0])) * rho
    err = np.linalg.norm(Y - Z, axis=1)
    sup = np.maximum.accumulate(err)
    slack = 1e-9 * max(1.0, float(np.max(np.abs(Y))))
    bad = np.flatnonzero(sup > bound + slack)
    if bad.size:
        n = int(bad[0])
        raise FilippovBoundViolated(f"|y - z| = {sup[n]:.3g} exceeds bound {bound[n]:.3g} at t={t[n]:.6g}")
    for n in range(1, len(t)):
        if not cell.in_rint(Z[n]):
            margin = cell.relative_boundary_distance(Y[n]) - bound[n]
            raise EscapeBeforeEnd(float(t[n]), float(margin))
    ztraj = Trajectory(t.copy(), Z, np.array(zv).reshape(-1, cx.N),
                       tuple(cx.locate(p) for p in Z), None,
                       {"rho": rho, "sup_error": sup})
    return ztraj, bound


def stratum_descent(field, cx, x, v, start=None):
    """Chain of cells of strictly decreasing dimension ending where v is interior."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if start is None:
        S = eval_Gsharp(field, cx, x)
        tags = [tag for P, tag in zip(S.pieces, S.tags) if P.contains(v)]
        if not tags:
            raise DescentFailed(f"{v} is not an essential velocity at {x}")
        start = max(tags, key=lambda j: cx.cell(j).dim)
    i = start
    chain = [i]
    while True:
        K = tangent_cone(cx.cell(i), x)
        cls = cone_classify(K, v)
        if cls is ConeClass.RINT:
            return chain
        if cls is ConeClass.OUTSIDE:
            raise DescentFailed(f"{v} is outside the tangent cone of cell {i}")
        nxt = [j for j in rbdry_candidates(cx, i, x, v) if eval_F(field, cx, j, x).contains(v)]
        if not nxt:
            raise DescentFailed(f"no lower cell below {i} carries {v} at {x}")
        i = nxt[0]
        chain.append(i)


def realize_velocity(field, cx, x, v, T, steps=100):
    """Arc through x with initial velocity v, built inside the descended cell."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    chain = stratum_descent(field, cx, x, v)
    j = chain[-1]
    t = np.linspace(0.0, T, steps + 1)
    Y = x + t[:, None] * v
    y = Trajectory(t, Y, np.tile(v, (steps, 1)), tuple([j] * len(t)))
    z, bound = filippov_reconstruct(field, cx, j, y)
    z.diagnostics["chain"] = chain
    z.diagnostics["bound"] = bound
    return z


def reachable_quotient(field, cx, x, t, n_samples=50, seed=0, h=None, threads=1):
    """Max distance of sampled ``(x(t) - x) / t`` to the hull of ``G♯(x)``."""
    x = np.asarray(x, dtype=float)
    h = h if h is not None else t / 100
    hull = eval_Gsharp(field, cx, x).hull().vertices
    cache = _Cache(field, cx)

    def one(s):
        tr = switching_simulate(field, cx, x, t, h, SelectionPolicy.random(seed + s), cache=cache)
        q = (tr.final - x) / tr.times[-1] if tr.times[-1] > 0 else np.zeros_like(x)
        return hull_distance(hull, q)[0]

    return float(max(parallel_map(one, range(n_samples), threads)))


def parallel_map(fn, items, threads=1):
    """Map preserving item order; optional thread pool."""
    items = list(items)
    if threads <= 1:
        return [fn(a) for a in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
