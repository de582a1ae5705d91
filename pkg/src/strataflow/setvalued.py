"""Velocity polytopes, their Filippov hull and the essential velocity union."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._linalg import TAU, complement, dedup_points, enumerate_vertices, hull_distance
from .errors import DimensionTooLarge, EmptySet, NotInClosure
from .geometry import ConeRep, tangent_cone
from .report import Check, DynReport

MAX_DIM = 6


class Mode(enum.Enum):
    MIN = "min"
    MAX = "max"


@dataclass(frozen=True, eq=False)
class VertexMap:
    """One vertex ``x -> A x + c``; ``A is None`` for a constant vertex."""

    A: np.ndarray | None
    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        if self.A is not None:
            A = np.array(self.A, dtype=float).reshape(c.size, -1)
            A.setflags(write=False)
            object.__setattr__(self, "A", A)

    def at(self, x):
        if self.A is None:
            return np.array(self.c)
        return self.A @ np.asarray(x, dtype=float) + self.c

    @property
    def slope_norm(self):
        return 0.0 if self.A is None else float(np.linalg.norm(self.A, 2))


@dataclass(frozen=True, eq=False)
class Polytope:
    """Convex hull of a finite vertex array (possibly empty)."""

    vertices: np.ndarray

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        V = V.reshape(-1, V.shape[-1]) if V.size else V.reshape(0, V.shape[-1] if V.ndim == 2 else 0)
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)

    @property
    def empty(self):
        return len(self.vertices) == 0

    @property
    def N(self):
        return self.vertices.shape[1]

    def distance(self, v):
        if self.empty:
            return np.inf
        return hull_distance(self.vertices, v)[0]

    def nearest(self, v):
        if self.empty:
            raise EmptySet("nearest point of an empty polytope")
        return hull_distance(self.vertices, v)[1]

    def contains(self, v, tol=TAU):
        return self.distance(v) <= tol * max(1.0, float(np.linalg.norm(v)))

    def support(self, zeta, mode=Mode.MIN):
        return support(self, zeta, mode)


@dataclass(frozen=True, eq=False)
class VPolytope:
    """State-dependent polytope given by affine vertex maps."""

    generators: tuple

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))

    @classmethod
    def constant(cls, points):
        return cls(tuple(VertexMap(None, p) for p in np.atleast_2d(points)))

    def at(self, x):
        if not self.generators:
            return Polytope(np.zeros((0, np.asarray(x).size)))
        V = np.array([g.at(x) for g in self.generators])
        return Polytope(dedup_points(V))

    @property
    def k(self):
        return max((g.slope_norm for g in self.generators), default=0.0)

    @property
    def r(self):
        return max((max(g.slope_norm, float(np.linalg.norm(g.c))) for g in self.generators), default=0.0)

    @property
    def is_constant(self):
        return all(g.A is None for g in self.generators)


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Per-cell velocity polytopes ``F_i``."""

    maps: dict

    @classmethod
    def build(cls, cx, maps):
        """Fill zero-dimensional cells without data with ``{0}``."""
        maps = dict(maps)
        for c in cx.cells:
            if c.id not in maps and c.dim == 0:
                maps[c.id] = VPolytope.constant(np.zeros((1, cx.N)))
        return cls(maps)

    def __getitem__(self, i):
        return self.maps[i]

    @property
    def lipschitz_k(self):
        return max((p.k for p in self.maps.values()), default=0.0)

    @property
    def growth_r(self):
        return max((p.r for p in self.maps.values()), default=0.0)

    @property
    def is_constant(self):
        return all(p.is_constant for p in self.maps.values())


@dataclass(frozen=True, eq=False)
class SetUnion:
    pieces: tuple
    tags: tuple

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def empty(self):
        return all(p.empty for p in self.pieces)

    @cached_property
    def vertices(self):
        V = [p.vertices for p in self.pieces if not p.empty]
        return np.vstack(V) if V else np.zeros((0, 0))

    def contains(self, v, tol=TAU):
        return any(p.contains(v, tol) for p in self.pieces)

    def hull(self):
        return Polytope(_prune(dedup_points(self.vertices))) if not self.empty else Polytope(np.zeros((0, 0)))

    def support(self, zeta, mode=Mode.MIN):
        return support(self, zeta, mode)


def _prune(V):
    """Drop points lying in the hull of the others."""
    keep = list(range(len(V)))
    k = 0
    while k < len(keep) and len(keep) > 1:
        idx = keep[k]
        rest = [j for j in keep if j != idx]
        if hull_distance(V[rest], V[idx])[0] <= 1e-12 * max(1.0, float(np.linalg.norm(V[idx]))):
            keep.remove(idx)
        else:
            k += 1
    return V[keep]


def support(S, zeta, mode=Mode.MIN):
    """``min`` (or ``max``) of ``<v, zeta>`` over the vertices of a polytope or union."""
    V = S.vertices
    if len(V) == 0:
        raise EmptySet("support of an empty set")
    vals = V @ np.asarray(zeta, dtype=float)
    return float(vals.min() if mode is Mode.MIN else vals.max())


def eval_F(field, cx, i, x):
    cell = cx.cell(i)
    if not cell.in_closure(x):
        raise NotInClosure(f"point {np.asarray(x)} is not in the closure of cell {i}")
    return field[i].at(x)


def eval_G(field, cx, x):
    x = np.asarray(x, dtype=float)
    V = [field[c.id].at(x).vertices for c in cx.closures_containing(x)]
    V = dedup_points(np.vstack(V))
    return Polytope(_prune(V))


def intersect_with_cone(P, K):
    """Vertices of ``P ∩ K``.

    Works in barycentric coordinates: ``{lam >= 0, sum lam = 1}`` cut by the
    cone's half-spaces and span equalities applied to ``V^T lam``; the vertices
    of that set map onto vertices (and possibly redundant points) of the
    intersection.
    """
    N = K.N
    if N > MAX_DIM:
        raise DimensionTooLarge(f"vertex enumeration is capped at dimension {MAX_DIM}")
    V = P.vertices
    if len(V) == 0:
        return Polytope(np.zeros((0, N)))
    if all(K.contains(v) for v in V):
        return P
    m = len(V)
    perp = complement(K.span, N)
    G = np.vstack([-np.eye(m), K.H @ V.T])
    h = np.zeros(len(G))
    E = np.vstack([np.ones((1, m)), perp.T @ V.T])
    f = np.concatenate([[1.0], np.zeros(perp.shape[1])])
    L = enumerate_vertices(G, h, E, f)
    if len(L) == 0:
        return Polytope(np.zeros((0, N)))
    W = dedup_points(L @ V)
    # snap round-off images of original vertices back onto them
    for k, w in enumerate(W):
        j = int(np.argmin(np.max(np.abs(V - w), axis=1)))
        if np.max(np.abs(V[j] - w)) <= 1e-12 * max(1.0, float(np.abs(w).max())):
            W[k] = V[j]
    return Polytope(_prune(W))


def eval_Gsharp(field, cx, x):
    x = np.asarray(x, dtype=float)
    pieces, tags = [], []
    for c in cx.closures_containing(x):
        P = intersect_with_cone(field[c.id].at(x), tangent_cone(c, x))
        if not P.empty:
            pieces.append(P)
            tags.append(c.id)
    return SetUnion(pieces, tags)


def directions(N, n=64, seed=0):
    """Fixed unit directions: evenly spaced in the plane, seeded otherwise."""
    if N == 2:
        th = 2 * np.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(th), np.sin(th)])
    D = np.random.default_rng(seed).standard_normal((n, N))
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def support_gap(P, Q, D):
    """Largest difference of max-support values over the rows of D."""
    a = (P.vertices @ D.T).max(axis=0)
    b = (Q.vertices @ D.T).max(axis=0)
    j = int(np.argmax(np.abs(a - b)))
    return float(abs(a[j] - b[j])), D[j]


def rint_samples(cell, n, rng):
    V = cell.vertices
    if cell.dim == 0 or len(V) == 0:
        return cell.origin.reshape(1, -1)
    W = rng.dirichlet(np.ones(len(V)), size=n)
    return 0.9 * (W @ V) + 0.1 * cell.origin


def validate_dynamics(field, cx, n_samples=32, seed=0):
    """Standing hypotheses and the structural condition, checked at samples."""
    rng = np.random.default_rng(seed)
    D = directions(cx.N)
    checks = []
    samples = {c.id: rint_samples(c, n_samples, rng) for c in cx.cells}

    missing = [c.id for c in cx.cells if c.id not in field.maps or not field[c.id].generators]
    for i in missing:
        checks.append(Check("SH-i", False, cell=i, detail="no velocity data for this cell"))
    extra = [i for i in field.maps if i not in cx.ids]
    for i in extra:
        checks.append(Check("SH-i", False, cell=i, detail="velocity data for an unknown cell"))
    tangent_ok = not missing and not extra
    for c in cx.cells:
        if c.id in missing:
            continue
        for x in samples[c.id]:
            bad = [v for v in field[c.id].at(x).vertices if not c.in_span(v)]
            if bad:
                tangent_ok = False
                checks.append(Check("SH-i", False, cell=c.id,
                                    witness={"x": x.tolist(), "v": bad[0].tolist()},
                                    detail="velocity not tangent to the cell"))
                break
    if tangent_ok:
        checks.append(Check("SH-i", True))
    if missing or extra:
        return DynReport(checks, r=field.growth_r, k=field.lipschitz_k)

    r = field.growth_r
    checks.append(Check("SH-iii", bool(np.isfinite(r)), detail=f"r={r!r}"))

    k = field.lipschitz_k
    lip_ok = True
    for c in cx.cells:
        X = samples[c.id]
        for a in range(min(len(X) - 1, 8)):
            x, y = X[a], X[a + 1]
            gap, _ = support_gap(field[c.id].at(x), field[c.id].at(y), D)
            if gap > k * np.linalg.norm(x - y) + 1e-9:
                lip_ok = False
                checks.append(Check("SH-iv", False, cell=c.id,
                                    witness={"x": x.tolist(), "y": y.tolist()},
                                    detail=f"Hausdorff quotient exceeds k={k!r}"))
                break
    if lip_ok:
        checks.append(Check("SH-iv", True, detail=f"k={k!r}"))

    sc_ok = True
    for c in cx.cells:
        lin = ConeRep(np.zeros((0, cx.N)), c.span)
        for x in samples[c.id]:
            if len(cx.closures_containing(x)) == 1:
                # only this closure holds x, so G is F itself (already tangent)
                continue
            F = field[c.id].at(x)
            GT = intersect_with_cone(eval_G(field, cx, x), lin)
            gap, d = support_gap(GT, F, D) if not GT.empty else (np.inf, D[0])
            scale = max(1.0, float(np.abs(F.vertices).max()))
            if gap > 1e-9 * scale:
                sc_ok = False
                checks.append(Check("SC", False, cell=c.id,
                                    witness={"x": x.tolist(), "direction": d.tolist()},
                                    detail=f"G ∩ T differs from F by {gap:.3g} in support"))
                break
    if sc_ok:
        checks.append(Check("SC", True))
    return DynReport(checks, r=r, k=k)
