"""Polyhedral stratifications of a box.

A cell is the relative interior of a convex polyhedron ``{x : A x <= b}``.
The box only bounds the world; its faces are never cell faces, so points on
the box boundary belong to the relative interior of whatever cell contains
them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

from ._linalg import (
    TAU,
    complement,
    dedup_points,
    enumerate_vertices,
    kkt_residual,
    null_space,
    orthonormal_span,
    project_polyhedron,
    solve_lp,
)
from .errors import (
    MalformedCell,
    NotInClosure,
    NoWitness,
    OutOfBox,
    QPFailure,
    StrataflowError,
)
from .report import Check, Report


class ConeClass(enum.Enum):
    RINT = "rint"
    RBDRY = "rbdry"
    OUTSIDE = "outside"


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _frozen(self.lo))
        object.__setattr__(self, "hi", _frozen(self.hi))

    @property
    def N(self):
        return self.lo.size

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def rows(self):
        eye = np.eye(self.N)
        return np.vstack([eye, -eye]), np.concatenate([self.hi, -self.lo])

    def violation(self, x):
        x = np.asarray(x, dtype=float)
        return float(max(np.max(x - self.hi), np.max(self.lo - x), 0.0))

    def contains(self, x, tol=TAU):
        return self.violation(x) <= tol

    def sample(self, rng, n):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.N))


@dataclass(frozen=True, eq=False)
class HPolyhedron:
    """``{x : A x <= b}`` with unit-norm rows."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.size == 0:
            A = A.reshape(0, A.shape[1] if A.ndim == 2 else 0)
        if A.shape[0] != b.size:
            raise ValueError("A and b have inconsistent row counts")
        norms = np.linalg.norm(A, axis=1)
        keep = norms > 1e-14
        if np.any(~keep & (b < 0)):
            # 0 <= b with b < 0: an empty set; keep a canonical infeasible row
            A = np.vstack([A[keep], np.zeros((1, A.shape[1]))])
            b = np.concatenate([b[keep], [-1.0]])
        else:
            A, b, norms = A[keep], b[keep], norms[keep]
            # already-normalized rows are left untouched so that
            # re-normalization is idempotent bit for bit
            s = np.where(np.abs(norms - 1.0) <= 4e-16, 1.0, norms)
            A = A / s[:, None]
            b = b / s
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "b", _frozen(b))

    @property
    def N(self):
        return self.A.shape[1]

    def contains(self, x, tol=TAU):
        return bool(np.all(self.A @ np.asarray(x, dtype=float) <= self.b + tol))


@dataclass(frozen=True, eq=False)
class Cell:
    """One stratum: relative interior of ``closure``.

    ``eq`` flags the rows of the closure that hold with equality everywhere
    on it (inside the box); the remaining rows carry the relative boundary.
    """

    id: int
    closure: HPolyhedron
    dim: int
    span: np.ndarray
    origin: np.ndarray
    eq: np.ndarray
    box: Box = field(repr=False)

    @classmethod
    def build(cls, id, closure, box, dim=None):
        if closure.N != box.N:
            raise MalformedCell(id, "dimension of constraints does not match the box")
        A, b = closure.A, closure.b
        Bx, bx = box.rows()
        N = box.N
        if len(A) == 0:
            eq = np.zeros(0, dtype=bool)
        else:
            res = solve_lp(np.zeros(N), A_ub=A, b_ub=b, bounds=list(zip(box.lo, box.hi)))
            if res.status != 0:
                raise MalformedCell(id, "empty closure")
            eq = np.zeros(len(A), dtype=bool)
            for k in range(len(A)):
                # max slack of row k over closure ∩ box
                r = solve_lp(A[k], A_ub=A, b_ub=b, bounds=list(zip(box.lo, box.hi)))
                eq[k] = (b[k] - r.fun) <= TAU
        span = complement(orthonormal_span(A[eq], N), N) if np.any(eq) else np.eye(N)
        computed = span.shape[1]
        if dim is not None and int(dim) != computed:
            raise MalformedCell(id, f"declared dim {dim} but affine hull has dim {computed}")
        origin = _relative_center(A, b, eq, box)
        if origin is None:
            raise MalformedCell(id, "empty relative interior")
        return cls(id, closure, computed, _frozen(span), _frozen(origin), eq, box)

    @property
    def N(self):
        return self.closure.N

    @cached_property
    def ineq(self):
        """Rows of the closure that are not implicit equalities."""
        return self.closure.A[~self.eq], self.closure.b[~self.eq]

    def in_closure(self, x, tol=TAU):
        return self.closure.contains(x, tol)

    def in_rint(self, x, tol=TAU):
        x = np.asarray(x, dtype=float)
        A, b = self.closure.A, self.closure.b
        r = A @ x - b
        if np.any(r[self.eq] > tol) or np.any(r[self.eq] < -tol):
            return False
        return bool(np.all(r[~self.eq] < -tol))

    def active(self, x, tol=TAU):
        """Non-implicit rows active at x."""
        Ai, bi = self.ineq
        return np.abs(Ai @ np.asarray(x, dtype=float) - bi) <= tol

    def in_span(self, v, tol=TAU):
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.span @ (self.span.T @ v))) <= tol * max(1.0, np.linalg.norm(v))

    @cached_property
    def vertices(self):
        """Vertices of closure ∩ box."""
        A, b = self.closure.A, self.closure.b
        Bx, bx = self.box.rows()
        G = np.vstack([A[~self.eq], Bx])
        h = np.concatenate([b[~self.eq], bx])
        V = enumerate_vertices(G, h, A[self.eq], b[self.eq])
        V.setflags(write=False)
        return V

    @cached_property
    def facets(self):
        """Closures of the relative-boundary faces that meet the box."""
        Ai, bi = self.ineq
        out = []
        for k in range(len(Ai)):
            face = HPolyhedron(np.vstack([self.closure.A, -Ai[k]]),
                               np.concatenate([self.closure.b, [-bi[k]]]))
            try:
                out.append(Cell.build(-1, face, self.box))
            except MalformedCell:
                continue
        return tuple(out)

    def relative_boundary_distance(self, y):
        """Distance from y to the relative boundary of the closure (box faces excluded)."""
        return min((float(np.linalg.norm(project_cell(f, y) - y)) for f in self.facets), default=np.inf)


def _relative_center(A, b, eq, box):
    """A point of the relative interior, preferring one inside the open box."""
    N = box.N
    strict = ~eq
    for box_strict in (True, False):
        c = np.zeros(N + 1)
        c[-1] = -1.0
        rows = []
        rhs = []
        for k in np.flatnonzero(strict):
            rows.append(np.append(A[k], 1.0))
            rhs.append(b[k])
        bounds = [(lo, hi) for lo, hi in zip(box.lo, box.hi)] + [(None, 1.0)]
        if box_strict:
            Bx, bx = box.rows()
            for k in range(len(Bx)):
                rows.append(np.append(Bx[k], 1.0))
                rhs.append(bx[k])
        A_eq = np.hstack([A[eq], np.zeros((int(eq.sum()), 1))]) if np.any(eq) else None
        b_eq = b[eq] if np.any(eq) else None
        res = solve_lp(c, A_ub=np.array(rows) if rows else None,
                       b_ub=np.array(rhs) if rhs else None,
                       A_eq=A_eq, b_eq=b_eq, bounds=bounds)
        if res.status == 0 and (-res.fun > TAU or not np.any(strict)):
            return res.x[:N]
    return None


@dataclass(frozen=True, eq=False)
class ConeRep:
    """Polyhedral cone ``{v in span(S) : H v <= 0}``."""

    H: np.ndarray
    span: np.ndarray

    def __post_init__(self):
        n = self.span.shape[0]
        object.__setattr__(self, "H", _frozen(np.asarray(self.H, dtype=float).reshape(-1, n)))
        object.__setattr__(self, "span", _frozen(self.span))

    @property
    def N(self):
        return self.span.shape[0]

    @cached_property
    def _gens(self):
        S = self.span
        N, d = S.shape
        if d == 0:
            return np.zeros((0, N)), np.zeros((N, 0))
        Hr = self.H @ S
        Hr = Hr[np.linalg.norm(Hr, axis=1) > 1e-12]
        Lr = null_space(Hr, rcond=1e-10) if len(Hr) else np.eye(d)
        Wr = complement(Lr, d)
        lineality = S @ Lr
        w = Wr.shape[1]
        rays = []
        if w > 0:
            Hw = Hr @ Wr
            cands = []
            if w == 1:
                cands = [np.array([1.0]), np.array([-1.0])]
            else:
                for sub in combinations(range(len(Hw)), w - 1):
                    ns = null_space(Hw[list(sub)], rcond=1e-10)
                    if ns.shape[1] == 1:
                        cands += [ns[:, 0], -ns[:, 0]]
            for r in cands:
                if np.all(Hw @ r <= 1e-10):
                    rays.append(S @ (Wr @ r))
        R = dedup_points(np.array(rays), tol=1e-8) if rays else np.zeros((0, N))
        return R, lineality

    @property
    def rays(self):
        return self._gens[0]

    @property
    def lineality(self):
        return self._gens[1]

    @property
    def lineality_dim(self):
        return self.lineality.shape[1]

    @property
    def V(self):
        """Generators: extreme rays of the pointed part plus ± lineality basis."""
        L = self.lineality.T
        return np.vstack([self.rays, L, -L])

    @property
    def dim(self):
        """Dimension of the linear hull of the cone."""
        V = self.V
        return int(np.linalg.matrix_rank(V, tol=1e-9)) if len(V) else 0

    def contains(self, v, tol=TAU):
        v = np.asarray(v, dtype=float)
        scale = max(1.0, float(np.linalg.norm(v)))
        if np.linalg.norm(v - self.span @ (self.span.T @ v)) > tol * scale:
            return False
        return bool(np.all(self.H @ v <= tol * scale))

    def project(self, v):
        """Euclidean projection of v onto the cone."""
        v = np.asarray(v, dtype=float)
        S = self.span
        if S.shape[1] == 0:
            return np.zeros(self.N)
        z, *_ = project_polyhedron(self.H @ S, np.zeros(len(self.H)), S.T @ v, np.zeros(S.shape[1]))
        return S @ z

    def polar(self):
        """Polar cone ``{w : <w, v> <= 0 for all v in the cone}``."""
        return ConeRep(self.rays, complement(self.lineality, self.N))

    def polar_generators(self):
        """Unit generators of the polar cone, projected onto the span."""
        S = self.span
        G = self.H @ S @ S.T
        n = np.linalg.norm(G, axis=1)
        G = G[n > 1e-12] / n[n > 1e-12, None]
        return G

    def verify(self, tol=1e-8):
        """LP cross-check that the generators span exactly the H-described cone."""
        V = self.V
        if len(V) and np.any(self.H @ V.T > tol):
            return False
        if len(V) and np.any(np.abs(V - (self.span @ (self.span.T @ V.T)).T) > tol):
            return False
        # each H-face direction sample must be a nonnegative combination of V
        rng = np.random.default_rng(0)
        for _ in range(16):
            d = rng.standard_normal(self.N)
            p = self.project(d)
            if np.linalg.norm(p) <= tol:
                continue
            if len(V) == 0:
                return False
            res = solve_lp(np.zeros(len(V)), A_eq=V.T, b_eq=p, bounds=[(0, None)] * len(V))
            if res.status != 0:
                return False
        return True


def tangent_cone(cell, x):
    x = np.asarray(x, dtype=float)
    if not cell.in_closure(x):
        raise NotInClosure(f"point {x} is not in the closure of cell {cell.id}")
    Ai, _ = cell.ineq
    return ConeRep(Ai[cell.active(x)], cell.span)


def normal_cone(cell, x):
    return tangent_cone(cell, x).polar()


def interior_margin(cone, v):
    """Largest mu with <z, v> <= -mu |z| for every polar generator z (inf if none)."""
    v = np.asarray(v, dtype=float)
    scale = max(1.0, float(np.linalg.norm(v)))
    S = cone.span
    if np.linalg.norm(v - S @ (S.T @ v)) > TAU * scale:
        return -np.inf
    G = cone.polar_generators()
    if len(G) == 0:
        return np.inf
    return float(-np.max(G @ v))


def cone_classify(cone, v):
    v = np.asarray(v, dtype=float)
    scale = max(1.0, float(np.linalg.norm(v)))
    mu = interior_margin(cone, v)
    if mu == -np.inf:
        return ConeClass.OUTSIDE
    if mu > TAU * scale:
        return ConeClass.RINT
    if mu >= -TAU * scale:
        return ConeClass.RBDRY
    return ConeClass.OUTSIDE


def project_cell(cell, x):
    """Nearest point of the closure of ``cell`` to x."""
    x = np.asarray(x, dtype=float)
    S, o = cell.span, cell.origin
    if S.shape[1] == 0:
        return o.copy()
    Ai, bi = cell.ineq
    G = Ai @ S
    h = bi - Ai @ o
    p = S.T @ (x - o)
    z, lam, act = project_polyhedron(G, h, p, np.zeros(S.shape[1]))
    scale = max(1.0, float(np.max(np.abs(p), initial=0.0)))
    if kkt_residual(G, h, p, z, lam, act) > 1e-10 * scale:
        raise QPFailure(f"projection onto cell {cell.id} failed the KKT check")
    return o + S @ z


@dataclass(frozen=True, eq=False)
class CellComplex:
    box: Box
    cells: tuple

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        ids = [c.id for c in self.cells]
        if len(set(ids)) != len(ids):
            raise StrataflowError("duplicate cell ids")

    @classmethod
    def from_constraints(cls, box, specs):
        """``specs``: iterable of ``(id, A, b, dim)``; ``dim`` may be None."""
        cells = [Cell.build(i, HPolyhedron(A, b), box, dim) for i, A, b, dim in specs]
        return cls(box, tuple(cells))

    @property
    def N(self):
        return self.box.N

    @cached_property
    def _by_id(self):
        return {c.id: c for c in self.cells}

    def cell(self, i):
        try:
            return self._by_id[i]
        except KeyError:
            raise StrataflowError(f"no cell with id {i}") from None

    @property
    def ids(self):
        return [c.id for c in self.cells]

    def _row_residual(self, x):
        A, b, owner, eq = self._stacked
        return A @ np.asarray(x, dtype=float) - b, owner, eq

    def locate_all(self, x, tol=TAU):
        r, owner, eq = self._row_residual(x)
        ok = np.where(eq, np.abs(r) <= tol, r < -tol)
        bad = np.bincount(owner[~ok], minlength=len(self.cells))
        return [c.id for c, nb in zip(self.cells, bad) if nb == 0]

    def locate(self, x, tol=TAU):
        x = np.asarray(x, dtype=float)
        if self.box.violation(x) > tol:
            raise OutOfBox(f"point {x} lies outside the box")
        hits = self.locate_all(x, tol)
        if len(hits) != 1:
            raise StrataflowError(f"point {x} lies in {len(hits)} cells; complex is not a partition")
        return hits[0]

    def closures_containing(self, x, tol=TAU):
        r, owner, _ = self._row_residual(x)
        bad = np.bincount(owner[r > tol], minlength=len(self.cells))
        return [c for c, nb in zip(self.cells, bad) if nb == 0]

    @cached_property
    def _stacked(self):
        A = np.vstack([c.closure.A for c in self.cells])
        b = np.concatenate([c.closure.b for c in self.cells])
        owner = np.concatenate([[k] * len(c.closure.b) for k, c in enumerate(self.cells)]).astype(int)
        eq = np.concatenate([c.eq for c in self.cells])
        return A, b, owner, eq

    def signature(self, x, tol=TAU):
        """Hashable summary of which rows are strictly satisfied or violated at x.

        Two points with the same signature lie in the same closures with the
        same active rows, hence share tangent cones.
        """
        A, b, _, _ = self._stacked
        r = A @ np.asarray(x, dtype=float) - b
        return (r < -tol).tobytes() + (r > tol).tobytes()

    @cached_property
    def subcells(self):
        """``i -> [j]`` with cl(M_j) ⊂ cl(M_i), j != i, by vertex containment."""
        out = {}
        for ci in self.cells:
            out[ci.id] = [cj.id for cj in self.cells
                          if cj.id != ci.id and cj.dim < ci.dim
                          and all(ci.in_closure(v, 1e-8) for v in cj.vertices)]
        return out


def _meet_lp(cx, strict_cells, closed_cells):
    """Max s with a point strictly inside strict_cells (by s) and in closed_cells."""
    N = cx.N
    rows, rhs, erows, erhs = [], [], [], []
    for c in strict_cells:
        A, b = c.closure.A, c.closure.b
        for k in range(len(A)):
            if c.eq[k]:
                erows.append(np.append(A[k], 0.0))
                erhs.append(b[k])
            else:
                rows.append(np.append(A[k], 1.0))
                rhs.append(b[k])
    for c in closed_cells:
        for a, bk in zip(c.closure.A, c.closure.b):
            rows.append(np.append(a, 0.0))
            rhs.append(bk)
    cvec = np.zeros(N + 1)
    cvec[-1] = -1.0
    bounds = list(zip(cx.box.lo, cx.box.hi)) + [(-1.0, 1.0)]
    res = solve_lp(cvec, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rhs else None,
                   A_eq=np.array(erows) if erows else None, b_eq=np.array(erhs) if erhs else None,
                   bounds=bounds)
    if res.status != 0:
        return -np.inf, None
    return -res.fun, res.x[:N]


def _face_points(cell, rng, per_face=2):
    """Vertices, face centroids and random face points of closure ∩ box."""
    V = cell.vertices
    if len(V) == 0:
        return np.zeros((0, cell.N))
    Ai, bi = cell.ineq
    tight = np.abs(V @ Ai.T - bi) <= 1e-8 if len(Ai) else np.zeros((len(V), 0), dtype=bool)
    pts = [V]
    for r in range(0, min(cell.dim, len(Ai)) + 1):
        for sub in combinations(range(len(Ai)), r):
            mask = np.all(tight[:, list(sub)], axis=1) if sub else np.ones(len(V), dtype=bool)
            F = V[mask]
            if len(F) == 0:
                continue
            pts.append(F.mean(axis=0, keepdims=True))
            w = rng.dirichlet(np.ones(len(F)), size=per_face)
            pts.append(w @ F)
    return np.vstack(pts)


def validate_complex(cx, n_samples=200, seed=0):
    """Check the stratified-domain axioms; failures carry witness points."""
    rng = np.random.default_rng(seed)
    checks = []
    if not np.all(cx.box.hi > cx.box.lo):
        checks.append(Check("box", False, detail="box is not full-dimensional"))
        return Report(checks)
    if not cx.cells:
        checks.append(Check("partition", False, detail="no cells"))
        return Report(checks)

    # pairwise disjointness of relative interiors (exact, by LP)
    overlap = None
    for ci, cj in combinations(cx.cells, 2):
        s, x = _meet_lp(cx, [ci, cj], [])
        if s > TAU:
            overlap = (ci.id, cj.id, x)
            break
    if overlap:
        checks.append(Check("partition", False, cell=overlap[0],
                            witness={"x": overlap[2].tolist(), "cells": [overlap[0], overlap[1]]},
                            detail="relative interiors overlap"))
    # coverage on face witnesses and random samples
    pts = [cx.box.sample(rng, n_samples), _box_corners(cx.box)]
    for c in cx.cells:
        pts.append(_face_points(c, rng))
    P = np.vstack(pts)
    bad = None
    for x in P:
        hits = cx.locate_all(x)
        if len(hits) != 1:
            bad = (x, hits)
            break
    if bad is not None:
        checks.append(Check("partition", False, witness={"x": bad[0].tolist(), "cells": bad[1]},
                            detail=f"point lies in {len(bad[1])} cells"))
    if overlap is None and bad is None:
        checks.append(Check("partition", True, detail=f"{len(P)} witness points"))

    # frontier condition
    frontier_ok = True
    for ci in cx.cells:
        for cj in cx.cells:
            if ci.id == cj.id:
                continue
            s, x = _meet_lp(cx, [cj], [ci])
            if s <= TAU:
                continue
            outside = [v for v in cj.vertices if not ci.in_closure(v, 1e-8)]
            if outside:
                frontier_ok = False
                checks.append(Check("frontier", False, cell=ci.id,
                                    witness={"x": outside[0].tolist(), "cells": [ci.id, cj.id]},
                                    detail=f"cell {cj.id} meets the closure of {ci.id} without lying in it"))
    if frontier_ok:
        checks.append(Check("frontier", True))

    # relative pointedness of normal cones at every vertex
    wedge_ok = True
    for c in cx.cells:
        for v in c.vertices:
            T = tangent_cone(c, v)
            lin = T.polar().lineality_dim
            if lin != cx.N - c.dim:
                wedge_ok = False
                checks.append(Check("relatively_wedged", False, cell=c.id, witness={"x": v.tolist()},
                                    detail=f"normal cone contains a {lin}-dim subspace, allowed {cx.N - c.dim}"))
                break
    if wedge_ok:
        checks.append(Check("relatively_wedged", True))
    checks.append(Check("proximally_smooth", True, detail="convex closures: every radius"))
    return Report(checks)


def _box_corners(box):
    N = box.N
    out = []
    for mask in range(2 ** N):
        out.append([box.hi[k] if mask >> k & 1 else box.lo[k] for k in range(N)])
    return np.array(out)


def rbdry_candidates(cx, i, x, v):
    """Sub-cells j of cell i with x in cl(M_j) and v in T_{cl M_j}(x).

    Cells where v lies in the relative interior of the tangent cone come
    first; within each group, higher dimension first.
    """
    x = np.asarray(x, dtype=float)
    out = []
    for j in cx.subcells[i]:
        cj = cx.cell(j)
        if not cj.in_closure(x):
            continue
        T = tangent_cone(cj, x)
        cls = cone_classify(T, v)
        if cls is ConeClass.OUTSIDE:
            continue
        out.append((cls is not ConeClass.RINT, -cj.dim, j))
    out.sort()
    return [j for *_, j in out]


def rbdry_witness(cx, i, x, v):
    ci = cx.cell(i)
    x = np.asarray(x, dtype=float)
    if not ci.in_closure(x) or ci.in_rint(x):
        raise NoWitness(f"point is not on the relative boundary of cell {i}")
    cands = rbdry_candidates(cx, i, x, v)
    if not cands:
        raise NoWitness(f"no lower-dimensional cell in the closure of {i} admits this direction")
    return cands[0]
