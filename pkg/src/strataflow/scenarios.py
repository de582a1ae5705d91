"""Built-in scenarios and the JSON scenario format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import MalformedCell, ParseError, ScenarioIOError, StrataflowError, ValidationFailed
from .geometry import Box, Cell, CellComplex, HPolyhedron, validate_complex
from .invariance import ClosedTarget
from .report import Check, Report
from .setvalued import VelocityField, VertexMap, VPolytope, validate_dynamics

BOX = ([-5.0, -5.0], [5.0, 5.0])


@dataclass(frozen=True, eq=False)
class Scenario:
    complex: CellComplex
    field: VelocityField
    targets: dict
    meta: dict = field(default_factory=dict)

    def target(self, name):
        try:
            return self.targets[name]
        except KeyError:
            raise StrataflowError(f"scenario has no target {name!r}; known: {sorted(self.targets)}") from None

    def to_dict(self):
        cx = self.complex
        return {
            "meta": dict(self.meta),
            "box": {"lo": cx.box.lo.tolist(), "hi": cx.box.hi.tolist()},
            "cells": [{"id": c.id, "dim": c.dim, "A": c.closure.A.tolist(), "b": c.closure.b.tolist()}
                      for c in cx.cells],
            "field": [{"cell": i, "vertices": [{"A": None if g.A is None else g.A.tolist(), "c": g.c.tolist()}
                                               for g in self.field[i].generators]}
                      for i in sorted(self.field.maps)],
            "targets": [{"name": n, "pieces": [{"A": p.A.tolist(), "b": p.b.tolist()} for p in t.pieces]}
                        for n, t in self.targets.items()],
        }

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.to_dict() == other.to_dict()

    def summary(self):
        cx = self.complex
        return {
            "name": self.meta.get("name", ""),
            "N": cx.N,
            "box": {"lo": cx.box.lo.tolist(), "hi": cx.box.hi.tolist()},
            "cells": [{"id": c.id, "dim": c.dim, "vertices": len(c.vertices),
                       "velocity_vertices": len(self.field[c.id].generators) if c.id in self.field.maps else 0}
                      for c in cx.cells],
            "targets": list(self.targets),
            "k": self.field.lipschitz_k,
            "r": self.field.growth_r,
        }


def _const(*pts):
    return VPolytope.constant(np.array(pts, dtype=float))


def _make(name, description, cells, field_data, targets):
    box = Box(*BOX)
    cx = CellComplex.from_constraints(box, cells)
    fld = VelocityField.build(cx, field_data)
    tg = {n: ClosedTarget(tuple(HPolyhedron(A, b) for A, b in pieces), n, box) for n, pieces in targets}
    tg["box"] = ClosedTarget.whole_box(box)
    return Scenario(cx, fld, tg, {"name": name, "description": description})


UPPER = ([[0, -1]], [0])
LOWER = ([[0, 1]], [0])
DIAMOND = ([[1, 1], [1, -1], [-1, 1], [-1, -1]], [1, 1, 1, 1])
ORIGIN = ([[1, 0], [-1, 0], [0, 1], [0, -1]], [0, 0, 0, 0])


def _example1():
    cells = [
        (1, *UPPER, 2),
        (2, *LOWER, 2),
        (3, [[0, 1], [0, -1], [1, 0]], [0, 0, 0], 1),
        (4, [[0, 1], [0, -1], [-1, 0]], [0, 0, 0], 1),
        (5, *ORIGIN, 0),
    ]
    F = {1: _const([0, -1]), 2: _const([0, 1]), 3: _const([1, 0]), 4: _const([-1, 0])}
    targets = [
        ("diamond", [DIAMOND]),
        ("segment", [([[0, 1], [0, -1], [1, 0], [-1, 0]], [0, 0, 0, 1])]),
    ]
    return _make("EXAMPLE1", "half-planes, half-axes and origin; motion toward the origin", cells, F, targets)


def _zeno():
    cells = [(1, *UPPER, 2), (2, *LOWER, 2), (3, [[0, 1], [0, -1]], [0, 0], 1)]
    slope = _const([1, -1], [1, 1])
    F = {1: slope, 2: slope, 3: _const([-1, 0], [1, 0])}
    return _make("ZENO", "half-planes with (1,u) dynamics and a sliding axis", cells, F,
                 [("upper", [UPPER])])


def _ex3():
    cells = [
        (1, [[-1, 0], [0, -1]], [0, 0], 2),
        (2, [[-1, 0], [0, 1]], [0, 0], 2),
        (3, [[0, 1], [0, -1], [-1, 0]], [0, 0, 0], 1),
        (4, [[1, 0], [0, -1]], [0, 0], 2),
        (5, [[1, 0], [0, 1]], [0, 0], 2),
        (6, [[0, 1], [0, -1], [1, 0]], [0, 0, 0], 1),
        (7, [[1, 0], [-1, 0], [0, -1]], [0, 0, 0], 1),
        (8, [[1, 0], [-1, 0], [0, 1]], [0, 0, 0], 1),
        (9, *ORIGIN, 0),
    ]
    slope = _const([1, -1], [1, 1])
    slide = _const([-1, 0], [1, 0])
    rest = _const([0, 0])
    F = {1: slope, 2: slope, 4: slope, 5: slope, 3: slide, 6: slide, 7: rest, 8: rest, 9: rest}
    return _make("EX3", "the sliding example split along the x2-axis", cells, F,
                 [("upper", [UPPER]), ("right", [([[-1, 0]], [0])])])


_BUILTINS = {"EXAMPLE1": _example1, "ZENO": _zeno, "EX3": _ex3}


def builtin(name):
    key = name.upper()
    if key not in _BUILTINS:
        raise StrataflowError(f"unknown builtin {name!r}; choose from {sorted(_BUILTINS)}")
    return _BUILTINS[key]()


def builtin_names():
    return sorted(_BUILTINS)


def validate_scenario(s):
    r1 = validate_complex(s.complex)
    r2 = validate_dynamics(s.field, s.complex)
    return Report(list(r1.checks) + list(r2.checks)), r1, r2


# ---- serialization ----------------------------------------------------------

def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise ParseError(f"{where}: expected a number, got {type(v).__name__}")
    if isinstance(v, str):
        try:
            return float(Fraction(v))
        except (ValueError, ZeroDivisionError):
            raise ParseError(f"{where}: bad number {v!r}") from None
    x = float(v)
    if not math.isfinite(x):
        raise ParseError(f"{where}: non-finite number")
    return x


def _vec(v, where):
    if not isinstance(v, list):
        raise ParseError(f"{where}: expected a list")
    return [_num(a, f"{where}[{k}]") for k, a in enumerate(v)]


def _mat(v, where, ncols):
    if not isinstance(v, list):
        raise ParseError(f"{where}: expected a list of rows")
    rows = [_vec(r, f"{where}[{k}]") for k, r in enumerate(v)]
    if any(len(r) != ncols for r in rows):
        raise ParseError(f"{where}: every row needs {ncols} entries")
    return np.array(rows, dtype=float).reshape(len(rows), ncols)


def _get(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise ParseError(f"{where}: missing key {key!r}")
    return d[key]


def from_dict(doc):
    """Build a scenario from parsed JSON (no validation beyond cell construction)."""
    box_d = _get(doc, "box", "scenario")
    lo, hi = _vec(_get(box_d, "lo", "box"), "box.lo"), _vec(_get(box_d, "hi", "box.hi"), "box.hi")
    if len(lo) != len(hi) or not lo:
        raise ParseError("box: lo and hi must have the same positive length")
    N = len(lo)
    box = Box(lo, hi)
    cells = []
    for k, c in enumerate(_get(doc, "cells", "scenario")):
        w = f"cells[{k}]"
        cid = _get(c, "id", w)
        if not isinstance(cid, int) or isinstance(cid, bool):
            raise ParseError(f"{w}.id: expected an integer")
        dim = c.get("dim")
        if dim is not None and (not isinstance(dim, int) or isinstance(dim, bool)):
            raise ParseError(f"{w}.dim: expected an integer")
        A = _mat(_get(c, "A", w), f"{w}.A", N)
        b = _vec(_get(c, "b", w), f"{w}.b")
        if len(b) != len(A):
            raise ParseError(f"{w}: A and b have different lengths")
        cells.append(Cell.build(cid, HPolyhedron(A, b), box, dim))
    ids = [c.id for c in cells]
    if len(set(ids)) != len(ids):
        raise ParseError("cells: duplicate ids")
    cx = CellComplex(box, tuple(cells))
    maps = {}
    for k, f in enumerate(_get(doc, "field", "scenario")):
        w = f"field[{k}]"
        cid = _get(f, "cell", w)
        gens = []
        for m, g in enumerate(_get(f, "vertices", w)):
            c = _vec(_get(g, "c", f"{w}.vertices[{m}]"), f"{w}.vertices[{m}].c")
            if len(c) != N:
                raise ParseError(f"{w}.vertices[{m}].c: expected {N} entries")
            A = g.get("A")
            gens.append(VertexMap(None if A is None else _mat(A, f"{w}.vertices[{m}].A", N), c))
        if cid in maps:
            raise ParseError(f"{w}: duplicate field entry for cell {cid}")
        maps[cid] = VPolytope(tuple(gens))
    fld = VelocityField.build(cx, maps)
    targets = {}
    for k, t in enumerate(doc.get("targets", [])):
        w = f"targets[{k}]"
        name = _get(t, "name", w)
        pieces = []
        for m, p in enumerate(_get(t, "pieces", w)):
            A = _mat(_get(p, "A", f"{w}.pieces[{m}]"), f"{w}.pieces[{m}].A", N)
            b = _vec(_get(p, "b", f"{w}.pieces[{m}]"), f"{w}.pieces[{m}].b")
            if len(b) != len(A):
                raise ParseError(f"{w}.pieces[{m}]: A and b have different lengths")
            pieces.append(HPolyhedron(A, b))
        targets[str(name)] = ClosedTarget(tuple(pieces), str(name), box)
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise ParseError("meta: expected an object")
    return Scenario(cx, fld, targets, dict(meta))


def dumps(s):
    return json.dumps(s.to_dict(), indent=1, sort_keys=False) + "\n"


def loads(text, validate=True):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno) from None
    try:
        s = from_dict(doc)
    except MalformedCell as e:
        raise ValidationFailed(Report([Check("MalformedCell", False, cell=e.cell_id, detail=e.reason)])) from e
    if validate:
        rep, r1, r2 = validate_scenario(s)
        if not rep.passed:
            raise ValidationFailed(rep)
    return s


def load(path, validate=True):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ScenarioIOError(f"cannot read {path}: {e.strerror}") from e
    return loads(text, validate)


def save(s, path):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(s))
    except OSError as e:
        raise ScenarioIOError(f"cannot write {path}: {e.strerror}") from e
