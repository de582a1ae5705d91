import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from strataflow.errors import MalformedCell, NoWitness, NotInClosure, OutOfBox
from strataflow.geometry import (
    Box,
    Cell,
    CellComplex,
    ConeClass,
    ConeRep,
    HPolyhedron,
    cone_classify,
    interior_margin,
    normal_cone,
    project_cell,
    rbdry_witness,
    tangent_cone,
    validate_complex,
)

BOX = Box([-5, -5], [5, 5])


def test_hpolyhedron_normalizes_rows():
    P = HPolyhedron([[3, 4], [0, 0]], [10, 1])
    assert P.A.shape == (1, 2)
    np.testing.assert_allclose(np.linalg.norm(P.A, axis=1), 1.0)
    np.testing.assert_allclose(P.b, [2.0])
    Q = HPolyhedron(P.A, P.b)
    assert np.array_equal(Q.A, P.A) and np.array_equal(Q.b, P.b)


def test_infeasible_zero_row_is_kept_as_empty():
    P = HPolyhedron([[0, 0]], [-1])
    assert not P.contains([0, 0])
    with pytest.raises(MalformedCell):
        Cell.build(7, P, BOX)


def test_cell_dimension_and_span(ex1):
    dims = [c.dim for c in ex1.complex.cells]
    assert dims == [2, 2, 1, 1, 0]
    c4 = ex1.complex.cell(4)
    assert abs(abs(c4.span[0, 0]) - 1) < 1e-12 and abs(c4.span[1, 0]) < 1e-12


def test_declared_dim_mismatch_is_malformed():
    with pytest.raises(MalformedCell) as e:
        Cell.build(3, HPolyhedron([[0, 1], [0, -1]], [0, 0]), BOX, dim=2)
    assert e.value.cell_id == 3


@pytest.mark.parametrize("x, cell", [((0, 1.5), 1), ((0, 0), 5), ((2.5, 0), 4), ((-1, 0), 3), ((2, -1), 2)])
def test_locate_example1(ex1, x, cell):
    assert ex1.complex.locate(x) == cell


def test_locate_out_of_box(ex1):
    with pytest.raises(OutOfBox):
        ex1.complex.locate((6, 0))
    # within tolerance of the box face is still located
    assert ex1.complex.locate((5 + 1e-10, 1)) == 1


def test_tangent_cone_examples(ex1):
    cx = ex1.complex
    K = tangent_cone(cx.cell(4), (0, 0))
    assert K.contains((1, 0)) and not K.contains((-1, 0)) and not K.contains((0, 1))
    K = tangent_cone(cx.cell(1), (1, 0))
    assert K.contains((3, 0)) and K.contains((-2, 1)) and not K.contains((0, -1))
    K = tangent_cone(cx.cell(1), (0, 1))
    assert K.lineality_dim == 2
    with pytest.raises(NotInClosure):
        tangent_cone(cx.cell(1), (0, -1))


def test_normal_cone_examples(ex1):
    cx = ex1.complex
    Nc = normal_cone(cx.cell(1), (1, 0))
    assert Nc.contains((0, -2)) and not Nc.contains((0, 1)) and not Nc.contains((1, -1))
    assert Nc.lineality_dim == 0
    Nc = normal_cone(cx.cell(4), (2, 0))
    assert Nc.lineality_dim == 1
    assert Nc.contains((0, 3)) and Nc.contains((0, -3)) and not Nc.contains((1, 0))
    Nc = normal_cone(cx.cell(5), (0, 0))
    assert Nc.lineality_dim == 2


def test_cone_classify_examples(ex1):
    cx = ex1.complex
    K = tangent_cone(cx.cell(1), (0, 0))
    assert cone_classify(K, (1, 0)) is ConeClass.RBDRY
    assert cone_classify(K, (0, 1)) is ConeClass.RINT
    assert interior_margin(K, (0, 1)) == pytest.approx(1.0)
    assert cone_classify(K, (0, -1)) is ConeClass.OUTSIDE
    K4 = tangent_cone(cx.cell(4), (0, 0))
    assert cone_classify(K4, (1, 0)) is ConeClass.RINT
    assert cone_classify(K4, (1, 1)) is ConeClass.OUTSIDE


@pytest.mark.parametrize("cell, x, expected", [(4, (2, 3), (2, 0)), (4, (-1, 1), (0, 0)), (1, (5, -2), (5, 0))])
def test_project_cell_examples(ex1, cell, x, expected):
    np.testing.assert_allclose(project_cell(ex1.complex.cell(cell), x), expected, atol=1e-12)


def _slsqp_projection(cell, x):
    A, b = cell.closure.A, cell.closure.b
    res = minimize(lambda z: 0.5 * np.sum((z - x) ** 2), cell.origin, jac=lambda z: z - x,
                   constraints=[{"type": "ineq", "fun": lambda z: b - A @ z, "jac": lambda z: -A}],
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    return res.x


def _random_cell(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(3, 7))
    A = rng.standard_normal((m, 2))
    b = rng.uniform(0.5, 2.0, m)
    return Cell.build(0, HPolyhedron(A, b), BOX)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(-6, 6), min_size=2, max_size=2))
def test_project_cell_matches_independent_solver(seed, x):
    cell = _random_cell(seed)
    x = np.array(x)
    p = project_cell(cell, x)
    q = _slsqp_projection(cell, x)
    assert cell.in_closure(p, 1e-9)
    assert np.linalg.norm(p - x) <= np.linalg.norm(q - x) + 1e-7


def test_project_cell_idempotent_and_nonexpansive(rng):
    cells = [_random_cell(s) for s in range(10)]
    for _ in range(1000):
        c = cells[int(rng.integers(len(cells)))]
        x, y = rng.uniform(-6, 6, (2, 2))
        px, py = project_cell(c, x), project_cell(c, y)
        np.testing.assert_allclose(project_cell(c, px), px, atol=1e-12)
        assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12


def _boundary_cones(cx, rng):
    out = []
    for c in cx.cells:
        pts = list(c.vertices) + [c.origin]
        W = rng.dirichlet(np.ones(len(c.vertices)), 4) if len(c.vertices) > 1 else np.zeros((0, 0))
        pts += list(W @ c.vertices) if W.size else []
        for x in pts:
            out.append(tangent_cone(c, x))
    return out


def test_polarity_round_trip(ex1, ex3, rng):
    D = rng.standard_normal((64, 2))
    for sc in (ex1, ex3):
        for K in _boundary_cones(sc.complex, rng):
            KK = K.polar().polar()
            for d in D:
                np.testing.assert_allclose(K.project(d), KK.project(d), atol=1e-9)
            assert K.verify()


def test_cone_classify_is_a_partition_and_rint_has_margin(ex1, ex3, rng):
    cones = _boundary_cones(ex1.complex, rng) + _boundary_cones(ex3.complex, rng)
    for _ in range(1000):
        K = cones[int(rng.integers(len(cones)))]
        v = rng.standard_normal(2)
        if rng.random() < 0.5:
            v = K.project(v)
        label = cone_classify(K, v)
        assert label in ConeClass
        if label is ConeClass.RINT:
            mu = min(interior_margin(K, v), 1.0)
            for th in np.linspace(0, 2 * np.pi, 16, endpoint=False):
                u = K.span @ (K.span.T @ np.array([np.cos(th), np.sin(th)]))
                if np.linalg.norm(u) > 1e-12:
                    u = u / np.linalg.norm(u)
                assert K.contains(v + 0.5 * mu * u)
        elif label is ConeClass.OUTSIDE:
            assert not K.contains(v)
        else:
            assert K.contains(v, 1e-8)


def test_cone_lineality_and_generators():
    K = ConeRep(np.array([[0.0, -1.0]]), np.eye(2))
    assert K.lineality_dim == 1 and K.dim == 2
    assert K.polar().lineality_dim == 0
    np.testing.assert_allclose(K.polar().V, [[0, -1]], atol=1e-12)


def test_validate_complex_example1(ex1):
    rep = validate_complex(ex1.complex)
    assert rep.passed, rep.to_dict()
    assert {c.axiom for c in rep.checks} >= {"partition", "frontier", "relatively_wedged"}


def test_validate_trivial_complex():
    cx = CellComplex.from_constraints(BOX, [(1, np.zeros((0, 2)), np.zeros(0), 2)])
    assert validate_complex(cx).passed
    assert cx.locate((4.9, -4.9)) == 1


def test_validate_detects_overlap():
    cx = CellComplex.from_constraints(BOX, [(1, [[1, 0]], [1], 2), (2, [[-1, 0]], [1], 2)])
    rep = validate_complex(cx)
    assert "partition" in rep.failed_axioms()
    x = np.array(rep.failures("partition")[0].witness["x"])
    assert cx.cell(1).in_rint(x) and cx.cell(2).in_rint(x)


def test_validate_detects_frontier_violation():
    # the whole x2-axis is one cell, yet the closure of the upper-right quadrant only holds half of it
    cells = [
        (1, [[1, 0]], [0], 2),
        (2, [[1, 0], [-1, 0]], [0, 0], 1),
        (3, [[-1, 0], [0, -1]], [0, 0], 2),
        (4, [[-1, 0], [0, 1]], [0, 0], 2),
        (5, [[0, 1], [0, -1], [-1, 0]], [0, 0, 0], 1),
    ]
    cx = CellComplex.from_constraints(BOX, cells)
    rep = validate_complex(cx)
    assert rep.failed_axioms() == ["frontier"]
    bad = rep.failures("frontier")[0]
    assert bad.witness["cells"][1] == 2


@pytest.mark.parametrize("v, expected", [((1, 0), 4), ((-1, 0), 3), ((0, 0), 5)])
def test_rbdry_witness_examples(ex1, v, expected):
    j = rbdry_witness(ex1.complex, 1, (0, 0), v)
    assert j == expected
    cj = ex1.complex.cell(j)
    assert cj.dim < 2 and tangent_cone(cj, (0, 0)).contains(v)


def test_rbdry_witness_rejects_interior_point(ex1):
    with pytest.raises(NoWitness):
        rbdry_witness(ex1.complex, 1, (0, 1), (1, 0))


def test_subcells_follow_frontier(ex1, ex3):
    for sc in (ex1, ex3):
        cx = sc.complex
        for i, subs in cx.subcells.items():
            for j in subs:
                assert all(cx.cell(i).in_closure(v, 1e-8) for v in cx.cell(j).vertices)
                assert cx.cell(j).dim < cx.cell(i).dim


def test_signature_identifies_active_rows(ex1):
    cx = ex1.complex
    assert cx.signature((1, 0)) == cx.signature((2, 0))
    assert cx.signature((1, 0)) != cx.signature((0, 0))


_COMPLEXES = {}


def _builtin_complex(name):
    from strataflow.scenarios import builtin

    if name not in _COMPLEXES:
        _COMPLEXES[name] = builtin(name).complex
    return _COMPLEXES[name]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["example1", "zeno", "ex3"]),
       st.one_of(st.floats(-5, 5), st.just(0.0)), st.one_of(st.floats(-5, 5), st.just(0.0)))
def test_locate_is_unique_everywhere(name, x1, x2):
    assert len(_builtin_complex(name).locate_all((x1, x2))) == 1
