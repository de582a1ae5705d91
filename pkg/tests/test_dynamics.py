import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strataflow import dynamics
from strataflow.dynamics import (
    Partition,
    SelectionPolicy,
    Trajectory,
    euler_arc,
    filippov_reconstruct,
    realize_velocity,
    reachable_quotient,
    stratum_descent,
    switching_simulate,
    validate_trajectory,
)
from strataflow.errors import DescentFailed, EscapeBeforeEnd, PolicyViolation
from strataflow.geometry import Box, CellComplex
from strataflow.scenarios import BOX
from strataflow.setvalued import VelocityField, VertexMap, VPolytope
from strataflow.zeno import dyadic, table_policy_rows, zeno_trajectory


def _single_cell(field_vertices=None, maps=None):
    cx = CellComplex.from_constraints(Box(*BOX), [(1, np.zeros((0, 2)), np.zeros(0), 2)])
    if maps is None:
        maps = {1: VPolytope.constant(field_vertices)}
    return cx, VelocityField(maps)


def test_partition_checks():
    p = Partition.uniform(2.0, 4)
    assert p.norm == pytest.approx(0.5)
    with pytest.raises(ValueError):
        Partition([0.0])
    with pytest.raises(ValueError):
        Partition([0.0, 1.0, 1.0])


def test_euler_arc_constant_field_is_exact_line():
    cx, f = _single_cell([[0.5, -0.25]])
    tr = euler_arc(f, cx, 1, (1, 1), 2.0, Partition.uniform(2.0, 8), SelectionPolicy.vertex(0))
    np.testing.assert_allclose(tr.states, (1, 1) + tr.times[:, None] * np.array([0.5, -0.25]), atol=1e-14)
    assert tr.escape is None
    assert max(tr.diagnostics["projection_displacement"]) == 0


def test_euler_arc_half_axis_escape(ex1):
    tr = euler_arc(ex1.field, ex1.complex, 3, (-1, 0), 1.0, Partition.uniform(1.0, 10), SelectionPolicy.vertex(0))
    assert tr.escape[1] == "boundary"
    assert tr.escape[0] == pytest.approx(1.0)
    np.testing.assert_allclose(tr.final, (0, 0), atol=1e-12)
    assert tr.strata[-1] == 5


def test_euler_arc_zeno_dip_escape(zeno):
    tr = euler_arc(zeno.field, zeno.complex, 1, (0, 1), 1.0, Partition.uniform(1.0, 20), SelectionPolicy.vertex(0))
    np.testing.assert_allclose(tr.velocities[0], (1, -1))
    assert tr.escape[1] == "boundary"
    np.testing.assert_allclose(tr.final, (1, 0), atol=1e-12)


def test_euler_arc_projection_displacement_is_small(zeno):
    tr = euler_arc(zeno.field, zeno.complex, 1, (0, 0.33), 1.0, Partition.uniform(1.0, 10), SelectionPolicy.vertex(0))
    assert tr.escape is not None
    assert max(tr.diagnostics["projection_displacement"]) <= 1.0 * tr.diagnostics["mesh"] + 1e-12


def test_policy_violation(ex1):
    bad = SelectionPolicy.from_table([(0, 1, (2, 0))], default=(2, 0))
    with pytest.raises(PolicyViolation):
        euler_arc(ex1.field, ex1.complex, 3, (-1, 0), 1.0, Partition.uniform(1.0, 4), bad)


def test_switching_slides_to_origin(ex1):
    tr = switching_simulate(ex1.field, ex1.complex, (-2, 0), 4.0, 0.1, SelectionPolicy.min_norm())
    np.testing.assert_allclose(tr.state_at(2.0), (0, 0), atol=1e-12)
    np.testing.assert_allclose(tr.final, (0, 0), atol=1e-12)
    assert set(tr.strata) == {3, 5}


def test_switching_falls_then_slides(ex1):
    tr = switching_simulate(ex1.field, ex1.complex, (1, 1), 3.0, 0.05, SelectionPolicy.min_norm())
    np.testing.assert_allclose(tr.state_at(1.0), (1, 0), atol=1e-12)
    np.testing.assert_allclose(tr.state_at(2.0), (0, 0), atol=1e-12)
    np.testing.assert_allclose(tr.final, (0, 0), atol=1e-12)
    assert [s for k, s in enumerate(tr.strata) if k == 0 or s != tr.strata[k - 1]] == [1, 4, 5]


def test_switching_table_replays_zeno_arc(zeno):
    T, h = 1.0, 1e-3
    intervals = dyadic(8)
    ref = zeno_trajectory("EX2", intervals, T)
    pol = SelectionPolicy.from_table(table_policy_rows("EX2", intervals, T), default=(1, 0))
    tr = switching_simulate(zeno.field, zeno.complex, (0, 0), T, h, pol)
    for t in np.linspace(0, T, 41):
        assert np.linalg.norm(tr.state_at(t) - ref.state_at(t)) <= h
    assert validate_trajectory(zeno.field, zeno.complex, tr).rho <= 1e-12


def _strips():
    """Vertical strips separated by the lines x1 = -4..4, drifting right."""
    cells, maps = [], {}
    cuts = list(range(-4, 5))
    for k, c in enumerate(cuts):
        cells.append((2 * k + 1, [[1, 0], [-1, 0]], [c, -c], 1))
        maps[2 * k + 1] = VPolytope.constant([[0, 0]])
    edges = [-5] + cuts + [5]
    for k, (a, b) in enumerate(zip(edges, edges[1:])):
        rows, rhs = [], []
        if a > -5:
            rows.append([-1, 0]); rhs.append(-a)
        if b < 5:
            rows.append([1, 0]); rhs.append(b)
        cells.append((100 + k, rows, rhs, 2))
        maps[100 + k] = VPolytope.constant([[1, 0]])
    cx = CellComplex.from_constraints(Box(*BOX), cells)
    return cx, VelocityField(maps)


_RIGHTMOST = SelectionPolicy.aim(lambda x, t, V: -V[:, 0])


def test_stall_guard_logs_and_finishes(monkeypatch, caplog):
    cx, f = _strips()
    monkeypatch.setattr(dynamics, "EVENT_CAP", 3)
    caplog.set_level(logging.WARNING, logger="strataflow.dynamics")
    tr = switching_simulate(f, cx, (-4.5, 0), 6.0, 6.0, _RIGHTMOST)
    assert tr.diagnostics["stalls"] == [6.0]
    assert "StallDetected" in caplog.text
    assert tr.escape is None
    assert tr.times[-1] == pytest.approx(6.0)
    np.testing.assert_allclose(tr.final, (1.5, 0))


def test_face_crossings_are_exact():
    cx, f = _strips()
    tr = switching_simulate(f, cx, (-4.5, 0), 6.0, 6.0, _RIGHTMOST)
    assert tr.diagnostics["events"] == 6
    assert {float(x) for x in tr.states[1:-1, 0]} == {-4.0, -3.0, -2.0, -1.0, 0.0, 1.0}
    assert validate_trajectory(f, cx, tr).rho == 0


def test_switching_records_box_escape():
    cx, f = _single_cell([[1, 0]])
    tr = switching_simulate(f, cx, (4, 0), 3.0, 0.3, SelectionPolicy.vertex(0))
    assert tr.escape[1] == "box"
    assert tr.escape[0] == pytest.approx(1.0)
    np.testing.assert_allclose(tr.final, (5, 0))


def test_validate_trajectory_examples(ex1):
    cx, f = _single_cell([[1, 2]])
    tr = switching_simulate(f, cx, (0, 0), 1.0, 0.1, SelectionPolicy.vertex(0))
    assert validate_trajectory(f, cx, tr).rho == 0
    T = 2.0
    t = np.linspace(0, T, 5)
    X = np.column_stack([-4.5 + 2 * t, np.zeros_like(t)])
    bad = Trajectory(t, X, np.tile((2.0, 0.0), (4, 1)), tuple(3 for _ in t))
    res = validate_trajectory(ex1.field, ex1.complex, bad)
    assert res.rho == pytest.approx(T * 1.0)
    assert not res.passed


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["example1", "zeno", "ex3"]), st.floats(-4, 4), st.floats(-4, 4), st.integers(0, 10 ** 6))
def test_switching_output_is_a_valid_solution(name, a, b, seed):
    from strataflow.scenarios import builtin

    sc = _SCENARIOS.setdefault(name, builtin(name))
    tr = switching_simulate(sc.field, sc.complex, (a, b), 1.0, 0.05, SelectionPolicy.random(seed))
    assert validate_trajectory(sc.field, sc.complex, tr).rho <= 1e-9
    steps = np.diff(tr.states, axis=0) - np.diff(tr.times)[:, None] * tr.velocities
    assert np.max(np.abs(steps), initial=0) <= 1e-12


_SCENARIOS = {}


def _bumped(v, rho, T=1.0, n=200, seed=0):
    """Straight arc along v with a velocity bump whose total integral is rho."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0, T, n + 1)
    dt = np.diff(t)
    w = rng.random(n)
    w = w / np.sum(w * dt) * rho
    u = rng.standard_normal(2)
    u /= np.linalg.norm(u)
    vel = np.array(v) + w[:, None] * u
    X = np.vstack([[0.0, 0.0], np.cumsum(dt[:, None] * vel, axis=0)])
    return Trajectory(t, X, vel, tuple(1 for _ in t))


def test_filippov_exact_arc_returns_itself():
    cx, f = _single_cell([[1, 0], [0, 1]])
    y = switching_simulate(f, cx, (0, 0), 1.0, 0.1, SelectionPolicy.vertex(1))
    z, bound = filippov_reconstruct(f, cx, 1, y)
    np.testing.assert_allclose(z.states, y.states, atol=1e-14)
    assert np.max(bound) == 0


def test_filippov_bump_bound_is_rho():
    cx, f = _single_cell([[1, 0]])
    y = _bumped((1, 0), 0.1)
    z, bound = filippov_reconstruct(f, cx, 1, y)
    assert bound[-1] == pytest.approx(0.1)
    assert np.max(np.linalg.norm(y.states - z.states, axis=1)) <= 0.1 + 1e-9


def test_filippov_bound_random_constant_fields():
    rng = np.random.default_rng(7)
    for k in range(100):
        V = rng.uniform(-1, 1, (int(rng.integers(1, 4)), 2))
        cx, f = _single_cell(V)
        y = _bumped(V[0], float(rng.uniform(0, 0.3)), n=50, seed=k)
        z, bound = filippov_reconstruct(f, cx, 1, y)
        sup = np.max(np.linalg.norm(y.states - z.states, axis=1))
        assert sup <= bound[-1] + 1e-9


def _affine_field():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return _single_cell(maps={1: VPolytope((VertexMap(A, [1, 0]),))})


def test_filippov_affine_t_squared_law():
    cx, f = _affine_field()
    x = np.array([0.5, 0.5])
    v = f[1].at(x).vertices[0]
    k = f.lipschitz_k
    errs = []
    for T in (0.1, 0.05, 0.025):
        t = np.linspace(0, T, 101)
        y = Trajectory(t, x + t[:, None] * v, np.tile(v, (100, 1)), tuple(1 for _ in t))
        z, bound = filippov_reconstruct(f, cx, 1, y)
        e = np.max(np.linalg.norm(y.states - z.states, axis=1))
        assert e <= 0.5 * k * np.linalg.norm(v) * np.exp(k * T) * T ** 2 + 1e-12
        errs.append(e)
    for a, b in zip(errs, errs[1:]):
        assert 3.2 <= a / b <= 4.8


def test_filippov_escape_before_end(ex1):
    t = np.linspace(0, 1, 11)
    y = Trajectory(t, np.column_stack([-0.5 + t, 0 * t]), np.tile((1.0, 0.0), (10, 1)), tuple(3 for _ in t))
    with pytest.raises(EscapeBeforeEnd) as e:
        filippov_reconstruct(ex1.field, ex1.complex, 3, y)
    assert e.value.time == pytest.approx(0.5)


def test_stratum_descent_examples(ex1, zeno):
    assert stratum_descent(zeno.field, zeno.complex, (0, 0), (1, 0), start=3) == [3]
    assert stratum_descent(zeno.field, zeno.complex, (0, 0), (1, 0))[-1] == 3
    assert stratum_descent(zeno.field, zeno.complex, (0, 0), (1, 1)) == [1]
    chain = stratum_descent(ex1.field, ex1.complex, (0, 0), (0, 0))
    assert chain[-1] == 5
    with pytest.raises(DescentFailed):
        stratum_descent(ex1.field, ex1.complex, (0, 0), (1, 0))


def test_stratum_descent_from_a_higher_cell(zeno):
    # (1, 0) is a boundary direction of the upper half-plane, carried by the axis velocity set
    chain = stratum_descent(zeno.field, zeno.complex, (0, 0), (0.5, 0), start=1)
    assert chain == [1, 3]


def test_realize_velocity_examples(ex1, zeno):
    z = realize_velocity(zeno.field, zeno.complex, (0, 0), (-1, 0), 1e-3, steps=10)
    assert set(z.strata[1:]) == {3}
    fd = (z.final - z.states[0]) / z.times[-1]
    assert np.linalg.norm(fd - (-1, 0)) <= 1e-6
    z = realize_velocity(ex1.field, ex1.complex, (3, 0), (-1, 0), 0.5)
    np.testing.assert_allclose(z.final, (2.5, 0), atol=1e-12)
    z = realize_velocity(ex1.field, ex1.complex, (0, 0), (0, 0), 0.5)
    assert np.all(z.states == 0)


def test_realize_velocity_affine_finite_difference():
    cx, f = _affine_field()
    x = np.array([0.2, -0.1])
    v = f[1].at(x).vertices[0]
    for T in (1e-2, 1e-3):
        z = realize_velocity(f, cx, x, v, T)
        fd = (z.final - x) / T
        assert np.linalg.norm(fd - v) <= 0.5 * f.lipschitz_k * np.linalg.norm(v) * np.exp(T) * T + 1e-9


def test_reachable_quotient_examples(ex1):
    assert reachable_quotient(ex1.field, ex1.complex, (0, 0), 1e-3, n_samples=10) <= 1e-9
    cx, f = _single_cell([[0.3, -0.7]])
    assert reachable_quotient(f, cx, (1, 1), 0.5, n_samples=3) <= 1e-12


def test_trajectory_csv_format():
    t = np.array([0.0, 0.1, 0.30000000000000004])
    X = np.array([[0, 0], [1 / 3, 2], [1, -1e-300]])
    tr = Trajectory(t, X, np.zeros((2, 2)), (1, 2, 3))
    text = tr.csv_text()
    lines = text.split("\n")
    assert lines[0] == "t,x0,x1,stratum"
    assert len(lines) == 5 and lines[-1] == ""
    assert "\r" not in text
    row = lines[2].split(",")
    assert float(row[1]) == 1 / 3 and row[3] == "2"
    assert float(lines[3].split(",")[0]) == 0.30000000000000004
