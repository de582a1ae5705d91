"""Closed-form Zeno arcs in exact rational arithmetic.

Both variants integrate a piecewise-constant velocity whose second component
follows a three-piece +1/-1/+1 profile on each interval of a family. ``EX2``
fills whole intervals and rides the axis with ``(1, 0)`` elsewhere; ``EX3``
uses the first four fifths of each interval and slides back with ``(-1, 0)``
on the rest, including the tail before the smallest interval.
"""

from __future__ import annotations

import json
from fractions import Fraction

import numpy as np

from .dynamics import Trajectory
from .errors import BadIntervals

Q = Fraction

UP, DOWN = (Q(1), Q(1)), (Q(1), Q(-1))
RIGHT, LEFT = (Q(1), Q(0)), (Q(-1), Q(0))


def dyadic(n):
    """``(2^-m, 2^-m+1)`` for m = 1..n."""
    return [(Q(1, 2 ** m), Q(2, 2 ** m)) for m in range(1, n + 1)]


def parse_intervals(text):
    """``dyadic:n`` or a JSON list of ``[a, b]`` pairs (numbers or decimal strings)."""
    text = text.strip()
    if text.startswith("dyadic:"):
        try:
            n = int(text.split(":", 1)[1])
        except ValueError:
            raise BadIntervals(f"bad dyadic count in {text!r}") from None
        if n < 1:
            raise BadIntervals("dyadic count must be positive")
        return dyadic(n)
    try:
        raw = json.loads(text)
        return [(Q(str(a)), Q(str(b))) for a, b in raw]
    except (ValueError, TypeError) as e:
        raise BadIntervals(f"cannot parse intervals: {e}") from None


def check_intervals(intervals, T):
    iv = sorted((Q(a), Q(b)) for a, b in intervals)
    T = Q(T)
    for a, b in iv:
        if not (0 <= a < b <= T):
            raise BadIntervals(f"interval ({a}, {b}) is empty or not inside (0, {T}]")
    for (a0, b0), (a1, b1) in zip(iv, iv[1:]):
        if b0 > a1:
            raise BadIntervals(f"intervals ({a0}, {b0}) and ({a1}, {b1}) overlap")
    return iv


def _profile(variant, a, b):
    if variant == "EX2":
        q1, q3 = (3 * a + b) / 4, (a + 3 * b) / 4
        return [(a, q1, UP), (q1, q3, DOWN), (q3, b, UP)]
    p1, p2, p3 = (4 * a + b) / 5, (2 * a + 3 * b) / 5, (a + 4 * b) / 5
    return [(a, p1, UP), (p1, p2, DOWN), (p2, p3, UP), (p3, b, LEFT)]


def velocity_pieces(variant, intervals, T):
    """Exact ``(t0, t1, v)`` pieces covering ``[0, T]``."""
    variant = variant.upper()
    if variant not in ("EX2", "EX3"):
        raise BadIntervals(f"unknown variant {variant!r}")
    off = RIGHT if variant == "EX2" else LEFT
    T = Q(T)
    out = []
    t = Q(0)
    for a, b in check_intervals(intervals, T):
        if a > t:
            out.append((t, a, off))
        out.extend(_profile(variant, a, b))
        t = b
    if t < T:
        out.append((t, T, off))
    return out


def _split(pieces, cuts):
    """Integrate the pieces from the origin, splitting at axis crossings and at ``cuts``."""
    cuts = sorted(set(cuts))
    x = (Q(0), Q(0))
    nodes = [(Q(0), x)]
    vels = []
    ci = 0
    for t0, t1, v in pieces:
        inner = []
        for k in range(2):
            if v[k] != 0:
                s = t0 - x[k] / v[k]
                if t0 < s < t1:
                    inner.append(s)
        while ci < len(cuts) and cuts[ci] <= t0:
            ci += 1
        j = ci
        while j < len(cuts) and cuts[j] < t1:
            inner.append(cuts[j])
            j += 1
        t = t0
        for s in sorted(set(inner)) + [t1]:
            x = (x[0] + (s - t) * v[0], x[1] + (s - t) * v[1])
            nodes.append((s, x))
            vels.append(v)
            t = s
    return nodes, vels


def exact_locate(cx, p):
    """Stratum of an exact rational point, with no tolerance."""
    for c in cx.cells:
        ok = True
        for a, b, eq in zip(c.closure.A, c.closure.b, c.eq):
            r = sum(Q(float(ak)) * pk for ak, pk in zip(a, p)) - Q(float(b))
            if (eq and r != 0) or (not eq and r >= 0):
                ok = False
                break
        if ok:
            return c.id
    raise ValueError(f"point {p} is not located in any cell")


def zeno_trajectory(variant, intervals, T, steps=None, cx=None):
    """Exact Zeno arc; ``steps`` adds a uniform output grid of ``steps`` intervals."""
    variant = variant.upper()
    T = Q(str(T)) if not isinstance(T, Q) else T
    if T <= 0:
        raise BadIntervals("horizon must be positive")
    if cx is None:
        from .scenarios import builtin

        cx = builtin("ZENO" if variant == "EX2" else "EX3").complex
    pieces = velocity_pieces(variant, intervals, T)
    cuts = [T * k / steps for k in range(1, steps)] if steps else []
    nodes, vels = _split(pieces, cuts)
    times = [t for t, _ in nodes]
    states = [x for _, x in nodes]
    strata = tuple(exact_locate(cx, x) for x in states)
    seg_strata = tuple(exact_locate(cx, ((states[n][0] + states[n + 1][0]) / 2,
                                         (states[n][1] + states[n + 1][1]) / 2))
                       for n in range(len(vels)))
    return Trajectory(
        np.array([float(t) for t in times]),
        np.array([[float(c) for c in x] for x in states]),
        np.array([[float(c) for c in v] for v in vels]),
        strata,
        None,
        {"variant": variant, "intervals": len(check_intervals(intervals, T))},
        {"times": times, "states": states, "velocities": vels, "segment_strata": seg_strata},
    )


def _exact_member(F_vertices, v):
    """Exact membership of v in the hull of at most two rational vertices."""
    V = [tuple(Q(float(c)) for c in row) for row in F_vertices]
    if len(V) == 1:
        return V[0] == tuple(v)
    if len(V) == 2:
        p, q = V
        d = (q[0] - p[0], q[1] - p[1])
        w = (v[0] - p[0], v[1] - p[1])
        if d[0] * w[1] - d[1] * w[0] != 0:
            return False
        dd = d[0] * d[0] + d[1] * d[1]
        s = (w[0] * d[0] + w[1] * d[1]) / dd
        return 0 <= s <= 1
    raise ValueError("exact membership is implemented for points and segments only")


def exact_residual(traj, field):
    """Total time spent with a velocity outside the stratum's set; exactly 0 for valid arcs."""
    ex = traj.exact
    total = Q(0)
    for n, v in enumerate(ex["velocities"]):
        j = ex["segment_strata"][n]
        F = field[j].at(np.zeros(2)).vertices
        if not _exact_member(F, v):
            total += ex["times"][n + 1] - ex["times"][n]
    return total


def time_fraction(traj, v, t_end):
    """Exact fraction of ``(0, t_end)`` during which the velocity equals v."""
    ex = traj.exact
    t_end = Q(t_end)
    v = tuple(Q(c) for c in v)
    hit = Q(0)
    for n, w in enumerate(ex["velocities"]):
        a, b = ex["times"][n], min(ex["times"][n + 1], t_end)
        if b > a and tuple(w) == v:
            hit += b - a
    return hit / t_end


def axis_average_velocity(traj, t_end):
    """Exact time-average of the velocity over pieces lying on the x1-axis before ``t_end``."""
    ex = traj.exact
    t_end = Q(t_end)
    acc = [Q(0), Q(0)]
    dur = Q(0)
    for n, w in enumerate(ex["velocities"]):
        a, b = ex["times"][n], min(ex["times"][n + 1], t_end)
        if b > a and ex["states"][n][1] == 0 and ex["states"][n + 1][1] == 0:
            acc = [acc[0] + (b - a) * w[0], acc[1] + (b - a) * w[1]]
            dur += b - a
    return (acc[0] / dur, acc[1] / dur) if dur else None


def table_policy_rows(variant, intervals, T):
    """Velocity pieces as float ``(t0, t1, v)`` rows for a TABLE selection policy."""
    return [(float(a), float(b), [float(c) for c in v]) for a, b, v in velocity_pieces(variant, intervals, T)]
