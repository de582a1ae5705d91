"""Command-line front end.

Exit codes: 0 success or PASS, 2 usage error, 3 verification FAIL,
4 invalid scenario, 5 I/O error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import scenarios
from .dynamics import SelectionPolicy, switching_simulate, validate_trajectory
from .errors import BadIntervals, ParseError, ScenarioIOError, StrataflowError, ValidationFailed
from .invariance import (
    HJMode,
    check_hj,
    falsify_strong,
    sample_in_target,
    synthesize_weak_invariant,
    verify_growth,
)
from .zeno import parse_intervals, zeno_trajectory

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_FAIL, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="strataflow", description="Simulate and verify set-valued dynamics on stratified polyhedral domains.")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--builtin", help="example1 | zeno | ex3")
        g.add_argument("--scenario", help="path to a scenario JSON file")

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (falls back to STRATAFLOW_SEED)")
        sp.add_argument("--out", help="output file (stdout when omitted)")
        sp.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")

    r = sub.add_parser("run", help="simulate and export a trajectory as CSV")
    scenario_args(r)
    common(r)
    r.add_argument("--x0", required=True, help="start point, comma separated")
    r.add_argument("--T", type=float, default=1.0)
    r.add_argument("--steps", type=int, default=100)
    r.add_argument("--policy", default="min_norm", help="min_norm | vertex[:k] | random")

    v = sub.add_parser("verify", help="invariance check with a trajectory cross-check")
    scenario_args(v)
    common(v)
    v.add_argument("--target", required=True)
    v.add_argument("--mode", choices=[m.value for m in HJMode])
    v.add_argument("--kappa", type=float, default=None)
    v.add_argument("--samples", type=int, default=8)
    v.add_argument("--T", type=float, default=1.0)
    v.add_argument("--steps", type=int, default=100)
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--tol", type=float, default=1e-9)
    v.add_argument("--threads", type=int, default=1)

    z = sub.add_parser("zeno", help="closed-form Zeno arc as CSV")
    common(z)
    z.add_argument("--variant", choices=["ex2", "ex3"], default="ex2")
    z.add_argument("--intervals", default="dyadic:20")
    z.add_argument("--T", default="2")
    z.add_argument("--steps", type=int, default=100, help="uniform output grid added to the breakpoints")

    va = sub.add_parser("validate", help="run the complex and dynamics validators")
    scenario_args(va)
    common(va)

    i = sub.add_parser("info", help="scenario summary")
    scenario_args(i)
    common(i)
    return p


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("STRATAFLOW_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"STRATAFLOW_SEED must be an integer, got {env!r}") from None


def _scenario(args, validate=True):
    if args.builtin:
        return scenarios.builtin(args.builtin)
    return scenarios.load(args.scenario, validate=validate)


def _emit(args, text):
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as e:
            raise ScenarioIOError(f"cannot write {args.out}: {e.strerror}") from e
    else:
        sys.stdout.write(text)


def _json(obj):
    return json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _check_horizon(args):
    if not args.T > 0:
        raise UsageError("--T must be positive")
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")


def _policy(text, seed):
    if text == "min_norm":
        return SelectionPolicy.min_norm()
    if text == "random":
        return SelectionPolicy.random(seed)
    if text.startswith("vertex"):
        try:
            k = int(text.split(":", 1)[1]) if ":" in text else 0
        except ValueError:
            raise UsageError(f"bad vertex index in {text!r}") from None
        return SelectionPolicy.vertex(k)
    raise UsageError(f"unknown policy {text!r}")


def cmd_run(args):
    _check_horizon(args)
    s = _scenario(args)
    try:
        x0 = np.array([float(a) for a in args.x0.split(",")])
    except ValueError:
        raise UsageError(f"bad --x0 {args.x0!r}") from None
    if x0.size != s.complex.N:
        raise UsageError(f"--x0 needs {s.complex.N} coordinates")
    tr = switching_simulate(s.field, s.complex, x0, args.T, args.T / args.steps, _policy(args.policy, _seed(args)))
    if args.json:
        res = validate_trajectory(s.field, s.complex, tr)
        if args.out:
            _emit(args, tr.csv_text())
        sys.stdout.write(_json({"nodes": len(tr), "final": tr.final, "escape": tr.escape,
                                "residual": res.rho, "events": tr.diagnostics["events"]}))
    else:
        _emit(args, tr.csv_text())
    return EXIT_OK


def cmd_verify(args):
    if args.mode is None:
        raise UsageError("verify needs --mode")
    _check_horizon(args)
    seed = _seed(args)
    s = _scenario(args)
    C = s.target(args.target)
    mode = HJMode(args.mode)
    rep = check_hj(s.field, s.complex, C, mode, n_samples=args.samples, seed=seed, kappa=args.kappa, tol=args.tol)
    h = args.T / args.steps
    out = rep.to_dict()
    ok = rep.passed
    if mode is HJMode.STRONG:
        tr = falsify_strong(s.field, s.complex, C, args.T, h, args.trials, seed=seed, threads=args.threads)
        out["falsification"] = {"trials": args.trials, "h": h,
                                "exit_found": tr is not None,
                                "max_distance": None if tr is None else tr.diagnostics["max_distance"],
                                "start": None if tr is None else tr.states[0].tolist()}
        ok = ok and tr is None
    elif mode is HJMode.SI_SUFF:
        rng = np.random.default_rng(seed)
        starts = np.array([sample_in_target(C, s.complex, rng) for _ in range(10)])
        g = verify_growth(s.field, s.complex, C, starts, args.T, h, n_policies=2, seed=seed, threads=args.threads)
        out["growth"] = g.to_dict()
        ok = ok and g.passed
    elif rep.passed:
        rng = np.random.default_rng(seed)
        dmax = 0.0
        for _ in range(5):
            tr = synthesize_weak_invariant(s.field, s.complex, C, sample_in_target(C, s.complex, rng), args.T, h)
            dmax = max(dmax, tr.diagnostics["max_distance"])
        out["synthesis"] = {"starts": 5, "h": h, "max_distance": dmax}
    out["pass"] = bool(ok)
    text = _json(out)
    if args.out:
        _emit(args, text)
    if args.json or not args.out:
        sys.stdout.write(text)
    print(f"{mode.value} invariance of {args.target!r}: {'PASS' if ok else 'FAIL'}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_zeno(args):
    if args.steps < 0:
        raise UsageError("--steps must be nonnegative")
    tr = zeno_trajectory(args.variant, parse_intervals(args.intervals), args.T, steps=args.steps or None)
    _emit(args, tr.csv_text())
    if args.json:
        sys.stdout.write(_json({"nodes": len(tr), "variant": args.variant, "final": tr.final}))
    return EXIT_OK


def cmd_validate(args):
    s = _scenario(args, validate=False)
    rep, _, _ = scenarios.validate_scenario(s)
    text = _json(rep.to_dict())
    if args.out:
        _emit(args, text)
    if args.json or not args.out:
        sys.stdout.write(text)
    if not rep.passed:
        print(f"validation failed: {', '.join(rep.failed_axioms())}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_info(args):
    s = _scenario(args, validate=False)
    summ = s.summary()
    if args.json:
        _emit(args, _json(summ))
    else:
        lines = [f"{summ['name']}: N={summ['N']}, {len(summ['cells'])} cells, k={summ['k']:g}, r={summ['r']:g}"]
        lines += [f"  cell {c['id']}: dim {c['dim']}, {c['vertices']} vertices, "
                  f"{c['velocity_vertices']} velocity vertices" for c in summ["cells"]]
        lines.append("  targets: " + ", ".join(summ["targets"]))
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "zeno": cmd_zeno, "validate": cmd_validate, "info": cmd_info}


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, BadIntervals) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationFailed, ParseError) as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        if isinstance(e, ValidationFailed) and getattr(args, "json", False):
            sys.stdout.write(_json(e.report.to_dict()))
        return EXIT_INVALID
    except ScenarioIOError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except StrataflowError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
