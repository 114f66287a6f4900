"""Command-line entry point.

Subcommands:

* ``simulate``: roll a scene forward and dump the trajectory as CSV.
* ``jacobian``: compute the per-step Jacobian blocks, optionally verifying
  them against a finite-difference oracle (exit code 2 on failure).
* ``benchmark``: per-scene, per-block timing of analytic Jacobians against
  central differences and Ridders' extrapolation, single-threaded.
* ``optimize``: run trajectory optimization and write the loss curve and
  control sequence.

Exit codes: 0 success, 1 error, 2 gradient-check failure, 3 diverged
optimization. All numeric output uses 17 significant digits so repeated
runs under the same ``--seed`` are byte-identical (benchmark timing columns
measure wall time and are exempt). ``NIMBLE_MINI_THREADS`` caps the worker
pool used for finite-difference columns; the default of 1 keeps every
command single-threaded.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from statistics import median

import numpy as np

from . import diffstep, engine, fdcheck, scenes, trajopt
from .collision import KindBoundaryError
from .dynamics import PARAMS_PER_BODY, WorldState
from .textio import format_float, write_blocks

JACOBIAN_LABELS = ("dq_dq", "dqdot_dq", "dq_dqd", "dqdot_dqd", "dqdot_dtau")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2
EXIT_DIVERGED = 3


def _write_out(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_controls(path, steps, n):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(x) for x in line.split(",")])
    controls = np.array(rows)
    if controls.shape != (steps, n):
        raise ValueError(
            f"controls file is {controls.shape}, expected ({steps}, {n})")
    return controls


def cmd_simulate(args) -> int:
    desc = scenes.resolve_scene(args.scene)
    world, state = desc.to_world()
    n = world.n
    controls = None
    if args.controls:
        controls = _load_controls(args.controls, args.steps, n)
    states, contexts = engine.simulate(world, state, args.steps,
                                       controls=controls,
                                       record_contexts=True)
    lines = [scenes.dump_header(n)]
    lines.append(scenes.dump_frame(0, 0.0, states[0], 0, 0.0))
    for i, ctx in enumerate(contexts, start=1):
        ncon = len(ctx.contacts)
        fn = 0.0
        if ctx.solution is not None:
            fn = float(np.sum(np.maximum(ctx.solution.f[0::3], 0.0)))
        lines.append(scenes.dump_frame(i, i * state.dt, states[i], ncon, fn))
    _write_out(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _context_at_step(world, state, at_step):
    states, contexts = engine.simulate(world, state, at_step + 1,
                                       record_contexts=True)
    return contexts[at_step]


def _oracle_blocks(world, ctx, method, include_mu=True):
    """Finite-difference oracle of the full step at ctx.state."""
    state = ctx.state
    n = world.n

    def run(q=None, qd=None, tau=None, skeleton=None):
        w = world if skeleton is None else engine.World(skeleton,
                                                        world.colliders)
        st = WorldState(q=state.q if q is None else q,
                        qd=state.qd if qd is None else qd,
                        tau=state.tau if tau is None else tau, dt=state.dt)
        nxt = engine.step(w, st).next_state
        return np.concatenate([nxt.q, nxt.qd])

    # steps small enough not to cross the contact-existence boundary
    h_state = 1e-4 * np.ones(n)
    h_tau = 1e-2 * np.maximum(1.0, np.abs(state.tau))
    if method == "ridders":
        diff = lambda fn, x, h: fdcheck.ridders(fn, x, h=h)[0]
    else:
        diff = lambda fn, x, h: fdcheck.central_difference(fn, x, h=h / 100.0)
    fq = diff(lambda q: run(q=q), state.q, h_state)
    fqd = diff(lambda qd: run(qd=qd), state.qd, h_state)
    ftau = diff(lambda t: run(tau=t), state.tau, h_tau)
    blocks = {
        "dq_dq": fq[:n], "dqdot_dq": fq[n:],
        "dq_dqd": fqd[:n], "dqdot_dqd": fqd[n:],
        "dqdot_dtau": ftau[n:],
    }
    if include_mu:
        mu0 = world.skeleton.inertial_params()
        h_mu = np.empty_like(mu0)
        for b, body in enumerate(world.skeleton.bodies):
            base = b * PARAMS_PER_BODY
            lam = float(np.linalg.eigvalsh(body.inertia.inertia).min())
            h_mu[base] = 1e-3 * body.inertia.mass
            h_mu[base + 1:base + 4] = 1e-3
            h_mu[base + 4:base + 10] = 0.05 * lam
        fmu = diff(lambda mu: run(
            skeleton=world.skeleton.with_inertial_params(mu)), mu0, h_mu)
        blocks["dqdot_dmu"] = fmu[n:]
    return blocks


def cmd_jacobian(args) -> int:
    desc = scenes.resolve_scene(args.scene)
    world, state = desc.to_world()
    ctx = _context_at_step(world, state, args.at_step)
    try:
        jac = diffstep.step_jacobians(world, ctx, compute_mu=True,
                                      tied_policy="clamping")
    except KindBoundaryError as exc:
        print(f"warning: contact kind boundary: {exc}", file=sys.stderr)
        return EXIT_ERROR
    analytic = jac.blocks()
    text = write_blocks(analytic)
    if args.check:
        oracle = _oracle_blocks(world, ctx, args.check)
        report = fdcheck.compare(analytic, oracle, args.tol)
        text += report.table() + "\n"
        _write_out(args.out, text)
        if not report.passed:
            for block in report.failing():
                print(f"check failed: {block.name} rel error "
                      f"{block.max_rel_error:.3e} > {block.tolerance:.3e}",
                      file=sys.stderr)
            return EXIT_CHECK_FAILED
        return EXIT_OK
    _write_out(args.out, text)
    return EXIT_OK


def _time_median(fn, repetitions):
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return median(times)


def benchmark_scene(world, state, repetitions, ridders_repetitions=3,
                    include_ridders=True):
    """Per-block timings (seconds) of one scene: analytic vs central vs
    Ridders differencing of the very same step implementation."""
    ctx = engine.step(world, state)
    n = world.n

    def run(q=None, qd=None, tau=None):
        st = WorldState(q=state.q if q is None else q,
                        qd=state.qd if qd is None else qd,
                        tau=state.tau if tau is None else tau, dt=state.dt)
        nxt = engine.step(world, st).next_state
        return np.concatenate([nxt.q, nxt.qd])

    h = 1e-5 * np.ones(n)
    families = {
        "q": (lambda q: run(q=q), state.q),
        "qd": (lambda qd: run(qd=qd), state.qd),
        "tau": (lambda t: run(tau=t), state.tau),
    }
    fam_of = {"dq_dq": "q", "dqdot_dq": "q", "dq_dqd": "qd",
              "dqdot_dqd": "qd", "dqdot_dtau": "tau"}

    analytic = {"All": _time_median(
        lambda: diffstep.step_jacobians(world, ctx, compute_mu=False),
        repetitions)}
    for name in ("dqdot_dq", "dqdot_dqd", "dqdot_dtau"):
        analytic[name] = _time_median(
            lambda name=name: diffstep.jacobian_block(world, ctx, name),
            repetitions)
    vel_q = diffstep.jacobian_block(world, ctx, "dqdot_dq")
    vel_qd = diffstep.jacobian_block(world, ctx, "dqdot_dqd")
    analytic["dq_dq"] = _time_median(
        lambda: diffstep.jacobian_block(world, ctx, "dq_dq", velocity=vel_q),
        repetitions)
    analytic["dq_dqd"] = _time_median(
        lambda: diffstep.jacobian_block(world, ctx, "dq_dqd", velocity=vel_qd),
        repetitions)

    central = {"All": _time_median(
        lambda: [fdcheck.central_difference(fn, x, h=h[:x.size])
                 for fn, x in families.values()], repetitions)}
    for label, fam in fam_of.items():
        fn, x = families[fam]
        central[label] = _time_median(
            lambda fn=fn, x=x: fdcheck.central_difference(fn, x, h=h[:x.size]),
            repetitions)

    ridders = {}
    if include_ridders:
        hr = 1e-4 * np.ones(n)
        ridders["All"] = _time_median(
            lambda: [fdcheck.ridders(fn, x, h=hr[:x.size])
                     for fn, x in families.values()], ridders_repetitions)
        for label, fam in fam_of.items():
            fn, x = families[fam]
            ridders[label] = _time_median(
                lambda fn=fn, x=x: fdcheck.ridders(fn, x, h=hr[:x.size]),
                ridders_repetitions)
    return analytic, central, ridders


BENCHMARK_HEADER = "scene,jacobian,analytic,central,speedup,ridders,speedup"


def benchmark_rows(name, analytic, central, ridders):
    rows = []
    for label in ("All",) + JACOBIAN_LABELS:
        a = analytic[label]
        c = central[label]
        cells = [name, label, format_float(a), format_float(c),
                 format_float(c / a)]
        if ridders:
            r = ridders[label]
            cells += [format_float(r), format_float(r / a)]
        else:
            cells += ["", ""]
        rows.append(",".join(cells))
    return rows


def cmd_benchmark(args) -> int:
    lines = [BENCHMARK_HEADER]
    for scene_path in args.scenes:
        desc = scenes.resolve_scene(scene_path)
        world, state = desc.to_world()
        analytic, central, ridders = benchmark_scene(
            world, state, args.repetitions,
            ridders_repetitions=args.ridders_repetitions,
            include_ridders=not args.no_ridders)
        lines.extend(benchmark_rows(scene_path, analytic, central, ridders))
    _write_out(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _objective_from_spec(spec: dict, n: int):
    def arr(key):
        v = spec.get(key)
        return None if v is None else np.asarray(v, dtype=float)
    weights_q = spec.get("q_weight", 1.0)
    weights_qd = spec.get("qd_weight", 0.0)
    return trajopt.Objective(
        q_target=arr("q_target"), qd_target=arr("qd_target"),
        q_weight=np.asarray(weights_q) if isinstance(weights_q, list)
        else float(weights_q),
        qd_weight=np.asarray(weights_qd) if isinstance(weights_qd, list)
        else float(weights_qd),
        control_reg=float(spec.get("control_reg", 0.0)))


def cmd_optimize(args) -> int:
    desc = scenes.resolve_scene(args.scene)
    world, state = desc.to_world()
    n = world.n
    with open(args.objective, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    objective = _objective_from_spec(spec, n)
    horizon = int(spec.get("horizon", 100))
    lr = float(spec.get("learning_rate", 0.1))
    segments = int(spec.get("segments", 4))
    iterations = args.iterations if args.iterations is not None \
        else int(spec.get("iterations", 100))
    method = args.method or spec.get("method", "sgd")
    mode = trajopt.MODE_COMPLEMENTARITY if args.complementarity_aware \
        else trajopt.MODE_STANDARD
    actuated = desc.actuated_mask().astype(float)
    controls0 = np.zeros((horizon, n))
    try:
        result = trajopt.optimize(world, state, objective, controls0,
                                  method=method, iterations=iterations,
                                  learning_rate=lr, segments=segments,
                                  mode=mode, actuated=actuated,
                                  scene_id=args.scene)
    except trajopt.DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    base = args.out or "optimize"
    loss_lines = ["iteration,loss"] if not result.defect_curve \
        else ["iteration,loss,defect"]
    for i, loss in enumerate(result.loss_curve):
        row = f"{i},{format_float(loss)}"
        if result.defect_curve:
            row += f",{format_float(result.defect_curve[i])}"
        loss_lines.append(row)
    _write_out(f"{base}.loss.csv", "\n".join(loss_lines) + "\n")
    ctrl_lines = [",".join(format_float(x) for x in row)
                  for row in result.controls]
    _write_out(f"{base}.controls.csv", "\n".join(ctrl_lines) + "\n")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="diffrbd",
        description="differentiable rigid-body dynamics with hard contact")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for any randomized choices")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll a scene forward")
    p.add_argument("scene")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--controls", help="CSV of per-step joint forces")
    p.add_argument("--out", "-o", default="-")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("jacobian", help="timestep Jacobian blocks")
    p.add_argument("scene")
    p.add_argument("--at-step", type=int, default=0)
    p.add_argument("--check", choices=("central", "ridders"))
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", "-o", default="-")
    p.set_defaults(fn=cmd_jacobian)

    p = sub.add_parser("benchmark", help="analytic vs finite differencing")
    p.add_argument("scenes", nargs="+")
    p.add_argument("--repetitions", type=int, default=100)
    p.add_argument("--ridders-repetitions", type=int, default=3)
    p.add_argument("--no-ridders", action="store_true")
    p.add_argument("--out", "-o", default="-")
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("optimize", help="trajectory optimization")
    p.add_argument("scene")
    p.add_argument("--objective", required=True,
                   help="JSON objective/hyperparameter spec")
    p.add_argument("--method", choices=("sgd", "multiple-shooting"))
    p.add_argument("--iterations", type=int)
    p.add_argument("--complementarity-aware", action="store_true")
    p.add_argument("--out", "-o")
    p.set_defaults(fn=cmd_optimize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    np.random.seed(args.seed % (2 ** 32))
    try:
        return args.fn(args)
    except (scenes.ParseError, scenes.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
