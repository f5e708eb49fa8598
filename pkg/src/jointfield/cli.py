"""Command-line entry point: ``jointfield <subcommand> ...``.

Exit codes: 0 success, 1 validation, 2 I/O, 3 network, 4 numerical divergence.
Every failure prints one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .compiler import CompileWarning, compile_proposal, compile_raw, reference_magnitudes
from .diag import Annotations, analysis_json, equilibria, profile_grid, render_svg, stick_regions
from .errors import FileIOError, JointFieldError, ValidationError
from .field import JointLimitHint
from .schema import (
    load_json,
    parse_composed,
    parse_context,
    parse_proposal,
    parse_raw_proposal,
    serialize_composed,
)
from .sim import (
    HandController,
    HandDrive,
    Schedule,
    SimConfig,
    SimState,
    Trajectory,
    make_baseline,
    rollout,
    scenario_from_obj,
)

log = logging.getLogger("jointfield")


class _UsageError(ValidationError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _read(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FileIOError(f"cannot read {path}: {e.strerror}") from None


def _write(path, text):
    try:
        p = Path(path)
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True)
        p.write_text(text, encoding="utf-8")
    except OSError as e:
        raise FileIOError(f"cannot write {path}: {e.strerror}") from None


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _is_raw(text):
    try:
        d = load_json(text)
    except JointFieldError:
        return False
    return isinstance(d, dict) and "control_points" in d


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(a):
    text = _read(a.proposal)
    if _is_raw(text):
        doc = parse_raw_proposal(text)
        _emit({"ok": True, "mode": "raw", "channels": sorted(ch.value for ch in doc.points)})
    else:
        doc = parse_proposal(text)
        _emit({"ok": True, "mode": "template", "effects": len(doc.effect_proposals)})
    return 0


def cmd_compile(a):
    ctx = parse_context(_read(a.context))
    text = _read(a.proposal)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CompileWarning)
        if a.raw:
            f = compile_raw(ctx, parse_raw_proposal(text))
        else:
            f = compile_proposal(ctx, parse_proposal(text))
    for w in caught:
        sys.stderr.write(json.dumps({"warning": str(w.message)}) + "\n")
    _write(a.output, serialize_composed(f))
    return 0


def _load_field(path):
    return parse_composed(_read(path))


def cmd_plot(a):
    f = _load_field(a.composed)
    grid = profile_grid(f, a.points)
    eqs = tuple(equilibria(grid, f)) if a.annotate_equilibria else ()
    ann = Annotations(eqs, tuple(stick_regions(grid)), True, title=a.title or "")
    _write(a.output, render_svg(grid, ann))
    if a.csv:
        _write(a.csv, grid.to_csv())
    return 0


def cmd_analyze(a):
    f = _load_field(a.composed)
    _write(a.output, analysis_json(profile_grid(f, a.points), f))
    return 0


def cmd_simulate(a):
    f = _load_field(a.composed)
    try:
        scen = json.loads(_read(a.scenario))
    except json.JSONDecodeError as e:
        raise ValidationError(f"scenario is not valid JSON: {e.msg}", "scenario") from None
    state0, external, n_steps, cfg = scenario_from_obj(scen, f)
    traj = rollout(state0, f, cfg, external, n_steps)
    _write(a.output, traj.to_csv())
    return 0


def _read_targets(path):
    lines = [ln.strip() for ln in _read(path).splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "t,q_target":
        raise ValidationError("target CSV header must be 't,q_target'", str(path))
    try:
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    except ValueError as e:
        raise ValidationError(f"bad target row: {e}", str(path)) from None
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise ValidationError("target CSV needs at least two rows of 't,q_target'", str(path))
    return data[:, 0], data[:, 1]


def cmd_interact(a):
    f = _load_field(a.composed)
    t, q_target = _read_targets(a.targets)
    dt = a.dt if a.dt else 1e-3 * f.joint.t_ref
    cfg = SimConfig(dt=dt)
    ref = reference_magnitudes(f.joint)
    hand = HandController.default(
        f.joint, target=float(q_target[0]),
        **{k: v for k, v in (("kp", a.kp), ("kd", a.kd),
                            ("f_max", None if a.f_max is None else a.f_max * ref.F_ref),
                            ("r_max", None if a.r_max is None else a.r_max * ref.v_ref))
           if v is not None})
    n_steps = max(1, int(round((t[-1] - t[0]) / dt)))
    q0 = float(q_target[0]) if a.q0 is None else a.q0
    drive = HandDrive(hand, Schedule(t - t[0], q_target, "linear"))
    traj = rollout(SimState(0.0, q0, 0.0), f, cfg, drive, n_steps)
    _write(a.output, traj.to_csv())
    return 0


def cmd_baseline(a):
    ctx = parse_context(_read(a.context))
    ref = reference_magnitudes(ctx)
    hint = JointLimitHint(a.limit_side, a.elasticity)
    if a.kind == "constant":
        params = {"friction": a.friction * ref.F_ref, "damping": a.damping * ref.C_ref}
        f = make_baseline("constant_drag", ctx, params, hint)
    else:
        params = {"side": a.side, "peak": a.peak * ref.F_ref,
                  "friction": a.friction * ref.F_ref, "damping": a.damping * ref.C_ref}
        f = make_baseline("linear_spring", ctx, params, hint)
    _write(a.output, serialize_composed(f))
    return 0


def cmd_optimize(a):
    from .refine import GROUPS, ParamSet, RefineConfig, optimize

    f = _load_field(a.composed)
    targets = [Trajectory.read_csv(p) for p in a.targets]
    items = [x.strip() for x in a.params.split(",") if x.strip()]
    if not items:
        raise ValidationError("empty parameter mask", "params")
    groups = [x for x in items if x in GROUPS]
    p = ParamSet.from_field(f, groups=groups)
    labels = [x for x in items if x not in GROUPS]
    if labels:
        extra = p.select(labels).mask
        p = p.with_mask(p.mask | extra)
    if p.n_active == 0:
        raise ValidationError("no parameter is active", "params")
    res = optimize(p, targets, RefineConfig(lr=a.lr), n_iters=a.iters)
    report = res.report()
    report["targets"] = [str(x) for x in a.targets]
    report["active"] = [lab for lab, m in zip(p.labels, p.mask) if m]
    _write(a.output, json.dumps(report, sort_keys=True, indent=2) + "\n")
    if a.field_out:
        _write(a.field_out, serialize_composed(res.params.to_field()))
    return 0


def cmd_propose(a):
    from .vlm import BACKENDS, IterationPolicy, ReplayTransport, image_files, iterate

    ctx = parse_context(_read(a.context))
    images = image_files(a.images) if a.images else []
    if a.backend == "replay":
        if not a.replay:
            raise ValidationError("--backend replay needs --replay <dir>", "replay")
        files = sorted(Path(a.replay).glob("*.json"))
        if not files:
            raise FileIOError(f"no recorded responses in {a.replay}")
        transport = ReplayTransport([p.read_bytes() for p in files])
    else:
        kwargs = {k: v for k, v in (("model", a.model), ("base_url", a.base_url)) if v}
        transport = BACKENDS[a.backend](**kwargs)
    policy = IterationPolicy(max_rounds=a.rounds)
    res = iterate(ctx, images, transport, policy, "raw" if a.raw else "template", a.output,
                  allow_no_images=not images)
    _write(Path(a.output) / "composed.json", res.composed_json)
    _emit({"rounds": len(res.transcript), "completed": res.completed,
           "composed": str(Path(a.output) / "composed.json")})
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="jointfield", description="Position-dependent joint dynamics fields.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="check a proposal document")
    s.add_argument("proposal", help="proposal JSON (template or raw control points)")
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("compile", help="compile a proposal into composed.json")
    s.add_argument("--context", required=True, help="joint context JSON")
    s.add_argument("--proposal", required=True, help="proposal JSON")
    s.add_argument("-o", "--output", required=True, help="composed.json to write")
    s.add_argument("--raw", action="store_true", help="proposal holds raw control points")
    s.set_defaults(fn=cmd_compile)

    s = sub.add_parser("plot", help="render the diagnostic profile as SVG")
    s.add_argument("composed", help="composed.json")
    s.add_argument("-o", "--output", required=True, help="SVG to write")
    s.add_argument("--csv", help="also write the sampled profile as CSV")
    s.add_argument("--annotate-equilibria", action="store_true",
                   help="mark rest points of the net rest force")
    s.add_argument("--points", type=int, default=1001, help="grid size (default 1001)")
    s.add_argument("--title", help="plot title")
    s.set_defaults(fn=cmd_plot)

    s = sub.add_parser("analyze", help="stick regions and equilibria as JSON")
    s.add_argument("composed", help="composed.json")
    s.add_argument("-o", "--output", required=True, help="JSON to write")
    s.add_argument("--points", type=int, default=1001, help="grid size (default 1001)")
    s.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("simulate", help="roll out a scenario, write trajectory CSV")
    s.add_argument("composed", help="composed.json")
    s.add_argument("--scenario", required=True, help="scenario JSON")
    s.add_argument("-o", "--output", required=True, help="trajectory CSV to write")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("interact", help="drive the joint with the virtual hand")
    s.add_argument("composed", help="composed.json")
    s.add_argument("--targets", required=True, help="CSV with header 't,q_target'")
    s.add_argument("-o", "--output", required=True, help="trajectory CSV to write")
    s.add_argument("--dt", type=float, help="time step (default 1e-3 t_ref)")
    s.add_argument("--q0", type=float, help="initial position (default first target)")
    s.add_argument("--kp", type=float, help="hand stiffness")
    s.add_argument("--kd", type=float, help="hand damping")
    s.add_argument("--f-max", type=float, help="force cap in multiples of F_ref")
    s.add_argument("--r-max", type=float, help="target rate cap in multiples of v_ref")
    s.set_defaults(fn=cmd_interact)

    s = sub.add_parser("baseline", help="write a simple comparison field")
    s.add_argument("--kind", required=True, choices=("constant", "spring"),
                   help="constant drag or linear return spring")
    s.add_argument("--context", required=True, help="joint context JSON")
    s.add_argument("-o", "--output", required=True, help="composed.json to write")
    s.add_argument("--friction", type=float, default=0.1,
                   help="friction in multiples of F_ref (default 0.1)")
    s.add_argument("--damping", type=float, default=0.0,
                   help="damping in multiples of C_ref (default 0)")
    s.add_argument("--peak", type=float, default=1.0,
                   help="spring peak in multiples of F_ref (default 1)")
    s.add_argument("--side", choices=("low_end", "high_end"), default="low_end",
                   help="end the spring returns to")
    s.add_argument("--limit-side", choices=("low_end", "high_end", "none"), default="none",
                   help="end whose hard stop takes the elasticity hint")
    s.add_argument("--elasticity", choices=("none", "weak", "medium", "strong"), default="none",
                   help="bounce at the hard stop")
    s.set_defaults(fn=cmd_baseline)

    s = sub.add_parser("optimize", help="fit field parameters to recorded trajectories")
    s.add_argument("composed", help="composed.json to start from")
    s.add_argument("--targets", required=True, nargs="+", help="trajectory CSV files")
    s.add_argument("-o", "--output", required=True, help="report JSON to write")
    s.add_argument("--iters", type=int, default=50, help="Adam iterations (default 50)")
    s.add_argument("--lr", type=float, default=0.05, help="Adam step size (default 0.05)")
    s.add_argument("--params", default="conservative",
                   help="comma list of groups (conservative, damping, scales, anchors, limit) "
                        "and/or parameter labels such as c0.conservative.y2")
    s.add_argument("--field-out", help="also write the refined composed.json")
    s.set_defaults(fn=cmd_optimize)

    s = sub.add_parser("propose", help="run the propose / diagnose / revise loop")
    s.add_argument("--context", required=True, help="joint context JSON")
    s.add_argument("--images", help="directory of images to attach")
    s.add_argument("--backend", required=True, choices=("openai", "gemini", "replay"),
                   help="chat API style, or replay of recorded responses")
    s.add_argument("--model", help="model name for the backend")
    s.add_argument("--base-url", help="endpoint base URL")
    s.add_argument("--replay", help="directory of recorded response bodies (replay backend)")
    s.add_argument("--rounds", type=int, default=4, help="maximum rounds (default 4)")
    s.add_argument("--raw", action="store_true", help="ask for raw control points")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(fn=cmd_propose)
    return p


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except JointFieldError as e:
        sys.stderr.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
        return e.exit_code
    except OSError as e:
        sys.stderr.write(json.dumps({"error": "io", "message": str(e)}) + "\n")
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
