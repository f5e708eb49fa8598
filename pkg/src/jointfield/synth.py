"""Synthetic joints and fields used by tests, demos and acceptance runs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .compiler import reference_magnitudes
from .curve import PchipCurve
from .field import Channel, ComposedField, JointContext, JointLimitHint
from .sim import (HandController, HandDrive, Schedule, SimConfig, SimState, make_baseline,
                  rollout)
from .templates import TEMPLATE_NAMES, template_instantiate

C, F, D = Channel.CONSERVATIVE, Channel.FRICTION, Channel.DAMPING

_SHAPED = [n for n in TEMPLATE_NAMES if not n.startswith("constant_")]


def random_joint(rng, gravity=True):
    dq = float(rng.uniform(0.5, 2.0))
    inertia = float(rng.uniform(0.05, 1.0))
    if gravity:
        g = rng.normal(scale=1.0, size=4) * inertia
        grav = PchipCurve([0.0, 0.3, 0.7, 1.0], g)
    else:
        grav = PchipCurve([0.0, 1.0], [0.0, 0.0])
    return JointContext("synthetic", "joint", "revolute", 0.0, dq, inertia, grav, 1.0)


def random_field(rng, joint=None, n_components=(1, 4), friction=(0.05, 0.6),
                 damping=(0.0, 0.3), gravity=True):
    """Random template mix; magnitudes in multiples of the joint's F_ref / C_ref."""
    joint = joint or random_joint(rng, gravity)
    ref = reference_magnitudes(joint)
    comps = []
    n = int(rng.integers(n_components[0], n_components[1] + 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(n):
            name = _SHAPED[int(rng.integers(len(_SHAPED)))]
            a = float(rng.uniform(0.0, 0.7))
            b = float(min(1.0, a + rng.uniform(0.15, 0.6)))
            scales = {C: ref.F_ref * float(rng.uniform(0.3, 2.0)),
                      D: ref.C_ref * float(rng.uniform(*damping))}
            comps.append(template_instantiate(name, a, b, scales, {"synthetic": True}))
        if friction is not None:
            comps.append(template_instantiate(
                "constant_friction_hinge", 0.0, 1.0,
                {F: ref.F_ref * float(rng.uniform(*friction))}, {"synthetic": True}))
    return ComposedField(tuple(comps), joint, JointLimitHint(), {"synthetic": True})


# --------------------------------------------------------------------------
# lighter: a press button with a snap-through action


def lighter_joint():
    return JointContext("lighter", "button", "prismatic", 0.0, 0.005, 0.01,
                        PchipCurve([0.0, 1.0], [0.0, 0.0]), 0.1)


def lighter_field(joint=None):
    joint = joint or lighter_joint()
    ref = reference_magnitudes(joint)
    comps = (
        template_instantiate("spring_return_to_low_end", 0.0, 1.0, {C: 1.0 * ref.F_ref}),
        template_instantiate("spring_loaded_snap_detent_to_high_end", 0.35, 0.75,
                             {C: 3.0 * ref.F_ref}),
        template_instantiate("constant_damping_hinge", 0.0, 1.0, {D: 0.05 * ref.C_ref}),
    )
    return ComposedField(comps, joint, JointLimitHint("none", "none"), {"fixture": "lighter"})


def lighter_baseline(joint=None):
    joint = joint or lighter_joint()
    ref = reference_magnitudes(joint)
    return make_baseline("linear_spring", joint,
                         {"side": "low_end", "peak": ref.F_ref, "damping": 0.05 * ref.C_ref})


def lighter_script(joint=None):
    """Press to the bottom and release: the command jumps to q_max, then back.

    A slow hand (a tenth of the reference speed) turns this into a
    triangular target with no dwell, so the joint keeps moving for the whole
    run. Returns ``(drive, n_steps, dt)``.
    """
    joint = joint or lighter_joint()
    ref = reference_magnitudes(joint)
    hand = HandController.default(joint, target=joint.q_min, r_max=0.1 * ref.v_ref)
    travel = joint.delta_q / hand.r_max
    dt = 1e-3 * joint.t_ref
    n_steps = int(round(2.0 * travel / dt))
    cmd = Schedule([0.0, travel, travel + dt], [joint.q_max, joint.q_max, joint.q_min],
                   "previous")
    return HandDrive(hand, cmd), n_steps, dt


# --------------------------------------------------------------------------
# fridge: magnetic seal at the closed end, return spring near full open


def fridge_joint():
    return JointContext("fridge", "door", "revolute", 0.0, 2.0, 1.5,
                        PchipCurve([0.0, 1.0], [0.0, 0.0]), 1.0)


def fridge_field(joint=None):
    joint = joint or fridge_joint()
    ref = reference_magnitudes(joint)
    comps = (
        template_instantiate("magnetic_return_to_low_end", 0.0, 0.12, {C: 1.5 * ref.F_ref}),
        template_instantiate("spring_return_to_low_end", 0.55, 1.0, {C: 0.8 * ref.F_ref}),
        template_instantiate("constant_friction_hinge", 0.0, 1.0, {F: 0.1 * ref.F_ref}),
    )
    return ComposedField(comps, joint, JointLimitHint("low_end", "none"), {"fixture": "fridge"})


def fridge_baseline(joint=None):
    joint = joint or fridge_joint()
    ref = reference_magnitudes(joint)
    return make_baseline("linear_spring", joint,
                         {"side": "low_end", "peak": 0.8 * ref.F_ref, "friction": 0.1 * ref.F_ref})


def interior_points(regions, n, rng, margin):
    """``n`` random points inside ``regions`` at least ``margin`` from any edge."""
    spans = [(lo + margin, hi - margin) for lo, hi in regions if hi - lo > 2 * margin]
    if not spans:
        return np.empty(0)
    widths = np.array([hi - lo for lo, hi in spans])
    pick = rng.choice(len(spans), size=n, p=widths / widths.sum())
    return np.array([rng.uniform(*spans[i]) for i in pick])


# --------------------------------------------------------------------------
# refinement cases: smooth rollouts that stay clear of the joint limits


@dataclass
class RefineCase:
    field: ComposedField
    q0: float
    forces: np.ndarray
    dt: float
    params: object  # refine.ParamSet with the chosen entries active


def _forcing(rng, joint, n, dt, amp):
    ref = reference_magnitudes(joint)
    t = np.arange(n) * dt
    w = rng.uniform(1.0, 6.0, size=3) / joint.t_ref
    ph = rng.uniform(0, 2 * np.pi, size=3)
    return amp * ref.F_ref * np.sum(np.sin(np.outer(t, w) + ph), axis=1) / 3


def _influential(p, s_lo, s_hi):
    """Labels whose parameter can move a rollout confined to [s_lo, s_hi]."""
    out = []
    for e, lab in zip(p.entries, p.labels):
        if e.group == "limit":
            continue
        c = p.base.components[e.component]
        if c.b <= s_lo or c.a >= s_hi:
            continue
        if e.group == "anchors":
            edge = c.a if e.index == 0 else c.b
            if s_lo < edge < s_hi:
                out.append(lab)
            continue
        cur = c.curves[Channel(e.channel)]
        u_lo = (max(s_lo, c.a) - c.a) / (c.b - c.a)
        u_hi = (min(s_hi, c.b) - c.a) / (c.b - c.a)
        if e.group == "scales":
            if np.any(cur.ys != 0):
                out.append(lab)
            continue
        xs = cur.xs
        lo = xs[max(e.index - 1, 0)]
        hi = xs[min(e.index + 1, xs.size - 1)]
        if hi > u_lo and lo < u_hi and (e.group == "conservative" or cur.ys[e.index] > 0):
            out.append(lab)
    return out


def random_refine_case(rng, n_steps=200, n_active=6, dt=0.005, amp=0.5, max_tries=200):
    """A random field, forcing and active parameter set for refinement tests.

    Candidates are redrawn until the theta=0 smooth rollout stays inside
    ``[0.02, 0.98]`` of the range and at least ``n_active`` parameters can
    influence it.
    """
    from .refine import GROUPS, ParamSet

    for _ in range(max_tries):
        f = random_field(rng, gravity=False, n_components=(2, 4))
        q0 = f.joint.q_of(float(rng.uniform(0.3, 0.7)))
        forces = _forcing(rng, f.joint, n_steps, dt, amp)
        # screening uses the numba kernel, which equals the differentiable
        # rollout while anchors are fixed
        tr = rollout(SimState(0.0, q0, 0.0), f, SimConfig(dt=dt, smooth_friction=True),
                     np.append(forces, 0.0), n_steps)
        s = f.joint.s_of(tr.q)
        if s.min() < 0.02 or s.max() > 0.98 or np.ptp(s) < 0.15:
            continue
        p = ParamSet.from_field(f, groups=())
        cand = _influential(p, s.min(), s.max())
        if len(cand) < n_active:
            continue
        groups = {lab: e.group for lab, e in zip(p.labels, p.entries)}
        # one per group first, then fill at random
        order = list(rng.permutation(cand))
        chosen = []
        for g in GROUPS:
            for lab in order:
                if groups[lab] == g and lab not in chosen:
                    chosen.append(lab)
                    break
        chosen += [lab for lab in order if lab not in chosen]
        return RefineCase(f, q0, forces, dt, p.select(chosen[:n_active]))
    raise RuntimeError("no admissible refinement case found")


@dataclass
class RefinementTask:
    truth: ComposedField
    start: ComposedField  # truth with noisy conservative knots
    releases: list  # normalized release positions
    n_steps: int
    dt: float


def perturb_conservative(f, rng, rel=0.3):
    """Multiply every conservative knot by ``1 + rel * N(0, 1)``."""
    comps = []
    for c in f.components:
        cur = c.curves.get(C)
        if cur is None:
            comps.append(c)
            continue
        curves = dict(c.curves)
        curves[C] = PchipCurve(cur.xs, cur.ys * (1.0 + rel * rng.normal(size=cur.ys.size)))
        comps.append(c.with_curves(curves, c.a, c.b))
    return ComposedField(tuple(comps), f.joint, f.joint_limit, f.meta)


def _release_points(f, rng):
    """One release per third of the conservative span, inside a shaped
    component and clear of every stick region (a release there never moves)."""
    from .diag import profile_grid, stick_regions

    regions = stick_regions(profile_grid(f))
    spans = [(c.a, c.b) for c in f.components if C in c.curves and np.any(c.curves[C].ys != 0)]
    if not spans:
        return None
    lo = max(min(a for a, _ in spans), 0.03)
    hi = min(max(b for _, b in spans), 0.97)
    edges = np.linspace(lo, hi, 4)
    out = []
    for k in range(3):
        for _ in range(1000):
            s = float(rng.uniform(edges[k], edges[k + 1]))
            inside = any(a <= s <= b for a, b in spans)
            stuck = any(a - 0.02 <= s <= b + 0.02 for a, b in regions)
            if inside and not stuck:
                out.append(s)
                break
        else:
            return None
    return out


def refinement_task(rng, n_steps=400, dt=0.005, rel=0.3):
    """Ground truth with gravity, 1-2 shaped components and light friction,
    three informative release points, and a perturbed starting field."""
    while True:
        f = random_field(rng, n_components=(1, 2), friction=(0.02, 0.1))
        releases = _release_points(f, rng)
        if releases:
            break
    return RefinementTask(f, perturb_conservative(f, rng, rel), releases, n_steps, dt)
