"""Single-DOF reference simulator for composed joint fields.

Integration is semi-implicit Euler with implicit damping. Dry friction is
applied as a velocity clamp (hard mode, exact stiction) or as a tanh law
(smooth mode, for differentiable rollouts). The inner loop is compiled with
numba; a pure-Python loop is used only when the external force is an
arbitrary callable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numba
import numpy as np

from .compiler import reference_magnitudes
from .errors import FileIOError, IntegrationDiverged, ValidationError
from .field import CHANNELS, Channel, ComposedField, JointLimitHint
from .templates import template_instantiate

_CHAN_INDEX = {ch: i for i, ch in enumerate(CHANNELS)}
_DIVERGE_FACTOR = 1e8

CSV_HEADER = "t,q,v,f_ext,f_hand"


@dataclass(frozen=True)
class SimState:
    t: float
    q: float
    v: float


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.005
    smooth_friction: bool = False
    eps_v: float | None = None          # default v_ref * 1e-3
    limit_stiffness: float | None = None  # default: F_ref penetrates penetration_budget of range
    penetration_budget: float = 0.005
    limit_ramp: float = 0.1             # smooth mode: limit damping ramps in over this share of the budget

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive", "config.dt")
        if self.eps_v is not None and not self.eps_v > 0:
            raise ValidationError("eps_v must be positive", "config.eps_v")


@dataclass(frozen=True)
class ResolvedConfig:
    """SimConfig with every derived quantity filled in for a specific joint."""

    dt: float
    smooth: bool
    eps_v: float
    k_limit: float
    c_low: float
    c_high: float
    ramp: float

    def params(self, joint):
        return np.array([self.dt, joint.q_min, joint.q_max, joint.inertia_eq,
                         1.0 if self.smooth else 0.0, self.eps_v, self.k_limit,
                         self.c_low, self.c_high, self.ramp])


def resolve_config(cfg, f, hint=None):
    """Fill derived defaults of ``cfg`` from the joint of field ``f``."""
    cfg = cfg or SimConfig()
    joint = f.joint
    hint = f.joint_limit if hint is None else hint
    ref = reference_magnitudes(joint)
    eps_v = cfg.eps_v if cfg.eps_v is not None else ref.v_ref * 1e-3
    budget = cfg.penetration_budget * joint.delta_q
    k = cfg.limit_stiffness if cfg.limit_stiffness is not None else ref.F_ref / budget
    crit = 2.0 * math.sqrt(k * joint.inertia_eq)
    return ResolvedConfig(
        dt=cfg.dt,
        smooth=bool(cfg.smooth_friction),
        eps_v=eps_v,
        k_limit=k,
        c_low=crit * hint.side_ratio("low_end"),
        c_high=crit * hint.side_ratio("high_end"),
        ramp=cfg.limit_ramp * budget,
    )


# --------------------------------------------------------------------------
# packed field for the compiled kernels


@dataclass(frozen=True)
class PackedField:
    comp_a: np.ndarray
    comp_b: np.ndarray
    curve_comp: np.ndarray
    curve_chan: np.ndarray
    offsets: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    ds: np.ndarray
    grav_xs: np.ndarray
    grav_ys: np.ndarray
    grav_ds: np.ndarray

    def arrays(self):
        return (self.comp_a, self.comp_b, self.curve_comp, self.curve_chan, self.offsets,
                self.xs, self.ys, self.ds, self.grav_xs, self.grav_ys, self.grav_ds)


def pack_field(f):
    comp_a, comp_b = [], []
    curve_comp, curve_chan, offsets = [], [], [0]
    xs, ys, ds = [], [], []
    for i, c in enumerate(f.components):
        comp_a.append(c.a)
        comp_b.append(c.b)
        for ch in CHANNELS:
            if ch in c.curves:
                cur = c.curves[ch]
                curve_comp.append(i)
                curve_chan.append(_CHAN_INDEX[ch])
                xs.extend(cur.xs)
                ys.extend(cur.ys)
                ds.extend(cur.ds)
                offsets.append(len(xs))
    g = f.joint.gravity
    fa = lambda x: np.ascontiguousarray(x, dtype=np.float64)  # noqa: E731
    ia = lambda x: np.ascontiguousarray(x, dtype=np.int64)  # noqa: E731
    return PackedField(fa(comp_a), fa(comp_b), ia(curve_comp), ia(curve_chan), ia(offsets),
                       fa(xs), fa(ys), fa(ds), fa(g.xs), fa(g.ys), fa(g.ds))


@numba.njit(cache=True)
def _hermite(xs, ys, ds, lo, hi, x):
    a = lo
    b = hi - 1
    while b - a > 1:
        mid = (a + b) // 2
        if xs[mid] <= x:
            a = mid
        else:
            b = mid
    i = a
    h = xs[i + 1] - xs[i]
    t = (x - xs[i]) / h
    if t == 1.0:
        return ys[i + 1]
    t1 = 1.0 - t
    h10 = t * t1 * t1
    h01 = t * t * (3.0 - 2.0 * t)
    h11 = t * t * (t - 1.0)
    return ys[i] + h01 * (ys[i + 1] - ys[i]) + h * (h10 * ds[i] + h11 * ds[i + 1])


@numba.njit(cache=True)
def _field_core(s, comp_a, comp_b, curve_comp, curve_chan, offsets, xs, ys, ds,
                grav_xs, grav_ys, grav_ds):
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    fc = 0.0
    ff = 0.0
    cd = 0.0
    for j in range(curve_comp.shape[0]):
        c = curve_comp[j]
        a = comp_a[c]
        b = comp_b[c]
        if s < a or s > b:
            continue
        u = (s - a) / (b - a)
        if u < 0.0:
            u = 0.0
        elif u > 1.0:
            u = 1.0
        val = _hermite(xs, ys, ds, offsets[j], offsets[j + 1], u)
        ch = curve_chan[j]
        if ch == 0:
            fc += val
        elif ch == 1:
            if val > ff:
                ff = val
        else:
            cd += val
    if cd < 0.0:
        cd = 0.0
    n = grav_xs.shape[0]
    x = s
    if x < grav_xs[0]:
        x = grav_xs[0]
    elif x > grav_xs[n - 1]:
        x = grav_xs[n - 1]
    g = _hermite(grav_xs, grav_ys, grav_ds, 0, n, x)
    return fc, ff, cd, g


@numba.njit(cache=True)
def _limit_core(q, v, prm):
    q_min = prm[1]
    q_max = prm[2]
    k = prm[6]
    smooth = prm[4] > 0.5
    ramp = prm[9]
    if q < q_min:
        p = q_min - q
        w = 1.0
        if smooth and p < ramp:
            w = p / ramp
        return k * p - w * prm[7] * v
    if q > q_max:
        p = q - q_max
        w = 1.0
        if smooth and p < ramp:
            w = p / ramp
        return -k * p - w * prm[8] * v
    return 0.0


@numba.njit(cache=True)
def _step_core(q, v, f_ext, prm, comp_a, comp_b, curve_comp, curve_chan, offsets,
               xs, ys, ds, grav_xs, grav_ys, grav_ds):
    dt = prm[0]
    q_min = prm[1]
    q_max = prm[2]
    inertia = prm[3]
    s = (q - q_min) / (q_max - q_min)
    fc, ff, cd, g = _field_core(s, comp_a, comp_b, curve_comp, curve_chan, offsets,
                                xs, ys, ds, grav_xs, grav_ys, grav_ds)
    f_nf = fc + g + f_ext + _limit_core(q, v, prm)
    v_star = (v + dt * f_nf / inertia) / (1.0 + dt * cd / inertia)
    dv_max = dt * ff / inertia
    if prm[4] > 0.5:
        eps = prm[5]
        if dv_max > eps:
            eps = dv_max
        v_new = v_star - dv_max * math.tanh(v_star / eps)
    else:
        if abs(v_star) <= dv_max:
            v_new = 0.0
        elif v_star > 0.0:
            v_new = v_star - dv_max
        else:
            v_new = v_star + dv_max
    return q + dt * v_new, v_new


@numba.njit(cache=True)
def _rollout_kernel(q0, v0, t0, n, prm, fext, hand, cmd, out,
                    comp_a, comp_b, curve_comp, curve_chan, offsets,
                    xs, ys, ds, grav_xs, grav_ys, grav_ds):
    dt = prm[0]
    q_min = prm[1]
    q_max = prm[2]
    bound = _DIVERGE_FACTOR * (q_max - q_min)
    mid = 0.5 * (q_min + q_max)
    hand_on = hand[0] > 0.5
    r_max = hand[1]
    kp = hand[2]
    kd = hand[3]
    fmax = hand[4]
    target = hand[5]
    q = q0
    v = v0
    for k in range(n + 1):
        fh = 0.0
        if hand_on:
            step = cmd[k] - target
            lim = r_max * dt
            if step > lim:
                step = lim
            elif step < -lim:
                step = -lim
            target += step
            if target < q_min:
                target = q_min
            elif target > q_max:
                target = q_max
            fh = kp * (target - q) - kd * v
            if fh > fmax:
                fh = fmax
            elif fh < -fmax:
                fh = -fmax
        out[k, 0] = t0 + k * dt
        out[k, 1] = q
        out[k, 2] = v
        out[k, 3] = fext[k]
        out[k, 4] = fh
        if k == n:
            break
        q, v = _step_core(q, v, fext[k] + fh, prm, comp_a, comp_b, curve_comp, curve_chan,
                          offsets, xs, ys, ds, grav_xs, grav_ys, grav_ds)
        if not (math.isfinite(q) and math.isfinite(v)) or abs(q - mid) > bound:
            return k + 1
    return -1


# --------------------------------------------------------------------------
# public single-step API


def joint_limit_force(q, v, f, hint=None, cfg=None):
    """Joint-limit spring-damper force at ``(q, v)``; zero inside the range."""
    rc = resolve_config(cfg, f, hint)
    return float(_limit_core(float(q), float(v), rc.params(f.joint)))


def step(state, f, cfg=None, f_ext=0.0):
    """Advance ``state`` by one step of ``cfg.dt``."""
    rc = resolve_config(cfg, f)
    q, v = _step_core(float(state.q), float(state.v), float(f_ext), rc.params(f.joint),
                      *f.packed.arrays())
    if not (math.isfinite(q) and math.isfinite(v)):
        raise IntegrationDiverged(f"non-finite state after step at t={state.t}")
    return SimState(state.t + rc.dt, q, v)


# --------------------------------------------------------------------------
# external force sources


@dataclass(frozen=True)
class Schedule:
    """Time signal sampled at arbitrary times (piecewise linear or held)."""

    t: np.ndarray
    values: np.ndarray
    interp: str = "linear"

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValidationError("schedule t and values must be equal-length 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("schedule times must be strictly increasing")
        if self.interp not in ("linear", "previous"):
            raise ValidationError("interp must be 'linear' or 'previous'")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    def __call__(self, times):
        times = np.asarray(times, dtype=float)
        if self.interp == "linear":
            return np.interp(times, self.t, self.values)
        i = np.clip(np.searchsorted(self.t, times, side="right") - 1, 0, self.t.size - 1)
        return self.values[i]


@dataclass(frozen=True)
class HandController:
    """Bounded, rate-limited PD 'virtual hand' acting on the joint."""

    kp: float
    kd: float
    f_max: float
    r_max: float
    q_min: float
    q_max: float
    target: float

    def __post_init__(self):
        for name in ("kp", "kd", "f_max", "r_max"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive", f"hand.{name}")

    @classmethod
    def default(cls, joint, target=None, **overrides):
        ref = reference_magnitudes(joint)
        kp = 20.0 * ref.F_ref / joint.delta_q
        params = dict(kp=kp, kd=2.0 * math.sqrt(kp * joint.inertia_eq),
                      f_max=3.0 * ref.F_ref, r_max=2.0 * ref.v_ref)
        params.update({k: v for k, v in overrides.items() if v is not None})
        if target is None:
            target = joint.q_min
        return cls(q_min=joint.q_min, q_max=joint.q_max, target=float(target), **params)


def hand_force(h, state, dt, command):
    """PD force toward the rate-limited target; returns ``(force, new_target)``."""
    lim = h.r_max * dt
    target = h.target + min(max(command - h.target, -lim), lim)
    target = min(max(target, h.q_min), h.q_max)
    force = h.kp * (target - state.q) - h.kd * state.v
    return min(max(force, -h.f_max), h.f_max), target


@dataclass(frozen=True)
class HandDrive:
    controller: HandController
    command: object  # Schedule or constant
    f_ext: object = 0.0


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    f_ext: np.ndarray
    f_hand: np.ndarray = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = self.t.size
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.f_ext = np.asarray(self.f_ext, dtype=float)
        self.f_hand = np.zeros(n) if self.f_hand is None else np.asarray(self.f_hand, dtype=float)
        if n < 2:
            raise ValidationError("trajectory needs at least two samples")
        if any(a.shape != (n,) for a in (self.q, self.v, self.f_ext, self.f_hand)):
            raise ValidationError("trajectory columns must have equal length")
        dts = np.diff(self.t)
        if np.any(dts <= 0) or np.ptp(dts) > 1e-9 * max(dts[0], 1e-300) + 1e-12:
            raise ValidationError("trajectory times must be strictly increasing with constant dt")

    def __len__(self):
        return self.t.size

    @property
    def dt(self):
        return float((self.t[-1] - self.t[0]) / (self.t.size - 1))

    @property
    def applied_force(self):
        return self.f_ext + self.f_hand

    @property
    def initial_state(self):
        return SimState(float(self.t[0]), float(self.q[0]), float(self.v[0]))

    def to_csv(self):
        rows = [CSV_HEADER]
        for r in zip(self.t.tolist(), self.q.tolist(), self.v.tolist(),
                     self.f_ext.tolist(), self.f_hand.tolist()):
            rows.append(",".join(repr(x) for x in r))
        return "\n".join(rows) + "\n"

    def write_csv(self, path):
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip().replace(" ", "") != CSV_HEADER:
            raise ValidationError(f"trajectory CSV header must be {CSV_HEADER!r}")
        try:
            data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]], dtype=float)
        except ValueError as e:
            raise ValidationError(f"bad trajectory CSV row: {e}") from None
        if data.ndim != 2 or data.shape[1] != 5:
            raise ValidationError("trajectory CSV rows need 5 columns")
        return cls(*data.T)

    @classmethod
    def read_csv(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise FileIOError(f"cannot read {path}: {e.strerror}") from None
        return cls.from_csv(text)


def _as_series(src, times):
    if isinstance(src, Schedule):
        return src(times)
    if isinstance(src, np.ndarray):
        if src.shape != times.shape:
            raise ValidationError(f"force array needs {times.size} samples, got {src.size}")
        return np.ascontiguousarray(src, dtype=float)
    return np.full(times.shape, float(src))


def rollout(state0, f, cfg=None, external=0.0, n_steps=1):
    """Simulate ``n_steps`` steps; returns a Trajectory with ``n_steps + 1`` rows.

    ``external`` may be a constant force, a :class:`Schedule`, a per-row
    array, a :class:`HandDrive`, or a callable ``(t, state) -> force``. Row
    ``k`` holds the state at ``t_k`` and the forces applied over
    ``[t_k, t_k + dt]``.
    """
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    rc = resolve_config(cfg, f)
    prm = rc.params(f.joint)
    times = state0.t + np.arange(n_steps + 1) * rc.dt
    if callable(external) and not isinstance(external, (Schedule, HandDrive)):
        return _rollout_python(state0, f, rc, prm, external, n_steps)
    hand = np.zeros(6)
    cmd = np.zeros(n_steps + 1)
    if isinstance(external, HandDrive):
        h = external.controller
        hand[:] = (1.0, h.r_max, h.kp, h.kd, h.f_max, h.target)
        cmd = _as_series(external.command, times)
        fext = _as_series(external.f_ext, times)
    else:
        fext = _as_series(external, times)
    out = np.empty((n_steps + 1, 5))
    status = _rollout_kernel(float(state0.q), float(state0.v), float(state0.t), n_steps, prm,
                             fext, hand, cmd, out, *f.packed.arrays())
    if status >= 0:
        raise IntegrationDiverged(f"integration diverged at step {status}", step=int(status))
    return Trajectory(*out.T)


def _rollout_python(state0, f, rc, prm, external, n_steps):
    arrays = f.packed.arrays()
    out = np.empty((n_steps + 1, 5))
    q, v = float(state0.q), float(state0.v)
    for k in range(n_steps + 1):
        t = state0.t + k * rc.dt
        force = float(external(t, SimState(t, q, v)))
        out[k] = (t, q, v, force, 0.0)
        if k == n_steps:
            break
        q, v = _step_core(q, v, force, prm, *arrays)
        if not (math.isfinite(q) and math.isfinite(v)):
            raise IntegrationDiverged(f"integration diverged at step {k + 1}", step=k + 1)
    return Trajectory(*out.T)


# --------------------------------------------------------------------------
# baselines


def make_baseline(kind, joint, params=None, hint=None):
    """Simple comparison fields.

    ``constant_drag``: constant ``friction`` and/or ``damping`` over the full
    range (physical units). ``linear_spring``: one spring-return component
    on ``[a, b]`` toward ``side`` with peak force ``peak``, optionally with the
    same constant ``friction``/``damping`` carried on that component.
    """
    params = dict(params or {})
    hint = hint or JointLimitHint()
    friction = float(params.get("friction", 0.0))
    damping = float(params.get("damping", 0.0))
    if kind in ("constant_drag", "constant"):
        comps = []
        if friction:
            comps.append(template_instantiate("constant_friction_hinge", 0.0, 1.0,
                                              {Channel.FRICTION: friction}, {"baseline": kind}))
        if damping:
            comps.append(template_instantiate("constant_damping_hinge", 0.0, 1.0,
                                              {Channel.DAMPING: damping}, {"baseline": kind}))
        meta = {"baseline": "constant_drag", "friction": friction, "damping": damping}
    elif kind in ("linear_spring", "spring"):
        side = params.get("side", "low_end")
        if side not in ("low_end", "high_end"):
            raise ValidationError("side must be low_end or high_end", "baseline.side")
        a, b = float(params.get("a", 0.0)), float(params.get("b", 1.0))
        peak = float(params.get("peak", reference_magnitudes(joint).F_ref))
        scales = {Channel.CONSERVATIVE: peak, Channel.FRICTION: friction, Channel.DAMPING: damping}
        comps = [template_instantiate(f"spring_return_to_{side}", a, b, scales,
                                      {"baseline": "linear_spring"})]
        meta = {"baseline": "linear_spring", "side": side, "a": a, "b": b, "peak": peak,
                "friction": friction, "damping": damping}
    else:
        raise ValidationError(f"unknown baseline kind {kind!r}; valid: constant_drag, linear_spring",
                              "baseline.kind")
    return ComposedField(tuple(comps), joint, hint, meta)


# --------------------------------------------------------------------------
# energy bookkeeping


def potential(f, n_grid=20001):
    """Potential energy U(q) of conservative + gravity forces, min over range = 0.

    Integrated with Simpson's rule per grid cell; beyond the range the
    joint-limit spring energy is added by :func:`mechanical_energy`.
    """
    joint = f.joint
    s = np.linspace(0.0, 1.0, n_grid)
    sm = 0.5 * (s[:-1] + s[1:])
    force = f.net_rest_force(s)
    force_m = f.net_rest_force(sm)
    h = joint.delta_q / (n_grid - 1)
    work = h / 6.0 * (force[:-1] + 4.0 * force_m + force[1:])
    u = np.concatenate([[0.0], -np.cumsum(work)])
    u -= u.min()
    q_grid = joint.q_of(s)

    def U(q):
        return np.interp(q, q_grid, u)

    return U


def mechanical_energy(f, traj, cfg=None, U=None):
    """Kinetic + potential (+ limit spring) energy along a trajectory."""
    rc = resolve_config(cfg, f)
    U = U or potential(f)
    joint = f.joint
    q = traj.q
    pen = np.maximum(joint.q_min - q, 0.0) + np.maximum(q - joint.q_max, 0.0)
    qc = np.clip(q, joint.q_min, joint.q_max)
    return 0.5 * joint.inertia_eq * traj.v**2 + U(qc) + 0.5 * rc.k_limit * pen**2


# --------------------------------------------------------------------------
# scenario files


def scenario_from_obj(d, f):
    """Parse a scenario dict into ``(state0, external, n_steps, cfg)``."""
    from .schema import _num, _obj, _require  # shared validators

    d = _obj(d, "scenario")
    joint = f.joint
    init = _obj(d.get("initial", {}), "initial")
    if "s" in init:
        q0 = float(joint.q_of(_num(init["s"], "initial.s", 0.0, 1.0)))
    else:
        q0 = _num(init.get("q", joint.q_min), "initial.q")
    v0 = _num(init.get("v", 0.0), "initial.v")
    n_steps = d.get("n_steps")
    if isinstance(n_steps, bool) or not isinstance(n_steps, int) or n_steps < 1:
        raise ValidationError("must be a positive integer", "n_steps")
    cfg_d = _obj(d.get("config", {}), "config")
    known = {"dt", "smooth_friction", "eps_v", "limit_stiffness", "penetration_budget", "limit_ramp"}
    unknown = set(cfg_d) - known
    if unknown:
        raise ValidationError(f"unknown config keys {sorted(unknown)}", "config")
    cfg = replace(SimConfig(), **cfg_d)

    def _signal(obj, path):
        if isinstance(obj, (int, float)) and not isinstance(obj, bool):
            return float(obj)
        obj = _obj(obj, path)
        return Schedule(obj.get("t", []), obj.get("values", []), obj.get("interp", "linear"))

    force = _signal(d.get("force", 0.0), "force")
    if "hand" in d:
        hd = _obj(d["hand"], "hand")
        ctrl = HandController.default(joint, target=q0, kp=hd.get("kp"), kd=hd.get("kd"),
                                      f_max=hd.get("f_max"), r_max=hd.get("r_max"))
        external = HandDrive(ctrl, _signal(_require(hd, "command", "hand"), "hand.command"), force)
    else:
        external = force
    return SimState(0.0, q0, v0), external, n_steps, cfg

