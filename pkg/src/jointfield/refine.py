"""Gradient-based refinement of a composed field against target trajectories.

Rollouts are rewritten in JAX (smooth friction, same update rule as the
numba kernel) and differentiated in reverse mode. Parameters are offsets
from a base field, so ``theta = 0`` reproduces it exactly:

* conservative knots: ``y0 + F_ref * p``
* damping knots: ``y0 * exp(p)``
* per (component, channel) scale: ``exp(p)`` on the whole curve
* interval anchors: ``a0 + p`` and ``b0 + p``
* joint-limit damping ratio: ``zeta0 * exp(p)``

Friction is only reachable through its scale parameters.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import jax
import jax.numpy as jnp
import numpy as np

from .compiler import reference_magnitudes
from .curve import PchipCurve
from .errors import ValidationError
from .field import CHANNELS, Channel, ComposedField, JointLimitHint
from .sim import SimConfig, Trajectory, resolve_config

jax.config.update("jax_enable_x64", True)

log = logging.getLogger(__name__)

GROUPS = ("conservative", "damping", "scales", "anchors", "limit")
SENTINEL_LOSS = 1e6
_DIVERGE_FACTOR = 1e8


@dataclass(frozen=True)
class ParamEntry:
    group: str
    component: int | None
    channel: str | None
    index: int | None

    @property
    def label(self):
        if self.group == "limit":
            return "limit.damping_ratio"
        if self.group == "anchors":
            return f"c{self.component}.{'a' if self.index == 0 else 'b'}"
        if self.group == "scales":
            return f"c{self.component}.{self.channel}.log_scale"
        return f"c{self.component}.{self.channel}.y{self.index}"


def _entries(f):
    out = []
    for i, c in enumerate(f.components):
        for ch in CHANNELS:
            cur = c.curves.get(ch)
            if cur is None:
                continue
            if ch is Channel.CONSERVATIVE:
                out += [ParamEntry("conservative", i, ch.value, k) for k in range(len(cur))]
            elif ch is Channel.DAMPING:
                out += [ParamEntry("damping", i, ch.value, k) for k in range(len(cur))]
        for ch in CHANNELS:
            if ch in c.curves:
                out.append(ParamEntry("scales", i, ch.value, None))
        out += [ParamEntry("anchors", i, None, 0), ParamEntry("anchors", i, None, 1)]
    out.append(ParamEntry("limit", None, None, None))
    return tuple(out)


@dataclass(frozen=True)
class ParamSet:
    """Flat parameter vector over a base field plus an activity mask."""

    base: ComposedField
    entries: tuple
    theta: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_field(cls, f, groups=GROUPS):
        unknown = set(groups) - set(GROUPS)
        if unknown:
            raise ValidationError(f"unknown parameter groups {sorted(unknown)}; valid: {GROUPS}")
        entries = _entries(f)
        mask = np.array([e.group in groups for e in entries], dtype=bool)
        return cls(f, entries, np.zeros(len(entries)), mask)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if theta.shape != (len(self.entries),) or mask.shape != theta.shape:
            raise ValidationError("theta and mask must match the entry count")
        theta.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "mask", mask)

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self):
        return [e.label for e in self.entries]

    @property
    def n_active(self):
        return int(self.mask.sum())

    def with_theta(self, theta):
        return replace(self, theta=theta)

    def with_mask(self, mask):
        return replace(self, mask=mask)

    def select(self, labels):
        """Activate exactly the entries named in ``labels``."""
        want = set(labels)
        missing = want - set(self.labels)
        if missing:
            raise ValidationError(f"unknown parameters {sorted(missing)}")
        return self.with_mask([lab in want for lab in self.labels])

    def pack(self):
        return {e.label: float(v) for e, v in zip(self.entries, self.theta)}

    def unpack(self, values):
        theta = np.array(self.theta)
        index = {lab: i for i, lab in enumerate(self.labels)}
        for k, v in values.items():
            if k not in index:
                raise ValidationError(f"unknown parameter {k!r}")
            theta[index[k]] = float(v)
        return self.with_theta(theta)

    def to_field(self, theta=None):
        """Hard-interval field realised at ``theta`` (default: current)."""
        theta = self.theta if theta is None else np.asarray(theta, dtype=float)
        st = _structure(self)
        comps = []
        for i, c in enumerate(self.base.components):
            cs = st.components[i]
            a = cs.a0 + theta[cs.ia]
            b = cs.b0 + theta[cs.ib]
            curves = {}
            for cv in cs.curves:
                ys = _realize_ys(np, cv, theta, st.f_ref)
                curves[Channel(cv.channel)] = PchipCurve(cv.xs, ys)
            comps.append(c.with_curves(curves, float(a), float(b)))
        hint = self.base.joint_limit
        ratio = hint.damping_ratio * math.exp(theta[st.limit_index])
        new_hint = JointLimitHint(hint.selected_side, hint.elasticity, ratio)
        meta = dict(self.base.meta)
        meta["refined"] = {e.label: float(v) for e, v in zip(self.entries, theta) if v != 0.0}
        return ComposedField(tuple(comps), self.base.joint, new_hint, meta)


# --------------------------------------------------------------------------
# static structure shared by the numpy and JAX realisations


@dataclass(frozen=True)
class _CurveSpec:
    channel: str
    xs: np.ndarray
    y0: np.ndarray
    knot_idx: np.ndarray | None  # theta indices of per-knot offsets (conservative/damping)
    scale_idx: int


@dataclass(frozen=True)
class _CompSpec:
    a0: float
    b0: float
    ia: int
    ib: int
    curves: tuple


@dataclass(frozen=True)
class _Structure:
    components: tuple
    limit_index: int
    f_ref: float


def _structure(p):
    index = {}
    for k, e in enumerate(p.entries):
        index[(e.group, e.component, e.channel, e.index)] = k
    comps = []
    for i, c in enumerate(p.base.components):
        curves = []
        for ch in CHANNELS:
            cur = c.curves.get(ch)
            if cur is None:
                continue
            knot_idx = None
            if ch is Channel.CONSERVATIVE:
                knot_idx = np.array([index[("conservative", i, ch.value, k)]
                                     for k in range(len(cur))])
            elif ch is Channel.DAMPING:
                knot_idx = np.array([index[("damping", i, ch.value, k)] for k in range(len(cur))])
            curves.append(_CurveSpec(ch.value, np.array(cur.xs), np.array(cur.ys), knot_idx,
                                     index[("scales", i, ch.value, None)]))
        comps.append(_CompSpec(c.a, c.b, index[("anchors", i, None, 0)],
                               index[("anchors", i, None, 1)], tuple(curves)))
    return _Structure(tuple(comps), index[("limit", None, None, None)],
                      reference_magnitudes(p.base.joint).F_ref)


def _realize_ys(xp, cv, theta, f_ref):
    ys = cv.y0
    if cv.channel == "conservative":
        ys = ys + f_ref * theta[cv.knot_idx]
    elif cv.channel == "damping":
        ys = ys * xp.exp(theta[cv.knot_idx])
    return ys * xp.exp(theta[cv.scale_idx])


# --------------------------------------------------------------------------
# JAX model: curves are stacked into padded arrays so one compiled function
# serves every field whose padded shapes agree (generous minimum sizes keep
# typical fields in a single bucket)

_CODES = {"conservative": 0, "friction": 1, "damping": 2}


def _bucket(n, lo):
    return max(lo, 1 << max(n - 1, 0).bit_length())


def _pad_curve(xs, ys, k):
    n = xs.size
    # padding continues the abscissae with unit steps so every row stays
    # strictly increasing; the real knot count masks it out
    px = np.concatenate([xs, xs[-1] + np.arange(1, k - n + 1)])
    py = np.concatenate([ys, np.full(k - n, ys[-1])])
    return px, py


def _pack(p, cfg):
    """Field, joint and solver constants as arrays, plus the static flags."""
    st = _structure(p)
    specs = [(ci, cv) for ci, c in enumerate(st.components) for cv in c.curves]
    n_theta = len(p)
    t_len = _bucket(n_theta + 1, 64)
    dummy = t_len - 1  # always-zero slot for padding and unparameterised knots
    k = _bucket(max([cv.xs.size for _, cv in specs] + [2]), 16)
    n_rows = _bucket(len(specs), 16)
    n_comp = _bucket(len(st.components), 8)
    xs = np.zeros((n_rows, k))
    xs[:] = np.arange(k)
    y0 = np.zeros((n_rows, k))
    n = np.full(n_rows, 2, dtype=np.int64)
    ki = np.full((n_rows, k), dummy, dtype=np.int64)
    si = np.full(n_rows, dummy, dtype=np.int64)
    code = np.full(n_rows, -1, dtype=np.int64)
    comp = np.zeros(n_rows, dtype=np.int64)
    for r, (ci, cv) in enumerate(specs):
        xs[r], y0[r] = _pad_curve(cv.xs, cv.y0, k)
        n[r] = cv.xs.size
        if cv.knot_idx is not None:
            ki[r, :cv.xs.size] = cv.knot_idx
        si[r] = cv.scale_idx
        code[r] = _CODES[cv.channel]
        comp[r] = ci
    a0 = np.zeros(n_comp)
    b0 = np.ones(n_comp)
    ia = np.full(n_comp, dummy, dtype=np.int64)
    ib = np.full(n_comp, dummy, dtype=np.int64)
    for ci, c in enumerate(st.components):
        a0[ci], b0[ci], ia[ci], ib[ci] = c.a0, c.b0, c.ia, c.ib
    j = p.base.joint
    g = j.gravity
    kg = _bucket(g.xs.size, 4)
    gxs, gys = _pad_curve(np.asarray(g.xs), np.asarray(g.ys), kg)
    gds = np.concatenate([g.ds, np.zeros(kg - g.xs.size)])
    rc = resolve_config(replace(cfg.sim, smooth_friction=True), p.base)
    hint = p.base.joint_limit
    data = {
        "xs": xs, "y0": y0, "n": n, "ki": ki, "si": si, "code": code, "comp": comp,
        "a0": a0, "b0": b0, "ia": ia, "ib": ib,
        "gxs": gxs[None], "gys": gys[None], "gds": gds[None],
        "gn": np.array([g.xs.size], dtype=np.int64),
        "g_lo": float(g.xs[0]), "g_hi": float(g.xs[-1]),
        "f_ref": st.f_ref, "q_min": j.q_min, "q_max": j.q_max, "inertia": j.inertia_eq,
        "eps_v": rc.eps_v, "k_lim": rc.k_limit, "ramp": rc.ramp,
        "crit": 2.0 * math.sqrt(rc.k_limit * j.inertia_eq),
        "zeta0": hint.damping_ratio, "limit": st.limit_index,
        "low_h": float(hint.selected_side in ("none", "low_end")),
        "high_h": float(hint.selected_side in ("none", "high_end")),
        "band": cfg.anchor_band,
    }
    comps = st.components
    smooth = bool(comps) and bool(np.any(p.mask[[c.ia for c in comps] + [c.ib for c in comps]]))
    return data, t_len, smooth


def _row_gather(a, i):
    return jnp.take_along_axis(a, i[:, None], axis=1)[:, 0]


def _jax_slopes(xs, ys, n):
    """Monotone Hermite slopes for each padded row with ``n`` real knots."""
    h = jnp.diff(xs, axis=1)
    m = jnp.diff(ys, axis=1) / h
    m1, m2 = m[:, :-1], m[:, 1:]
    h1, h2 = h[:, :-1], h[:, 1:]
    w1 = 2.0 * h2 + h1
    w2 = h2 + 2.0 * h1
    same = m1 * m2 > 0.0
    # keep the untaken branch finite so its gradient cannot poison the result
    m1s = jnp.where(same, m1, 1.0)
    m2s = jnp.where(same, m2, 1.0)
    inner = jnp.where(same, (w1 + w2) / (w1 / m1s + w2 / m2s), 0.0)

    def edge(h0, h1_, m0, m1_):
        d = ((2.0 * h0 + h1_) * m0 - h0 * m1_) / (h0 + h1_)
        d = jnp.where(jnp.sign(d) != jnp.sign(m0), 0.0, d)
        clamp = (jnp.sign(m0) != jnp.sign(m1_)) & (jnp.abs(d) > 3.0 * jnp.abs(m0))
        return jnp.where(clamp, 3.0 * m0, d)

    last = n - 2
    prev = jnp.maximum(n - 3, 0)
    two = n == 2
    d0 = jnp.where(two, m[:, 0], edge(h[:, 0], h[:, 1], m[:, 0], m[:, 1]))
    dn = jnp.where(two, m[:, 0], edge(_row_gather(h, last), _row_gather(h, prev),
                                      _row_gather(m, last), _row_gather(m, prev)))
    col = jnp.arange(xs.shape[1])[None, :]
    body = jnp.concatenate([d0[:, None], inner, jnp.zeros_like(d0)[:, None]], axis=1)
    return jnp.where(col == (n - 1)[:, None], dn[:, None],
                     jnp.where(col < (n - 1)[:, None], body, 0.0))


def _jax_hermite(xs, ys, ds, n, x):
    """Evaluate each padded row at its own abscissa ``x``."""
    i = jnp.clip(jnp.sum(xs <= x[:, None], axis=1) - 1, 0, n - 2)
    x0 = _row_gather(xs, i)
    h = _row_gather(xs, i + 1) - x0
    t = (x - x0) / h
    t1 = 1.0 - t
    h10 = t * t1 * t1
    h01 = t * t * (3.0 - 2.0 * t)
    h11 = t * t * (t - 1.0)
    y0 = _row_gather(ys, i)
    y1 = _row_gather(ys, i + 1)
    val = y0 + h01 * (y1 - y0) + h * (h10 * _row_gather(ds, i) + h11 * _row_gather(ds, i + 1))
    return jnp.where(t == 1.0, y1, val)


def _smoothstep(x):
    x = jnp.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass(frozen=True)
class RefineConfig:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    anchor_margin: float = 0.01
    anchor_band: float = 0.01
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValidationError("lr must be positive", "lr")


def _realize(d, theta):
    t = theta[d["ki"]]
    cons = (d["code"] == 0)[:, None]
    damp = (d["code"] == 2)[:, None]
    ys = jnp.where(cons, d["y0"] + d["f_ref"] * t, jnp.where(damp, d["y0"] * jnp.exp(t), d["y0"]))
    ys = ys * jnp.exp(theta[d["si"]])[:, None]
    a = d["a0"] + theta[d["ia"]]
    b = d["b0"] + theta[d["ib"]]
    zeta = d["zeta0"] * jnp.exp(theta[d["limit"]])
    c_low = d["crit"] * jnp.where(d["low_h"] > 0, zeta, 1.0)
    c_high = d["crit"] * jnp.where(d["high_h"] > 0, zeta, 1.0)
    return ys, _jax_slopes(d["xs"], ys, d["n"]), a, b, c_low, c_high


def _forces(d, model, q, v, smooth):
    ys, ds, a, b, c_low, c_high = model
    q_min, q_max = d["q_min"], d["q_max"]
    s = jnp.clip((q - q_min) / (q_max - q_min), 0.0, 1.0)
    ac, bc = a[d["comp"]], b[d["comp"]]
    u = jnp.clip((s - ac) / (bc - ac), 0.0, 1.0)
    if smooth:
        band = d["band"]
        w = _smoothstep((s - (ac - band)) / band) * _smoothstep(((bc + band) - s) / band)
    else:
        w = jnp.where((s >= ac) & (s <= bc), 1.0, 0.0)
    val = w * _jax_hermite(d["xs"], ys, ds, d["n"], jnp.broadcast_to(u, ac.shape))
    code = d["code"]
    fc = jnp.sum(jnp.where(code == 0, val, 0.0))
    ff = jnp.max(jnp.where(code == 1, val, 0.0))
    cd = jnp.maximum(jnp.sum(jnp.where(code == 2, val, 0.0)), 0.0)
    sg = jnp.clip(s, d["g_lo"], d["g_hi"])
    g = _jax_hermite(d["gxs"], d["gys"], d["gds"], d["gn"], sg[None])[0]
    p_low = q_min - q
    p_high = q - q_max
    w_low = jnp.clip(p_low / d["ramp"], 0.0, 1.0)
    w_high = jnp.clip(p_high / d["ramp"], 0.0, 1.0)
    k_lim = d["k_lim"]
    lim = jnp.where(q < q_min, k_lim * p_low - w_low * c_low * v,
                    jnp.where(q > q_max, -k_lim * p_high - w_high * c_high * v, 0.0))
    return fc + g + lim, ff, cd


def _simulate(d, theta, q0, v0, applied, dt, smooth):
    model = _realize(d, theta)
    inertia = d["inertia"]

    def body(carry, f_app):
        q, v = carry
        f_nf, ff, cd = _forces(d, model, q, v, smooth)
        f_nf = f_nf + f_app
        v_star = (v + dt * f_nf / inertia) / (1.0 + dt * cd / inertia)
        dv_max = dt * ff / inertia
        eps = jnp.maximum(d["eps_v"], dv_max)
        v_new = v_star - dv_max * jnp.tanh(v_star / eps)
        q_new = q + dt * v_new
        return (q_new, v_new), (q_new, v_new)

    q0 = jnp.asarray(q0, dtype=float)
    v0 = jnp.asarray(v0, dtype=float)
    _, (qs, vs) = jax.lax.scan(body, (q0, v0), applied)
    return jnp.concatenate([q0[None], qs]), jnp.concatenate([v0[None], vs])


def _sse(theta, d, q0, v0, applied, dt, q_target, smooth):
    q, _ = _simulate(d, theta, q0, v0, applied, dt, smooth)
    r = (q - q_target) / (d["q_max"] - d["q_min"])
    return jnp.sum(r * r), q


_sim_j = jax.jit(_simulate, static_argnames="smooth")
_val_j = jax.jit(_sse, static_argnames="smooth")
_vg_j = jax.jit(jax.value_and_grad(_sse, has_aux=True), static_argnames="smooth")


def _theta_ext(theta, t_len):
    out = np.zeros(t_len)
    out[:len(theta)] = theta
    return jnp.asarray(out)


# --------------------------------------------------------------------------
# targets and losses


@dataclass(frozen=True)
class Target:
    """A recorded trajectory; forces in it are replayed open loop."""

    traj: Trajectory
    q0: float | None = None
    v0: float | None = None

    @property
    def initial(self):
        q0 = float(self.traj.q[0]) if self.q0 is None else float(self.q0)
        v0 = float(self.traj.v[0]) if self.v0 is None else float(self.v0)
        return q0, v0

    @property
    def applied(self):
        # row k's force acts over [t_k, t_k + dt]; the last row starts no step
        return np.asarray(self.traj.applied_force[:-1], dtype=float)


def _as_targets(targets):
    out = []
    for t in targets:
        out.append(t if isinstance(t, Target) else Target(t))
    if not out:
        raise ValidationError("at least one target trajectory is required")
    return out


def smooth_rollout(params, q0, v0, applied, dt, cfg=None, theta=None):
    """Differentiable-mode rollout as a :class:`Trajectory` (q and v only)."""
    cfg = cfg or RefineConfig()
    theta = params.theta if theta is None else theta
    data, t_len, smooth = _pack(params, cfg)
    applied = np.asarray(applied, dtype=float)
    q, v = _sim_j(data, _theta_ext(theta, t_len), q0, v0, applied, dt, smooth=smooth)
    n = applied.size
    t = np.arange(n + 1) * dt
    return Trajectory(t, np.asarray(q), np.asarray(v), np.concatenate([applied, [0.0]]))


@dataclass(frozen=True)
class LossEval:
    loss: float
    grad: np.ndarray
    diverged: tuple
    per_target: tuple


def _diverged(q, bounds):
    q_min, q_max = bounds
    mid = 0.5 * (q_min + q_max)
    return (not np.all(np.isfinite(q))) or bool(np.any(np.abs(q - mid) >
                                                        _DIVERGE_FACTOR * (q_max - q_min)))


def loss_and_grad(params, targets, cfg=None, theta=None, need_grad=True):
    """Mean squared normalized q error over all targets and rows, and its gradient.

    Per-target sums are combined with ``math.fsum`` entry by entry, so the
    result does not depend on target order. A diverged rollout contributes
    :data:`SENTINEL_LOSS` and a zero gradient, and is flagged.
    """
    cfg = cfg or RefineConfig()
    targets = _as_targets(targets)
    theta = params.theta if theta is None else np.asarray(theta, dtype=float)
    data, t_len, smooth = _pack(params, cfg)
    bounds = (data["q_min"], data["q_max"])
    th = _theta_ext(theta, t_len)
    sums, grads, flags = [], [], []
    n_total = 0
    for t in targets:
        q0, v0 = t.initial
        args = (th, data, q0, v0, t.applied, t.traj.dt, t.traj.q)
        if need_grad:
            (s, q), g = _vg_j(*args, smooth=smooth)
            g = np.asarray(g)[:len(params)]
        else:
            s, q = _val_j(*args, smooth=smooth)
            g = np.zeros(len(params))
        s = float(s)
        bad = _diverged(np.asarray(q), bounds) or not math.isfinite(s) or \
            not np.all(np.isfinite(g))
        flags.append(bad)
        n_total += t.traj.q.size
        if bad:
            sums.append(None)
            grads.append(np.zeros(len(params)))
        else:
            sums.append(s)
            grads.append(g)
    if any(flags):
        log.warning("diverged rollout in %d of %d targets", sum(flags), len(flags))
        return LossEval(SENTINEL_LOSS, np.zeros(len(params)), tuple(flags),
                        tuple(SENTINEL_LOSS if s is None else s for s in sums))
    loss = math.fsum(sums) / n_total
    stacked = np.stack(grads)
    grad = np.array([math.fsum(stacked[:, k]) for k in range(stacked.shape[1])]) / n_total
    grad = np.where(params.mask, grad, 0.0)
    return LossEval(loss, grad, tuple(flags), tuple(sums))


def trajectory_loss(params, targets, cfg=None, theta=None):
    return loss_and_grad(params, targets, cfg, theta, need_grad=False).loss


def loss_grad(params, targets, cfg=None, theta=None):
    return loss_and_grad(params, targets, cfg, theta).grad


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(theta, grad, state, cfg, mask):
    state.step += 1
    g = np.where(mask, grad, 0.0)
    state.m = np.where(mask, cfg.beta1 * state.m + (1 - cfg.beta1) * g, state.m)
    state.v = np.where(mask, cfg.beta2 * state.v + (1 - cfg.beta2) * g * g, state.v)
    m_hat = state.m / (1 - cfg.beta1**state.step)
    v_hat = state.v / (1 - cfg.beta2**state.step)
    delta = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return np.where(mask, theta - delta, theta)


def project_anchors(params, theta, margin=0.01):
    """Keep each active interval inside [0, 1] with ``b - a >= margin``."""
    theta = np.array(theta, dtype=float)
    for c in _structure(params).components:
        act_a, act_b = params.mask[c.ia], params.mask[c.ib]
        if not (act_a or act_b):
            continue
        a = c.a0 + theta[c.ia]
        b = c.b0 + theta[c.ib]
        if act_a and act_b:
            a = min(max(a, 0.0), 1.0 - margin)
            b = min(max(b, a + margin), 1.0)
        elif act_a:
            a = min(max(a, 0.0), b - margin)
        else:
            b = min(max(b, a + margin), 1.0)
        if act_a:
            theta[c.ia] = a - c.a0
        if act_b:
            theta[c.ib] = b - c.b0
    return theta


@dataclass
class OptimizeResult:
    params: ParamSet
    history: list
    best_loss: float
    best_iter: int
    adam: AdamState
    diverged: list
    wall_time: float

    def report(self):
        delta = {lab: float(v) for lab, v, m in zip(self.params.labels, self.params.theta,
                                                    self.params.mask) if m}
        return {
            "loss_history": [float(x) for x in self.history],
            "initial_loss": float(self.history[0]),
            "best_loss": float(self.best_loss),
            "best_iter": int(self.best_iter),
            "n_updates": int(self.adam.step),
            "diverged_iters": [i for i, d in enumerate(self.diverged) if d],
            "parameter_deltas": delta,
            "wall_time_s": float(self.wall_time),
        }


def optimize(params0, targets, cfg=None, n_iters=50):
    """Adam on the active parameters; returns the best iterate seen.

    ``history[k]`` is the loss at the k-th iterate (``history[0]`` is the
    starting point), so it has ``n_iters + 1`` entries.
    """
    if not isinstance(n_iters, int) or n_iters < 1:
        raise ValidationError("n_iters must be a positive integer", "n_iters")
    cfg = cfg or RefineConfig()
    targets = _as_targets(targets)
    t0 = time.perf_counter()
    mask = params0.mask
    theta = project_anchors(params0, params0.theta, cfg.anchor_margin)
    theta = np.where(mask, theta, params0.theta)
    state = AdamState.zeros(len(params0))
    history, diverged = [], []
    best_theta, best_loss, best_iter = theta, math.inf, 0
    for it in range(n_iters + 1):
        ev = loss_and_grad(params0, targets, cfg, theta)
        history.append(ev.loss)
        diverged.append(any(ev.diverged))
        if ev.loss < best_loss:
            best_theta, best_loss, best_iter = theta, ev.loss, it
        log.info("iter %d loss %.6e", it, ev.loss)
        if it == n_iters:
            break
        theta = adam_update(theta, ev.grad, state, cfg, mask)
        theta = project_anchors(params0, theta, cfg.anchor_margin)
    return OptimizeResult(params0.with_theta(best_theta), history, best_loss, best_iter,
                          state, diverged, time.perf_counter() - t0)
