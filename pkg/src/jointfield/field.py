"""Three-channel joint field: effect components and their composition.

A field is a list of components, each active on ``[a, b]`` of the normalized
joint coordinate ``s`` and carrying up to three local PCHIP curves in
``u = (s - a) / (b - a)``. Channels compose as

* conservative force: sum over components,
* dry-friction magnitude: max over components,
* damping coefficient: sum over components,

with friction and damping clamped at zero from below.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType

import numpy as np

from .curve import PchipCurve
from .errors import DegenerateRangeError, ValidationError


class Channel(str, enum.Enum):
    CONSERVATIVE = "conservative"
    FRICTION = "friction"
    DAMPING = "damping"


CHANNELS = (Channel.CONSERVATIVE, Channel.FRICTION, Channel.DAMPING)

COMPOSITION = MappingProxyType(
    {Channel.CONSERVATIVE: "sum", Channel.FRICTION: "max", Channel.DAMPING: "sum"}
)

JOINT_TYPES = ("revolute", "prismatic")
LIMIT_SIDES = ("low_end", "high_end", "none")
ELASTICITY_DAMPING_RATIO = MappingProxyType(
    {"none": 1.0, "weak": 0.7, "medium": 0.4, "strong": 0.15}
)


def normalize_s(q, q_min, q_max):
    """Map joint coordinate ``q`` to ``s`` in [0, 1], clamping excursions."""
    if not q_max > q_min:
        raise DegenerateRangeError(f"q_max ({q_max}) must exceed q_min ({q_min})")
    s = np.clip((np.asarray(q, dtype=float) - q_min) / (q_max - q_min), 0.0, 1.0)
    return float(s) if s.ndim == 0 else s


def _zero_gravity():
    return PchipCurve([0.0, 1.0], [0.0, 0.0])


@dataclass(frozen=True)
class JointContext:
    """Physical anchor for a joint: range, equivalent inertia and gravity load.

    ``gravity`` is the generalized gravity force along the DOF as a function
    of ``s`` (positive drives ``q`` up). Units are N or N*m depending on
    ``joint_type``.
    """

    asset_name: str
    joint_name: str
    joint_type: str
    q_min: float
    q_max: float
    inertia_eq: float
    gravity: PchipCurve = field(default_factory=_zero_gravity)
    t_ref: float = 1.0

    def __post_init__(self):
        if self.joint_type not in JOINT_TYPES:
            raise ValidationError(f"must be one of {list(JOINT_TYPES)}", "joint.joint_type")
        if not (np.isfinite(self.q_min) and np.isfinite(self.q_max)):
            raise ValidationError("joint range must be finite", "joint.q_min")
        if not self.q_max > self.q_min:
            raise DegenerateRangeError(
                f"q_max ({self.q_max}) must exceed q_min ({self.q_min})", "joint.q_max"
            )
        if not (self.inertia_eq > 0 and np.isfinite(self.inertia_eq)):
            raise ValidationError("must be positive", "joint.inertia_eq")
        if not (self.t_ref > 0 and np.isfinite(self.t_ref)):
            raise ValidationError("must be positive", "joint.t_ref")

    @property
    def delta_q(self):
        return self.q_max - self.q_min

    def s_of(self, q):
        return normalize_s(q, self.q_min, self.q_max)

    def q_of(self, s):
        return self.q_min + np.asarray(s, dtype=float) * self.delta_q

    def gravity_at(self, s):
        g = self.gravity
        return g(np.clip(s, g.xs[0], g.xs[-1]))

    def gravity_dx_at(self, s):
        """d(gravity)/ds, zero where ``s`` lies outside the gravity knot span."""
        g = self.gravity
        s = np.asarray(s, dtype=float)
        out = np.where((s >= g.xs[0]) & (s <= g.xs[-1]),
                       g.derivative(np.clip(s, g.xs[0], g.xs[-1])), 0.0)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class JointLimitHint:
    selected_side: str = "none"
    elasticity: str = "none"
    damping_ratio: float | None = None

    def __post_init__(self):
        if self.selected_side not in LIMIT_SIDES:
            raise ValidationError(f"must be one of {list(LIMIT_SIDES)}",
                                  "joint_limit_hint.selected_side")
        if self.elasticity not in ELASTICITY_DAMPING_RATIO:
            raise ValidationError(f"must be one of {list(ELASTICITY_DAMPING_RATIO)}",
                                  "joint_limit_hint.elasticity")
        if self.damping_ratio is None:
            object.__setattr__(self, "damping_ratio",
                               ELASTICITY_DAMPING_RATIO[self.elasticity])
        elif not self.damping_ratio > 0:
            raise ValidationError("must be positive", "joint_limit_hint.damping_ratio")

    def side_ratio(self, side):
        """Damping ratio used at ``side`` ("low_end" or "high_end")."""
        if self.selected_side in ("none", side):
            return self.damping_ratio
        return 1.0


@dataclass(frozen=True)
class EffectComponent:
    effect_name: str
    a: float
    b: float
    curves: MappingProxyType
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (0.0 <= self.a < self.b <= 1.0):
            raise ValidationError(f"need 0 <= a < b <= 1, got a={self.a}, b={self.b}")
        curves = {Channel(k): v for k, v in dict(self.curves).items()}
        for ch, c in curves.items():
            if not isinstance(c, PchipCurve):
                raise ValidationError(f"{ch.value} curve must be a PchipCurve")
            if c.xs[0] != 0.0 or c.xs[-1] != 1.0:
                raise ValidationError(f"{ch.value} curve must span u in [0, 1]")
            if ch is not Channel.CONSERVATIVE and np.any(c.ys < 0):
                raise ValidationError(f"{ch.value} knot values must be >= 0")
        object.__setattr__(self, "curves", MappingProxyType(curves))

    def with_curves(self, curves, a=None, b=None):
        return EffectComponent(self.effect_name, self.a if a is None else a,
                               self.b if b is None else b, curves, dict(self.provenance))


def component_eval(c, channel, s):
    """Contribution of component ``c`` to ``channel`` at ``s`` (zero outside [a, b])."""
    s = np.asarray(s, dtype=float)
    curve = c.curves.get(Channel(channel))
    if curve is None:
        out = np.zeros_like(s)
    else:
        inside = (s >= c.a) & (s <= c.b)
        u = np.clip((s - c.a) / (c.b - c.a), 0.0, 1.0)
        out = np.where(inside, curve(u), 0.0)
    return float(out) if out.ndim == 0 else out


def component_eval_dx(c, channel, s):
    """d/ds of a component contribution; one-sided values at the interval ends."""
    s = np.asarray(s, dtype=float)
    curve = c.curves.get(Channel(channel))
    if curve is None:
        out = np.zeros_like(s)
    else:
        inside = (s >= c.a) & (s <= c.b)
        u = np.clip((s - c.a) / (c.b - c.a), 0.0, 1.0)
        out = np.where(inside, curve.derivative(u) / (c.b - c.a), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ComposedField:
    components: tuple
    joint: JointContext
    joint_limit: JointLimitHint = field(default_factory=JointLimitHint)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    def __call__(self, s):
        return field_eval(self, s)

    @cached_property
    def packed(self):
        # flat arrays for the compiled simulation kernels
        from .sim import pack_field
        return pack_field(self)

    def with_components(self, components):
        return ComposedField(tuple(components), self.joint, self.joint_limit, dict(self.meta))

    def net_rest_force(self, s):
        """Conservative plus gravity force at ``s``."""
        return field_eval(self, s)[0] + self.joint.gravity_at(np.clip(s, 0.0, 1.0))


def field_eval(f, s):
    """Evaluate ``(F_cons, F_fric_max, C_damp)`` at ``s`` (clamped to [0, 1])."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    fc = np.zeros_like(s)
    ff = np.zeros_like(s)
    cd = np.zeros_like(s)
    for c in f.components:
        if Channel.CONSERVATIVE in c.curves:
            fc = fc + component_eval(c, Channel.CONSERVATIVE, s)
        if Channel.FRICTION in c.curves:
            ff = np.maximum(ff, component_eval(c, Channel.FRICTION, s))
        if Channel.DAMPING in c.curves:
            cd = cd + component_eval(c, Channel.DAMPING, s)
    ff = np.maximum(ff, 0.0)
    cd = np.maximum(cd, 0.0)
    if s.ndim == 0:
        return float(fc), float(ff), float(cd)
    return fc, ff, cd


def conservative_dx(f, s):
    """d/ds of the composed conservative channel."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    out = np.zeros_like(s)
    for c in f.components:
        if Channel.CONSERVATIVE in c.curves:
            out = out + component_eval_dx(c, Channel.CONSERVATIVE, s)
    return float(out) if out.ndim == 0 else out
