"""Compile proposals plus joint context into a physically scaled field.

Strength labels become numeric multipliers by sampling inside a fixed band per
label. The sample position comes from a 64-bit FNV-1a hash of a stable key,
so compiling the same inputs always gives the same field.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from .curve import PchipCurve
from .errors import UnknownLabelError
from .field import CHANNELS, COMPOSITION, Channel, ComposedField, EffectComponent
from .schema import RAW_EFFECT_NAME, STRENGTH_LABELS
from .templates import get_template, template_instantiate

log = logging.getLogger(__name__)

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1

STRENGTH_BANDS = MappingProxyType({
    "none": (0.0, 0.0),
    "weak": (0.15, 0.35),
    "medium": (0.45, 0.75),
    "strong": (0.9, 1.3),
    "dominant": (1.6, 2.4),
})


class CompileWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ReferenceMagnitudes:
    F_ref: float
    v_ref: float
    C_ref: float
    G_max: float
    F_inertial: float
    a_ref: float

    def for_channel(self, channel):
        return self.C_ref if Channel(channel) is Channel.DAMPING else self.F_ref

    def to_dict(self):
        return {k: float(getattr(self, k))
                for k in ("F_ref", "v_ref", "C_ref", "G_max", "F_inertial", "a_ref")}


def reference_magnitudes(ctx):
    """Reference force, speed and damping for a joint.

    The inertial scale is the force that carries ``inertia_eq`` across the
    range from rest in ``t_ref`` at constant acceleration.
    """
    dq = ctx.delta_q
    a_ref = 2.0 * dq / ctx.t_ref**2
    f_inertial = ctx.inertia_eq * a_ref
    g_max = float(np.max(np.abs(ctx.gravity_at(np.linspace(0.0, 1.0, 1001)))))
    v_ref = dq / ctx.t_ref
    c_ref = max(g_max, f_inertial) / v_ref
    # F_ref is taken as the product so C_ref * v_ref == F_ref holds bit-exactly
    f_ref = c_ref * v_ref
    return ReferenceMagnitudes(f_ref, v_ref, c_ref, g_max, f_inertial, a_ref)


def stable_hash(key):
    """64-bit FNV-1a of ``key`` (bytes, or str encoded as UTF-8)."""
    if isinstance(key, str):
        key = key.encode("utf-8")
    state = FNV_OFFSET
    for byte in key:
        state = ((state ^ byte) * FNV_PRIME) & _MASK64
    return state


def strength_multiplier(label, key):
    try:
        lo, hi = STRENGTH_BANDS[label]
    except (KeyError, TypeError):
        raise UnknownLabelError(
            f"unknown strength label {label!r}; valid: {', '.join(STRENGTH_LABELS)}") from None
    if label == "none":
        return 0.0
    u = stable_hash(key) / 2.0**64
    return lo + u * (hi - lo)


def stable_key(ctx, effect_name, index, channel, start_ratio, end_ratio):
    return (f"{ctx.asset_name}|{ctx.joint_name}|{effect_name}|{index}|"
            f"{Channel(channel).value}|{start_ratio:.3f}|{end_ratio:.3f}").encode("utf-8")


def _base_meta(ctx, ref, mode):
    return {
        "generator": "jointfield",
        "mode": mode,
        "reference": ref.to_dict(),
        "strength_bands": {k: list(v) for k, v in STRENGTH_BANDS.items()},
        "stable_key": "asset_name|joint_name|effect_name|index|channel|start_ratio|end_ratio"
                      " (ratios to 3 decimals), FNV-1a 64",
        "composition": {ch.value: rule for ch, rule in COMPOSITION.items()},
        "warnings": [],
    }


def compile_proposal(ctx, doc):
    """Turn a validated :class:`ProposalDocument` into a :class:`ComposedField`."""
    ref = reference_magnitudes(ctx)
    meta = _base_meta(ctx, ref, "template")
    meta["proposal"] = {
        "joint_summary": {"joint_name": doc.joint_summary.joint_name,
                          "joint_type": doc.joint_summary.joint_type},
        "whole_motion_descrptn": doc.whole_motion_descrptn,
        "gravity_can_be_ignored": doc.gravity_can_be_ignored,
    }
    components = []
    for i, p in enumerate(doc.effect_proposals):
        template = get_template(p.effect_name)
        multipliers, scales = {}, {}
        for ch in CHANNELS:
            key = stable_key(ctx, p.effect_name, i, ch, p.start_ratio, p.end_ratio)
            m = strength_multiplier(p.strength[ch], key)
            multipliers[ch.value] = m
            scales[ch] = ref.for_channel(ch) * m * p.refine_factor[ch]
        if all(s == 0.0 for s in scales.values()):
            msg = f"effect_proposals[{i}] ({p.effect_name}): all strengths are none; dropped"
            warnings.warn(msg, CompileWarning, stacklevel=2)
            meta["warnings"].append(msg)
            continue
        prov = {
            "index": i,
            "reason": p.reason,
            "confidence": p.confidence,
            "strength": {ch.value: p.strength[ch] for ch in CHANNELS},
            "refine_factor": {ch.value: p.refine_factor[ch] for ch in CHANNELS},
            "multipliers": multipliers,
        }
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            comp = template_instantiate(template, p.start_ratio, p.end_ratio, scales, prov)
        for w in caught:
            meta["warnings"].append(f"effect_proposals[{i}]: {w.message}")
            warnings.warn(str(w.message), CompileWarning, stacklevel=2)
        if not comp.curves:
            continue
        components.append(comp)
    log.debug("compiled %d components for %s/%s", len(components), ctx.asset_name, ctx.joint_name)
    return ComposedField(tuple(components), ctx, doc.joint_limit_hint, meta)


def compile_raw(ctx, raw):
    """No-template ablation: adopt control points verbatim as full-range components."""
    ref = reference_magnitudes(ctx)
    meta = _base_meta(ctx, ref, "raw")
    components = []
    for ch in CHANNELS:
        pts = raw.points.get(ch)
        if not pts:
            continue
        xs, ys = zip(*pts)
        curve = PchipCurve(xs, np.asarray(ys) * ref.for_channel(ch))
        components.append(EffectComponent(RAW_EFFECT_NAME, 0.0, 1.0, {ch: curve},
                                          {"channel": ch.value, "units": "reference multiples"}))
    return ComposedField(tuple(components), ctx, raw.joint_limit_hint, meta)
