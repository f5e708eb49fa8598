"""Proposal documents, raw-curve proposals, context.json and composed.json.

Parsing is total: any input either yields a document or raises a
:class:`~jointfield.errors.ValidationError` subclass naming the failing path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .curve import PchipCurve
from .errors import (
    JointFieldError,
    ParseError,
    UnsupportedVersionError,
    ValidationError,
)
from .field import (
    CHANNELS,
    COMPOSITION,
    ELASTICITY_DAMPING_RATIO,
    JOINT_TYPES,
    LIMIT_SIDES,
    Channel,
    ComposedField,
    EffectComponent,
    JointContext,
    JointLimitHint,
)
from .templates import TEMPLATE_NAMES

COMPOSED_VERSION = "1"
STRENGTH_LABELS = ("none", "weak", "medium", "strong", "dominant")
RAW_EFFECT_NAME = "raw_curve"

_PROPOSAL_KEYS = {"effect_name", "start_ratio", "end_ratio", "strength",
                  "refineFactor", "confidence", "reason"}
_DOC_KEYS = {"joint_summary", "whole_motion_descrptn", "whole_motion_description",
             "gravity_can_be_ignored", "joint_limit_hint", "effect_proposals"}
_SUMMARY_KEYS = {"joint_name", "joint_type", "motion_description", "overall_confidence"}


@dataclass(frozen=True)
class JointSummary:
    joint_name: str
    joint_type: str
    motion_description: str = ""
    overall_confidence: float | None = None
    extra: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class EffectProposal:
    effect_name: str
    start_ratio: float
    end_ratio: float
    strength: dict
    refine_factor: dict
    confidence: float | None = None
    reason: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self):
        d = dict(self.extra)
        d.update({
            "effect_name": self.effect_name,
            "start_ratio": self.start_ratio,
            "end_ratio": self.end_ratio,
            "strength": {ch.value: self.strength[ch] for ch in CHANNELS},
            "refineFactor": {ch.value: self.refine_factor[ch] for ch in CHANNELS},
            "confidence": self.confidence,
            "reason": self.reason,
        })
        return d


@dataclass(frozen=True)
class ProposalDocument:
    joint_summary: JointSummary
    whole_motion_descrptn: str
    gravity_can_be_ignored: bool
    joint_limit_hint: JointLimitHint
    effect_proposals: tuple
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self):
        js = self.joint_summary
        d = dict(self.extra)
        d.update({
            "joint_summary": {**js.extra, "joint_name": js.joint_name,
                              "joint_type": js.joint_type,
                              "motion_description": js.motion_description,
                              "overall_confidence": js.overall_confidence},
            "whole_motion_descrptn": self.whole_motion_descrptn,
            "gravity_can_be_ignored": self.gravity_can_be_ignored,
            "joint_limit_hint": {"selected_side": self.joint_limit_hint.selected_side,
                                 "elasticity": self.joint_limit_hint.elasticity},
            "effect_proposals": [p.to_dict() for p in self.effect_proposals],
        })
        return d


@dataclass(frozen=True)
class RawCurveProposal:
    """No-template ablation output: explicit control points per channel.

    Values are in multiples of the reference force (conservative, friction)
    or the reference damping (damping).
    """

    points: dict
    joint_summary: JointSummary | None = None
    joint_limit_hint: JointLimitHint = field(default_factory=JointLimitHint)
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self):
        d = dict(self.extra)
        d["control_points"] = {ch.value: [list(p) for p in pts]
                               for ch, pts in self.points.items()}
        d["joint_limit_hint"] = {"selected_side": self.joint_limit_hint.selected_side,
                                 "elasticity": self.joint_limit_hint.elasticity}
        if self.joint_summary is not None:
            js = self.joint_summary
            d["joint_summary"] = {**js.extra, "joint_name": js.joint_name,
                                  "joint_type": js.joint_type,
                                  "motion_description": js.motion_description,
                                  "overall_confidence": js.overall_confidence}
        return d


# --------------------------------------------------------------------------
# low-level helpers


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def load_json(text):
    """Decode ``text`` (str or bytes) into a Python object or raise ParseError."""
    if isinstance(text, (bytes, bytearray, memoryview)):
        raw = bytes(text)
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"invalid UTF-8 ({e.reason})", e.start) from None
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8", "surrogatepass"))
        raise ParseError(f"malformed JSON: {e.msg}", offset) from None
    except ValueError as e:
        raise ParseError(str(e), 0) from None
    except RecursionError:
        raise ParseError("JSON nesting too deep", 0) from None


def _obj(value, path):
    if not isinstance(value, dict):
        raise ValidationError("expected an object", path)
    return value


def _require(d, key, path):
    if key not in d:
        raise ValidationError(f"missing required field {key!r}", f"{path}.{key}" if path else key)
    return d[key]


def _num(value, path, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError("expected a number", path)
    try:
        value = float(value)
    except OverflowError:
        raise ValidationError("number out of range", path) from None
    if not math.isfinite(value):
        raise ValidationError("expected a finite number", path)
    if lo is not None and value < lo or hi is not None and value > hi:
        raise ValidationError(f"must lie in [{lo}, {hi}], got {value}", path)
    return value


def _str(value, path):
    if not isinstance(value, str):
        raise ValidationError("expected a string", path)
    return value


def _choice(value, choices, path):
    if not isinstance(value, str) or value not in choices:
        raise ValidationError(f"must be one of {', '.join(choices)}; got {value!r}", path)
    return value


def _extra(d, known):
    return {k: v for k, v in d.items() if k not in known}


def _parse_summary(d, path):
    d = _obj(d, path)
    conf = d.get("overall_confidence")
    return JointSummary(
        joint_name=_str(_require(d, "joint_name", path), f"{path}.joint_name"),
        joint_type=_choice(_require(d, "joint_type", path), JOINT_TYPES, f"{path}.joint_type"),
        motion_description=_str(d.get("motion_description", ""), f"{path}.motion_description"),
        overall_confidence=None if conf is None else _num(conf, f"{path}.overall_confidence", 0, 1),
        extra=_extra(d, _SUMMARY_KEYS),
    )


def _parse_limit_hint(d, path):
    d = _obj(d, path)
    side = _choice(d.get("selected_side", "none"), LIMIT_SIDES, f"{path}.selected_side")
    el = _choice(d.get("elasticity", "none"), tuple(ELASTICITY_DAMPING_RATIO), f"{path}.elasticity")
    return JointLimitHint(side, el)


def _parse_effect(d, path, names):
    d = _obj(d, path)
    name = _str(_require(d, "effect_name", path), f"{path}.effect_name")
    if name not in names:
        raise ValidationError(
            f"unknown effect {name!r}; valid names: {', '.join(names)}", f"{path}.effect_name")
    start = _num(_require(d, "start_ratio", path), f"{path}.start_ratio", 0.0, 1.0)
    end = _num(_require(d, "end_ratio", path), f"{path}.end_ratio", 0.0, 1.0)
    if not start < end:
        raise ValidationError(
            f"start_ratio ({start}) must be less than end_ratio ({end})", f"{path}.start_ratio")
    strength_d = _obj(_require(d, "strength", path), f"{path}.strength")
    strength = {}
    for ch in CHANNELS:
        strength[ch] = _choice(strength_d.get(ch.value, "none"), STRENGTH_LABELS,
                               f"{path}.strength.{ch.value}")
    rf_d = d.get("refineFactor")
    refine = {ch: 1.0 for ch in CHANNELS}
    if rf_d is not None:
        rf_d = _obj(rf_d, f"{path}.refineFactor")
        for ch in CHANNELS:
            if ch.value in rf_d and rf_d[ch.value] is not None:
                v = _num(rf_d[ch.value], f"{path}.refineFactor.{ch.value}")
                if not v > 0:
                    raise ValidationError("must be positive", f"{path}.refineFactor.{ch.value}")
                refine[ch] = v
    conf = d.get("confidence")
    return EffectProposal(
        effect_name=name,
        start_ratio=start,
        end_ratio=end,
        strength=strength,
        refine_factor=refine,
        confidence=None if conf is None else _num(conf, f"{path}.confidence", 0.0, 1.0),
        reason=_str(d.get("reason", ""), f"{path}.reason"),
        extra=_extra(d, _PROPOSAL_KEYS),
    )


def proposal_from_obj(obj):
    d = _obj(obj, "")
    summary = _parse_summary(_require(d, "joint_summary", ""), "joint_summary")
    if "whole_motion_descrptn" in d:
        wmd = _str(d["whole_motion_descrptn"], "whole_motion_descrptn")
    else:
        wmd = _str(d.get("whole_motion_description", ""), "whole_motion_description")
    gci = d.get("gravity_can_be_ignored", False)
    if not isinstance(gci, bool):
        raise ValidationError("expected a boolean", "gravity_can_be_ignored")
    hint = _parse_limit_hint(_require(d, "joint_limit_hint", ""), "joint_limit_hint")
    effects = _require(d, "effect_proposals", "")
    if not isinstance(effects, list):
        raise ValidationError("expected a list", "effect_proposals")
    if not effects:
        raise ValidationError("at least one effect proposal is required", "effect_proposals")
    props = tuple(_parse_effect(e, f"effect_proposals[{i}]", TEMPLATE_NAMES)
                  for i, e in enumerate(effects))
    return ProposalDocument(summary, wmd, gci, hint, props, _extra(d, _DOC_KEYS))


def _total(fn, text):
    try:
        return fn(load_json(text))
    except JointFieldError:
        raise
    except (TypeError, ValueError, KeyError, OverflowError) as e:  # defensive: never leak a bare exception
        raise ValidationError(str(e)) from None


def parse_proposal(text):
    """Parse and validate a proposal document (template mode)."""
    return _total(proposal_from_obj, text)


def raw_proposal_from_obj(obj):
    d = _obj(obj, "")
    cp = _obj(_require(d, "control_points", ""), "control_points")
    points = {}
    for key, pts in cp.items():
        path = f"control_points.{key}"
        try:
            ch = Channel(key)
        except ValueError:
            raise ValidationError(
                f"unknown channel; valid: {', '.join(c.value for c in CHANNELS)}", path) from None
        if pts is None or pts == []:
            continue
        if not isinstance(pts, list) or len(pts) < 2:
            raise ValidationError("expected a list of at least two [x, y] points", path)
        clean = []
        for k, p in enumerate(pts):
            if not isinstance(p, list) or len(p) != 2:
                raise ValidationError("expected an [x, y] pair", f"{path}[{k}]")
            x = _num(p[0], f"{path}[{k}][0]", 0.0, 1.0)
            y = _num(p[1], f"{path}[{k}][1]")
            if ch is not Channel.CONSERVATIVE and y < 0:
                raise ValidationError("must be >= 0", f"{path}[{k}][1]")
            if clean and not x > clean[-1][0]:
                raise ValidationError("positions must be strictly increasing", f"{path}[{k}][0]")
            clean.append((x, y))
        if clean[0][0] != 0.0 or clean[-1][0] != 1.0:
            raise ValidationError("points must start at x=0 and end at x=1", path)
        points[ch] = tuple(clean)
    if not points:
        raise ValidationError("at least one channel needs control points", "control_points")
    summary = None
    if "joint_summary" in d:
        summary = _parse_summary(d["joint_summary"], "joint_summary")
    hint = JointLimitHint()
    if "joint_limit_hint" in d:
        hint = _parse_limit_hint(d["joint_limit_hint"], "joint_limit_hint")
    return RawCurveProposal(points, summary, hint,
                            _extra(d, {"control_points", "joint_summary", "joint_limit_hint"}))


def parse_raw_proposal(text):
    """Parse a no-template (raw control point) proposal."""
    return _total(raw_proposal_from_obj, text)


# --------------------------------------------------------------------------
# context.json / composed.json


def _curve_to_obj(c):
    return {"xs": [float(x) for x in c.xs], "ys": [float(y) for y in c.ys]}


def _curve_from_obj(d, path, nonneg=False, local=False):
    d = _obj(d, path)
    xs = _require(d, "xs", path)
    ys = _require(d, "ys", path)
    if not isinstance(xs, list) or not isinstance(ys, list):
        raise ValidationError("xs and ys must be lists", path)
    xs = [_num(x, f"{path}.xs[{i}]", 0.0, 1.0) for i, x in enumerate(xs)]
    ys = [_num(y, f"{path}.ys[{i}]") for i, y in enumerate(ys)]
    if nonneg:
        for i, y in enumerate(ys):
            if y < 0:
                raise ValidationError(f"must be >= 0, got {y}", f"{path}.ys[{i}]")
    if local and (not xs or xs[0] != 0.0 or xs[-1] != 1.0):
        raise ValidationError("local curve must span u in [0, 1]", f"{path}.xs")
    try:
        return PchipCurve(xs, ys)
    except ValidationError as e:
        raise type(e)(str(e), path) from None


def context_to_obj(ctx):
    return {
        "asset_name": ctx.asset_name,
        "joint_name": ctx.joint_name,
        "joint_type": ctx.joint_type,
        "q_min": float(ctx.q_min),
        "q_max": float(ctx.q_max),
        "inertia_eq": float(ctx.inertia_eq),
        "t_ref": float(ctx.t_ref),
        "gravity": _curve_to_obj(ctx.gravity),
    }


def context_from_obj(d, path="joint"):
    d = _obj(d, path)
    g = d.get("gravity")
    kwargs = {}
    if g is not None:
        kwargs["gravity"] = _curve_from_obj(g, f"{path}.gravity")
    if "t_ref" in d:
        kwargs["t_ref"] = _num(d["t_ref"], f"{path}.t_ref")
    try:
        return JointContext(
            asset_name=_str(_require(d, "asset_name", path), f"{path}.asset_name"),
            joint_name=_str(_require(d, "joint_name", path), f"{path}.joint_name"),
            joint_type=_choice(_require(d, "joint_type", path), JOINT_TYPES, f"{path}.joint_type"),
            q_min=_num(_require(d, "q_min", path), f"{path}.q_min"),
            q_max=_num(_require(d, "q_max", path), f"{path}.q_max"),
            inertia_eq=_num(_require(d, "inertia_eq", path), f"{path}.inertia_eq"),
            **kwargs,
        )
    except ValidationError as e:
        if e.path is not None and e.path.startswith(path):
            raise
        raise ValidationError(str(e), path) from None


def parse_context(text):
    return _total(context_from_obj, text)


def serialize_context(ctx):
    return _dump(context_to_obj(ctx))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k.value if isinstance(k, Channel) else k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Channel):
        return x.value
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _dump(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2,
                      ensure_ascii=False, allow_nan=False) + "\n"


def composed_to_obj(f):
    comps = []
    for c in f.components:
        comps.append({
            "effect_name": c.effect_name,
            "a": float(c.a),
            "b": float(c.b),
            "channels": {ch.value: _curve_to_obj(c.curves[ch]) for ch in CHANNELS if ch in c.curves},
            "provenance": c.provenance,
        })
    return {
        "version": COMPOSED_VERSION,
        "joint": context_to_obj(f.joint),
        "composition": {ch.value: rule for ch, rule in COMPOSITION.items()},
        "components": comps,
        "joint_limit": {
            "selected_side": f.joint_limit.selected_side,
            "elasticity": f.joint_limit.elasticity,
            "damping_ratio": float(f.joint_limit.damping_ratio),
        },
        "meta": f.meta,
    }


def serialize_composed(f):
    """Canonical composed.json text: sorted keys, shortest round-trip floats."""
    return _dump(composed_to_obj(f))


def composed_from_obj(d):
    d = _obj(d, "")
    version = _require(d, "version", "")
    if version != COMPOSED_VERSION:
        raise UnsupportedVersionError(
            f"unsupported composed.json version {version!r} (expected {COMPOSED_VERSION!r})",
            "version")
    joint = context_from_obj(_require(d, "joint", ""), "joint")
    comp_rules = d.get("composition")
    if comp_rules is not None:
        want = {ch.value: rule for ch, rule in COMPOSITION.items()}
        if comp_rules != want:
            raise ValidationError(f"only {want} is supported", "composition")
    raw_comps = _require(d, "components", "")
    if not isinstance(raw_comps, list):
        raise ValidationError("expected a list", "components")
    comps = []
    for i, cd in enumerate(raw_comps):
        path = f"components[{i}]"
        cd = _obj(cd, path)
        name = _str(_require(cd, "effect_name", path), f"{path}.effect_name")
        if name not in TEMPLATE_NAMES and name != RAW_EFFECT_NAME:
            raise ValidationError(f"unknown effect {name!r}", f"{path}.effect_name")
        a = _num(_require(cd, "a", path), f"{path}.a", 0.0, 1.0)
        b = _num(_require(cd, "b", path), f"{path}.b", 0.0, 1.0)
        if not a < b:
            raise ValidationError("need a < b", f"{path}.a")
        chans = _obj(cd.get("channels", {}), f"{path}.channels")
        curves = {}
        for key, cobj in chans.items():
            try:
                ch = Channel(key)
            except ValueError:
                raise ValidationError("unknown channel", f"{path}.channels.{key}") from None
            curves[ch] = _curve_from_obj(cobj, f"{path}.channels.{key}",
                                         nonneg=ch is not Channel.CONSERVATIVE, local=True)
        prov = cd.get("provenance", {})
        comps.append(EffectComponent(name, a, b, curves, _obj(prov, f"{path}.provenance")))
    lim = _obj(_require(d, "joint_limit", ""), "joint_limit")
    side = _choice(lim.get("selected_side", "none"), LIMIT_SIDES, "joint_limit.selected_side")
    el = _choice(lim.get("elasticity", "none"), tuple(ELASTICITY_DAMPING_RATIO),
                 "joint_limit.elasticity")
    ratio = lim.get("damping_ratio")
    if ratio is not None:
        ratio = _num(ratio, "joint_limit.damping_ratio")
        if not ratio > 0:
            raise ValidationError("must be positive", "joint_limit.damping_ratio")
    meta = _obj(d.get("meta", {}), "meta")
    return ComposedField(tuple(comps), joint, JointLimitHint(side, el, ratio), meta)


def parse_composed(text):
    """Parse and validate composed.json text."""
    return _total(composed_from_obj, text)
