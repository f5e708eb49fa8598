"""Built-in effect-template library.

Each template carries unit-peak prototype curves in the local coordinate
``u``. Apart from the four constant templates, every template also offers a
constant-1 friction and a constant-1 damping prototype so any per-channel
strength requested for it can be realised.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from types import MappingProxyType

from .curve import PchipCurve
from .errors import UnknownTemplateError
from .field import Channel, EffectComponent

C, F, D = Channel.CONSERVATIVE, Channel.FRICTION, Channel.DAMPING


class ChannelDroppedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Template:
    name: str
    description: str
    prototypes: MappingProxyType
    placement_prior: str

    @property
    def supported_channels(self):
        return frozenset(self.prototypes)


def _curve(points):
    xs, ys = zip(*points)
    return PchipCurve(xs, ys)


def _make(name, description, placement, conservative=None, extra=(F, D)):
    protos = {}
    if conservative is not None:
        protos[C] = _curve(conservative)
    for ch in extra:
        protos[ch] = PchipCurve.constant(1.0)
    return Template(name, description, MappingProxyType(protos), placement)


_TEMPLATES = [
    _make("constant_friction_hinge",
          "Uniform dry friction across the interval; holds the joint wherever it is left.",
          "Usually the full range, or the span where the part should hold position.",
          extra=(F,)),
    _make("constant_damping_hinge",
          "Uniform viscous resistance proportional to joint speed.",
          "Usually the full range; soft-close zones near an end.",
          extra=(D,)),
    _make("constant_positive_conservative_hinge",
          "Uniform push toward increasing q.",
          "Spans where a counterbalance or assist pushes the joint open.",
          conservative=[(0.0, 1.0), (1.0, 1.0)], extra=()),
    _make("constant_negative_conservative_hinge",
          "Uniform push toward decreasing q.",
          "Spans where the joint is pulled back toward its low end.",
          conservative=[(0.0, -1.0), (1.0, -1.0)], extra=()),
    _make("detent_internal",
          "Click-stop: a local well with a stable rest point at the interval centre.",
          "Narrow interval centred on the click position.",
          conservative=[(0.0, 0.0), (0.25, 1.0), (0.5, 0.0), (0.75, -1.0), (1.0, 0.0)]),
    _make("bistable_mechanism",
          "Over-centre action: both interval ends attract, a barrier sits in the middle.",
          "Interval spanning the two rest states.",
          conservative=[(0.0, 0.0), (0.25, -1.0), (0.5, 0.0), (0.75, 1.0), (1.0, 0.0)]),
    _make("bistable_mechanism_internal",
          "Two rest points inside the interval, at one quarter and three quarters.",
          "Interval enclosing both interior rest positions.",
          conservative=[(0.0, 0.7), (0.12, 1.0), (0.25, 0.0), (0.375, -1.0), (0.5, 0.0),
                        (0.625, 1.0), (0.75, 0.0), (0.88, -1.0), (1.0, -0.7)]),
    _make("magnetic_return_to_low_end",
          "Catch-like pull toward the low end, strongest at contact and fading with distance.",
          "Short interval adjoining the low end.",
          conservative=[(0.0, -1.0), (0.35, -0.3), (0.7, -0.05), (1.0, 0.0)]),
    _make("magnetic_return_to_high_end",
          "Catch-like pull toward the high end, strongest at contact and fading with distance.",
          "Short interval adjoining the high end.",
          conservative=[(0.0, 0.0), (0.3, 0.05), (0.65, 0.3), (1.0, 1.0)]),
    _make("spring_return_to_low_end",
          "Linear spring pulling toward the low end, growing with distance from it.",
          "Broad interval starting at the low end.",
          conservative=[(0.0, 0.0), (1.0, -1.0)]),
    _make("spring_return_to_high_end",
          "Linear spring pulling toward the high end, growing with distance from it.",
          "Broad interval ending at the high end.",
          conservative=[(0.0, 1.0), (1.0, 0.0)]),
    _make("spring_loaded_snap_detent_to_low_end",
          "Latch near the low end: a resisting barrier, then a snap-in pull to the end.",
          "Interval adjoining the low end, a small fraction of the range.",
          conservative=[(0.0, -1.0), (0.35, -0.8), (0.5, 0.0), (0.7, 0.6), (1.0, 0.0)]),
    _make("spring_loaded_snap_detent_to_high_end",
          "Latch near the high end: a resisting barrier, then a snap-in pull to the end.",
          "Interval adjoining the high end, a small fraction of the range.",
          conservative=[(0.0, 0.0), (0.3, -0.6), (0.5, 0.0), (0.65, 0.8), (1.0, 1.0)]),
]

TEMPLATES = MappingProxyType({t.name: t for t in _TEMPLATES})
TEMPLATE_NAMES = tuple(TEMPLATES)


def list_templates():
    return list(_TEMPLATES)


def get_template(name):
    try:
        return TEMPLATES[name]
    except KeyError:
        raise UnknownTemplateError(
            f"unknown template {name!r}; valid names: {', '.join(TEMPLATE_NAMES)}"
        ) from None


def template_instantiate(t, a, b, channel_scales, provenance=None):
    """Place template ``t`` on ``[a, b]`` with per-channel physical scales.

    Channels with zero scale are omitted. A nonzero scale on a channel the
    template does not support is dropped with a :class:`ChannelDroppedWarning`,
    and recorded in the component provenance.
    """
    if isinstance(t, str):
        t = get_template(t)
    provenance = dict(provenance or {})
    curves = {}
    dropped = []
    for ch, scale in channel_scales.items():
        ch = Channel(ch)
        if scale == 0.0:
            continue
        if ch not in t.prototypes:
            dropped.append(ch.value)
            continue
        curves[ch] = t.prototypes[ch].scaled(scale)
    if dropped:
        msg = f"{t.name} does not support channel(s) {dropped}; dropped"
        warnings.warn(msg, ChannelDroppedWarning, stacklevel=2)
        provenance.setdefault("warnings", []).append(msg)
    return EffectComponent(t.name, float(a), float(b), curves, provenance)
