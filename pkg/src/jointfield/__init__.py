"""Position-dependent joint dynamics fields: compile, simulate, diagnose, refine."""

from .curve import PchipCurve, pchip_eval, pchip_eval_dx, pchip_grad_y, pchip_slopes
from .field import (
    Channel,
    ComposedField,
    EffectComponent,
    JointContext,
    JointLimitHint,
    component_eval,
    field_eval,
    normalize_s,
)
from .templates import Template, get_template, list_templates, template_instantiate

__version__ = "0.1.0"

__all__ = [
    "Channel",
    "ComposedField",
    "EffectComponent",
    "JointContext",
    "JointLimitHint",
    "PchipCurve",
    "Template",
    "component_eval",
    "field_eval",
    "get_template",
    "list_templates",
    "normalize_s",
    "pchip_eval",
    "pchip_eval_dx",
    "pchip_grad_y",
    "pchip_slopes",
    "template_instantiate",
]
