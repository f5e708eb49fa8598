import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointfield import (
    Channel,
    ComposedField,
    EffectComponent,
    JointContext,
    PchipCurve,
    component_eval,
    field_eval,
    get_template,
    list_templates,
    normalize_s,
    template_instantiate,
)
from jointfield.errors import DegenerateRangeError, UnknownTemplateError, ValidationError
from jointfield.field import JointLimitHint, conservative_dx
from jointfield.templates import ChannelDroppedWarning

C, F, D = Channel.CONSERVATIVE, Channel.FRICTION, Channel.DAMPING

NAMES = [
    "constant_friction_hinge", "constant_damping_hinge",
    "constant_positive_conservative_hinge", "constant_negative_conservative_hinge",
    "detent_internal", "bistable_mechanism", "bistable_mechanism_internal",
    "magnetic_return_to_low_end", "magnetic_return_to_high_end",
    "spring_return_to_low_end", "spring_return_to_high_end",
    "spring_loaded_snap_detent_to_low_end", "spring_loaded_snap_detent_to_high_end",
]


def joint():
    return JointContext("a", "j", "revolute", 0.0, 1.0, 1.0)


def test_normalize_s():
    assert normalize_s(-1.0, -1.0, 3.0) == 0.0
    assert normalize_s(3.0, -1.0, 3.0) == 1.0
    assert normalize_s(0.5, 0.0, 2.0) == 0.25
    assert normalize_s(7.0, 0.0, 2.0) == 1.0
    assert normalize_s(-7.0, 0.0, 2.0) == 0.0
    with pytest.raises(DegenerateRangeError):
        normalize_s(0.0, 1.0, 1.0)


def test_component_eval_locality_and_endpoints():
    c = template_instantiate("constant_friction_hinge", 0.2, 0.8, {F: 1.0})
    assert component_eval(c, F, 0.5) == 1.0
    for s in (0.0, 0.1, 0.19, 0.81, 1.0):
        for ch in (C, F, D):
            assert component_eval(c, ch, s) == 0.0
    spring = template_instantiate("spring_return_to_high_end", 0.3, 0.6, {C: 2.0})
    assert component_eval(spring, C, 0.3) == spring.curves[C](0.0) == 2.0
    assert component_eval(spring, C, 0.6) == 0.0


def test_field_eval_composition_rules():
    j = joint()
    assert ComposedField((), j)(0.3) == (0.0, 0.0, 0.0)
    comps = (
        template_instantiate("constant_friction_hinge", 0.0, 1.0, {F: 1.0}),
        template_instantiate("constant_friction_hinge", 0.2, 0.9, {F: 2.0}),
        template_instantiate("constant_positive_conservative_hinge", 0.0, 1.0, {C: 1.0}),
        template_instantiate("constant_negative_conservative_hinge", 0.0, 1.0, {C: 0.4}),
        template_instantiate("constant_damping_hinge", 0.0, 1.0, {D: 0.3}),
        template_instantiate("constant_damping_hinge", 0.0, 0.5, {D: 0.2}),
    )
    fc, ff, cd = field_eval(ComposedField(comps, j), 0.4)
    assert ff == 2.0
    assert fc == pytest.approx(0.6, abs=1e-15)
    assert cd == pytest.approx(0.5, abs=1e-15)
    fc, ff, cd = field_eval(ComposedField(comps, j), 0.95)
    assert ff == 1.0 and cd == pytest.approx(0.3)


def test_field_eval_array_matches_scalar(rng):
    comps = (
        template_instantiate("detent_internal", 0.1, 0.5, {C: 2.0, F: 0.3}),
        template_instantiate("magnetic_return_to_high_end", 0.6, 1.0, {C: 1.5, D: 0.2}),
    )
    f = ComposedField(comps, joint())
    s = rng.uniform(0, 1, 50)
    fc, ff, cd = f(s)
    for i, si in enumerate(s):
        assert f(si) == (fc[i], ff[i], cd[i])


def test_field_clamps_out_of_range():
    f = ComposedField((template_instantiate("spring_return_to_low_end", 0, 1, {C: 3.0}),), joint())
    assert f(-0.5) == f(0.0)
    assert f(1.5) == f(1.0)


def test_list_templates_names_and_peaks():
    ts = list_templates()
    assert len(ts) == 13
    assert [t.name for t in ts] == NAMES
    for t in ts:
        for ch, proto in t.prototypes.items():
            grid = proto(np.linspace(0, 1, 10001))
            assert np.max(np.abs(grid)) == pytest.approx(1.0, abs=1e-12), (t.name, ch)


def test_supported_channels():
    assert get_template("constant_friction_hinge").supported_channels == {F}
    assert get_template("constant_damping_hinge").supported_channels == {D}
    assert get_template("constant_positive_conservative_hinge").supported_channels == {C}
    assert get_template("detent_internal").supported_channels == {C, F, D}
    with pytest.raises(UnknownTemplateError):
        get_template("nope")


def test_template_instantiate_examples():
    c = template_instantiate("spring_return_to_low_end", 0.0, 1.0, {C: 5.0})
    assert c.curves[C].ys.tolist() == [0.0, -5.0]
    c = template_instantiate("constant_friction_hinge", 0.1, 0.9, {F: 2.0})
    assert component_eval(c, F, 0.5) == 2.0
    with pytest.warns(ChannelDroppedWarning):
        c = template_instantiate("constant_friction_hinge", 0.0, 1.0, {C: 3.0, F: 1.0})
    assert C not in c.curves
    assert c.provenance["warnings"]


@pytest.mark.parametrize("base", ["spring_return", "magnetic_return", "spring_loaded_snap_detent"])
def test_mirror_symmetry(base):
    low = get_template(f"{base}_to_low_end").prototypes[C]
    high = get_template(f"{base}_to_high_end").prototypes[C]
    u = np.linspace(0, 1, 2001)
    np.testing.assert_allclose(high(u), -low(1 - u), atol=1e-12, rtol=0)


def test_detent_and_bistable_shapes():
    det = get_template("detent_internal").prototypes[C]
    assert det(0.5) == 0.0 and det(0.4) > 0 and det(0.6) < 0
    bi = get_template("bistable_mechanism").prototypes[C]
    assert bi(0.5) == 0.0 and bi(0.4) < 0 and bi(0.6) > 0


def test_component_invariants():
    with pytest.raises(ValidationError):
        EffectComponent("x", 0.5, 0.5, {})
    with pytest.raises(ValidationError):
        EffectComponent("x", 0.0, 1.0, {F: PchipCurve([0, 1], [1, -1])})
    with pytest.raises(ValidationError):
        EffectComponent("x", 0.0, 1.0, {C: PchipCurve([0, 0.5], [1, 1])})


def test_joint_limit_hint_ratios():
    assert [JointLimitHint(elasticity=e).damping_ratio
            for e in ("none", "weak", "medium", "strong")] == [1.0, 0.7, 0.4, 0.15]
    h = JointLimitHint("low_end", "strong")
    assert h.side_ratio("low_end") == 0.15 and h.side_ratio("high_end") == 1.0


def test_conservative_dx_matches_fd():
    f = ComposedField((template_instantiate("detent_internal", 0.2, 0.6, {C: 2.0}),), joint())
    for s in (0.25, 0.33, 0.47, 0.55):
        h = 1e-6
        fd = (f(s + h)[0] - f(s - h)[0]) / (2 * h)
        assert conservative_dx(f, s) == pytest.approx(fd, rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.8), st.floats(0.05, 0.2),
       st.lists(st.floats(-3, 3), min_size=5, max_size=5))
def test_locality(a, width, new_vals):
    b = a + width
    j = joint()
    edit = template_instantiate("detent_internal", a, b, {C: 1.0, F: 0.5})
    other = template_instantiate("spring_return_to_low_end", 0.0, 1.0, {C: 2.0})
    f1 = ComposedField((other, edit), j)
    proto = edit.curves[C]
    f2 = ComposedField((other, edit.with_curves({C: PchipCurve(proto.xs, new_vals),
                                                 F: edit.curves[F]})), j)
    s = np.linspace(0, 1, 1001)
    outside = (s < a) | (s > b)
    np.testing.assert_array_equal(f1(s)[0][outside], f2(s)[0][outside])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(NAMES), st.floats(0, 0.9), st.floats(0.01, 1),
                          st.floats(0, 5), st.floats(0, 5), st.floats(0, 5)),
                min_size=0, max_size=5))
def test_friction_and_damping_nonnegative(specs):
    comps = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name, a, w, sc, sf, sd in specs:
            b = min(1.0, a + w)
            comps.append(template_instantiate(name, a, b, {C: sc, F: sf, D: sd}))
    f = ComposedField(tuple(comps), joint())
    s = np.linspace(0, 1, 1001)
    fc, ff, cd = f(s)
    assert np.all(ff >= 0) and np.all(cd >= 0)
    fc2, ff2, cd2 = f(s)
    assert np.array_equal(fc, fc2) and np.array_equal(ff, ff2) and np.array_equal(cd, cd2)
