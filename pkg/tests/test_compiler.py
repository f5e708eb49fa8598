import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointfield import Channel, JointContext, PchipCurve
from jointfield.compiler import (
    STRENGTH_BANDS,
    CompileWarning,
    compile_proposal,
    compile_raw,
    reference_magnitudes,
    stable_hash,
    stable_key,
    strength_multiplier,
)
from jointfield.errors import UnknownLabelError
from jointfield.schema import parse_context, parse_proposal, parse_raw_proposal, serialize_composed

from conftest import FIXTURES

C, F, D = Channel.CONSERVATIVE, Channel.FRICTION, Channel.DAMPING


def ctx():
    return parse_context((FIXTURES / "context.json").read_text())


def one(name, a=0.0, b=1.0, c="none", f="none", d="none", rf=None):
    e = {"effect_name": name, "start_ratio": a, "end_ratio": b,
         "strength": {"conservative": c, "friction": f, "damping": d}}
    if rf:
        e["refineFactor"] = rf
    return parse_proposal(json.dumps({
        "joint_summary": {"joint_name": "door_hinge", "joint_type": "revolute"},
        "joint_limit_hint": {"selected_side": "none", "elasticity": "none"},
        "effect_proposals": [e],
    }))


def test_fnv_vectors():
    assert stable_hash(b"") == 14695981039346656037
    assert stable_hash(b"a") == 0xaf63dc4c8601ec8c
    assert stable_hash("a") == stable_hash(b"a")
    assert stable_hash(b"foobar") == 0x85944171f73967e8


def _fnv_oracle(data):
    # straight transcription with explicit modular reduction, no masking trick
    h = 0xcbf29ce484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001b3) % 2**64
    return h


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=64))
def test_fnv_matches_oracle(data):
    assert stable_hash(data) == _fnv_oracle(data)


def test_reference_magnitudes_example():
    ref = reference_magnitudes(ctx())
    assert ref.F_inertial == pytest.approx(0.62832, abs=1e-12)
    assert ref.F_ref == 3.0
    assert ref.v_ref == 1.5708
    assert ref.C_ref == pytest.approx(1.90986, abs=1e-5)
    assert ref.C_ref * ref.v_ref == ref.F_ref


def test_reference_inertial_dominant():
    j = JointContext("a", "b", "prismatic", 0.0, 1.0, 1.0)
    assert reference_magnitudes(j).F_ref == 2.0


def test_t_ref_doubling_with_gravity_dominant():
    c = ctx()
    r1 = reference_magnitudes(c)
    r2 = reference_magnitudes(dataclasses.replace(c, t_ref=2.0))
    assert r2.F_ref == r1.F_ref
    assert r2.C_ref == pytest.approx(2 * r1.C_ref, rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-2, 10), st.floats(0, 1e3))
def test_c_ref_times_v_ref_is_exact(dq, inertia, t_ref, g):
    j = JointContext("a", "b", "revolute", 0.0, dq, inertia,
                     PchipCurve([0, 1], [g, -g / 2]), t_ref)
    ref = reference_magnitudes(j)
    assert ref.C_ref * ref.v_ref == ref.F_ref
    assert ref.F_ref == pytest.approx(max(ref.G_max, ref.F_inertial), rel=1e-15)


def test_strength_multiplier_bands():
    key = b"some|key"
    assert strength_multiplier("none", key) == 0.0
    for label, (lo, hi) in STRENGTH_BANDS.items():
        for i in range(50):
            m = strength_multiplier(label, key + bytes([i]))
            assert lo <= m <= hi
    assert strength_multiplier("strong", key) == strength_multiplier("strong", key)
    with pytest.raises(UnknownLabelError):
        strength_multiplier("huge", key)


def test_stable_key_layout():
    k = stable_key(ctx(), "detent_internal", 2, C, 0.4, 0.6000001)
    assert k == b"cabinet_01|door_hinge|detent_internal|2|conservative|0.400|0.600"


def test_medium_spring_peak_in_band():
    f = compile_proposal(ctx(), one("spring_return_to_low_end", c="medium"))
    (comp,) = f.components
    assert set(comp.curves) == {C}
    assert 1.35 <= comp.curves[C].peak <= 2.25


def test_refine_factor_halves_peak():
    full = compile_proposal(ctx(), one("detent_internal", 0.2, 0.5, c="strong"))
    half = compile_proposal(ctx(), one("detent_internal", 0.2, 0.5, c="strong",
                                       rf={"conservative": 0.5}))
    assert half.components[0].curves[C].peak == 0.5 * full.components[0].curves[C].peak


def test_all_none_dropped_with_warning():
    with pytest.warns(CompileWarning):
        f = compile_proposal(ctx(), one("detent_internal"))
    assert f.components == ()
    assert f.meta["warnings"]


def test_joint_limit_mapping():
    for p in sorted((FIXTURES / "proposals").glob("*.json")):
        doc = parse_proposal(p.read_text())
        f = compile_proposal(ctx(), doc)
        assert f.joint_limit.damping_ratio == {"none": 1.0, "weak": 0.7, "medium": 0.4,
                                               "strong": 0.15}[doc.joint_limit_hint.elasticity]


def test_determinism_and_golden():
    c = ctx()
    for p in sorted((FIXTURES / "proposals").glob("*.json")):
        doc = parse_proposal(p.read_text())
        texts = {serialize_composed(compile_proposal(c, doc)) for _ in range(3)}
        assert len(texts) == 1
        golden = FIXTURES / "golden" / f"{p.stem}.composed.json"
        assert texts.pop() == golden.read_text()


def test_scale_covariance_inertial():
    j = JointContext("a", "door_hinge", "revolute", 0.0, 1.0, 0.5)
    doc = one("spring_return_to_low_end", 0.1, 0.9, c="strong", f="weak")
    base = compile_proposal(j, doc)
    big = compile_proposal(dataclasses.replace(j, inertia_eq=0.5 * 3.0), doc)
    for ch in (C, F):
        np.testing.assert_allclose(big.components[0].curves[ch].ys,
                                   3.0 * base.components[0].curves[ch].ys, rtol=1e-14)


def test_scale_covariance_gravity():
    c = ctx()
    doc = one("spring_return_to_low_end", 0.1, 0.9, c="strong", f="weak")
    base = compile_proposal(c, doc)
    g = c.gravity
    big = compile_proposal(dataclasses.replace(c, gravity=PchipCurve(g.xs, 4.0 * g.ys)), doc)
    for ch in (C, F):
        np.testing.assert_allclose(big.components[0].curves[ch].ys,
                                   4.0 * base.components[0].curves[ch].ys, rtol=1e-14)


def test_compile_raw_examples():
    c = ctx()
    zero = parse_raw_proposal(json.dumps({"control_points": {"conservative": [[0, 0], [1, 0]]}}))
    f = compile_raw(c, zero)
    assert np.all(f(np.linspace(0, 1, 101))[0] == 0.0)
    fr = parse_raw_proposal(json.dumps({"control_points": {"friction": [[0, 0.5], [1, 0.5]]}}))
    f = compile_raw(c, fr)
    assert np.all(f(np.linspace(0, 1, 101))[1] == 1.5)


def test_meta_records_reference_and_multipliers():
    f = compile_proposal(ctx(), one("detent_internal", 0.2, 0.5, c="strong", d="weak"))
    ref = f.meta["reference"]
    assert ref["C_ref"] * ref["v_ref"] == ref["F_ref"]
    m = f.components[0].provenance["multipliers"]
    assert 0.9 <= m["conservative"] <= 1.3 and m["friction"] == 0.0
    assert not math.isnan(m["damping"])
