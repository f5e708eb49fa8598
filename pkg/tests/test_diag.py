import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointfield import Channel, ComposedField, JointContext, PchipCurve, template_instantiate
from jointfield.diag import (
    CSV_HEADER,
    Annotations,
    analysis_json,
    equilibria,
    normalize_curve,
    profile_grid,
    quasi_static_open_force,
    render_svg,
    resample,
    stick_regions,
)
from jointfield.schema import parse_composed
from jointfield.synth import fridge_field, random_field

from conftest import FIXTURES

C, F, D = Channel.CONSERVATIVE, Channel.FRICTION, Channel.DAMPING


def joint(gravity=None):
    g = gravity if gravity is not None else PchipCurve([0, 1], [0, 0])
    return JointContext("a", "b", "revolute", 0.0, 1.0, 1.0, g)


def field(*comps, gravity=None):
    return ComposedField(tuple(comps), joint(gravity))


def test_profile_grid_examples():
    g = profile_grid(field())
    for arr in (g.f_cons, g.f_fric_max, g.c_damp, g.gravity_balance, g.band_lo, g.band_hi):
        assert np.all(arr == 0)
    assert g.s[0] == 0.0 and g.s[-1] == 1.0 and g.s.size == 1001
    g = profile_grid(field(template_instantiate("constant_friction_hinge", 0, 1, {F: 2.0})))
    assert np.all(g.band_lo == -2.0) and np.all(g.band_hi == 2.0)
    assert np.all(g.band_hi >= g.band_lo)


def test_csv_layout():
    g = profile_grid(field(template_instantiate("detent_internal", 0.2, 0.6, {C: 1.0})), 11)
    lines = g.to_csv().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 12
    assert [float(x) for x in lines[3].split(",")][0] == 0.2


def test_stick_regions_examples():
    g = profile_grid(field(template_instantiate("constant_friction_hinge", 0, 1, {F: 1.0})))
    assert stick_regions(g) == [(0.0, 1.0)]
    g = profile_grid(field(template_instantiate("detent_internal", 0.0, 1.0, {C: 1.0})))
    assert stick_regions(g) == []
    g = profile_grid(field(template_instantiate("spring_return_to_low_end", 0, 1,
                                                {C: 2.0, F: 0.5})))
    (region,) = stick_regions(g)
    assert region[0] == 0.0
    assert region[1] == pytest.approx(0.25, abs=1e-12)


def test_equilibria_examples():
    f = field(template_instantiate("detent_internal", 0.3, 0.7, {C: 1.0}))
    (e,) = equilibria(profile_grid(f), f)
    assert e.s == pytest.approx(0.5, abs=1e-9) and e.stability == "stable"
    f = field(template_instantiate("bistable_mechanism", 0.0, 1.0, {C: 1.0}))
    (e,) = equilibria(profile_grid(f), f)
    assert e.s == pytest.approx(0.5, abs=1e-9) and e.stability == "unstable"
    f = field(gravity=PchipCurve([0, 1], [0.7, 0.7]))
    assert equilibria(profile_grid(f), f) == []


def test_equilibrium_bisection_tolerance():
    # root of -2s + 0.3 sits off-grid at 0.15 for a 7-point grid
    f = field(template_instantiate("spring_return_to_low_end", 0, 1, {C: 2.0}),
              gravity=PchipCurve([0, 1], [0.3, 0.3]))
    (e,) = equilibria(profile_grid(f, 7), f)
    assert abs(e.s - 0.15) <= 1e-9 and e.stability == "stable"


def test_open_force_examples():
    g = profile_grid(field())
    assert np.all(quasi_static_open_force(field(), g) == 0)
    f = field(template_instantiate("constant_friction_hinge", 0, 1, {F: 1.0}))
    assert np.all(quasi_static_open_force(f) == 1.0)
    f = field(template_instantiate("magnetic_return_to_low_end", 0.0, 0.4, {C: 3.0}),
              template_instantiate("constant_friction_hinge", 0, 1, {F: 0.5}))
    g = profile_grid(f)
    fo = quasi_static_open_force(f, g)
    assert fo[0] == 3.5
    inside = g.s <= 0.4
    assert np.all(np.diff(fo[inside]) <= 0)
    assert fo[inside][-1] == 0.5


def test_open_force_direction_flip():
    f = field(template_instantiate("spring_return_to_low_end", 0, 1, {C: 2.0, F: 0.1}))
    g = profile_grid(f)
    up = quasi_static_open_force(f, g)
    down = quasi_static_open_force(f, g, direction=-1)
    np.testing.assert_allclose(up + down, 2 * g.f_fric_max)


def test_normalize_and_resample():
    y = np.array([2.0, 4.0, 3.0])
    assert normalize_curve(y).tolist() == [0.0, 1.0, 0.5]
    assert np.all(normalize_curve(np.ones(4)) == 0)
    f = fridge_field()
    g = profile_grid(f)
    fo = normalize_curve(quasi_static_open_force(f, g))
    deg = np.linspace(0, 60, 61)
    r = resample(g, fo, np.deg2rad(deg))
    assert r.shape == (61,)
    assert r[0] == fo[0]
    assert np.all((r >= 0) & (r <= 1))


def test_fridge_open_force_shape():
    f = fridge_field()
    fo = quasi_static_open_force(f)
    assert fo[0] > 0
    d = np.diff(fo)
    assert np.any(d > 0) and np.any(d < 0)


def test_analysis_json():
    f = fridge_field()
    obj = json.loads(analysis_json(profile_grid(f), f))
    assert set(obj) == {"joint", "n_points", "reference", "stick_regions", "equilibria"}
    assert obj["stick_regions"]


def test_svg_deterministic_and_golden():
    f = parse_composed((FIXTURES / "golden" / "p04_detent.composed.json").read_text())
    g = profile_grid(f)
    ann = Annotations(tuple(equilibria(g, f)), tuple(stick_regions(g)), True, title="p04")
    svg = render_svg(g, ann)
    assert svg == render_svg(g, ann)
    assert svg == (FIXTURES / "golden" / "p04_detent.svg").read_text()
    assert 'class="stick"' in svg


def test_svg_equilibrium_markers():
    f = field(template_instantiate("detent_internal", 0.3, 0.7, {C: 1.0}),
              template_instantiate("bistable_mechanism", 0.75, 1.0, {C: 1.0}))
    g = profile_grid(f)
    svg = render_svg(g, Annotations(tuple(equilibria(g, f))))
    assert svg.count('class="equilibrium stable"') == 1
    assert svg.count('class="equilibrium unstable"') == 1


def test_jump_sign_change_is_flagged():
    f = field(template_instantiate("constant_positive_conservative_hinge", 0.0, 0.5003, {C: 1.0}),
              template_instantiate("constant_negative_conservative_hinge", 0.5003, 1.0, {C: 1.0}))
    (e,) = equilibria(profile_grid(f), f)
    assert e.kind == "jump" and e.stability == "stable"


def test_svg_empty_field():
    svg = render_svg(profile_grid(field()))
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert 'class="conservative"' in svg and 'class="gravity-balance"' in svg
    assert 'class="stick"' not in svg


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stable_equilibria_lie_in_stick_regions(seed):
    rng = np.random.default_rng(seed)
    f = random_field(rng)
    g = profile_grid(f)
    regions = stick_regions(g)
    for e in equilibria(g, f):
        if e.kind == "root" and e.stability == "stable" and f(e.s)[1] > 0:
            assert any(lo < e.s < hi for lo, hi in regions)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_open_force_band_consistency(seed):
    f = random_field(np.random.default_rng(seed))
    g = profile_grid(f)
    fo = quasi_static_open_force(f, g)
    mask = g.net_rest_force <= 0
    assert np.all(fo[mask] >= 0)
