"""Diagnostic profiles: stick regions, equilibria, opening force and SVG plots.

The plot follows a simple reading rule. The red curve is the conservative
force and the blue dashed line is ``-gravity(s)``, the conservative force
that would exactly cancel gravity. Where red lies above blue the net rest
force pushes ``q`` up, below it pushes ``q`` down. The grey band spans
``-gravity -/+ F_fric_max``: a joint released at rest stays put wherever red
lies inside the band.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .compiler import reference_magnitudes
from .field import conservative_dx, field_eval, normalize_s

CSV_HEADER = "s,f_cons,f_fric_max,c_damp,gravity_balance,band_lo,band_hi"

_UNITS = {"revolute": ("rad", "N·m", "N·m·s/rad"), "prismatic": ("m", "N", "N·s/m")}


@dataclass(frozen=True)
class ProfileGrid:
    s: np.ndarray
    f_cons: np.ndarray
    f_fric_max: np.ndarray
    c_damp: np.ndarray
    gravity_balance: np.ndarray
    joint: object = field(repr=False, compare=False)

    @property
    def band_lo(self):
        return self.gravity_balance - self.f_fric_max

    @property
    def band_hi(self):
        return self.gravity_balance + self.f_fric_max

    @property
    def net_rest_force(self):
        return self.f_cons - self.gravity_balance

    @property
    def q(self):
        return self.joint.q_of(self.s)

    def to_csv(self):
        cols = (self.s, self.f_cons, self.f_fric_max, self.c_damp, self.gravity_balance,
                self.band_lo, self.band_hi)
        rows = [CSV_HEADER]
        rows.extend(",".join(repr(float(x)) for x in r) for r in zip(*cols))
        return "\n".join(rows) + "\n"


def profile_grid(f, n_points=1001):
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    s = np.linspace(0.0, 1.0, n_points)
    fc, ff, cd = field_eval(f, s)
    g = f.joint.gravity_at(s)
    return ProfileGrid(s, fc, ff, cd, -g, f.joint)


def _crossing(s0, s1, m0, m1):
    # linear zero of the margin between two grid points of opposite sign
    return s0 + (s1 - s0) * m0 / (m0 - m1)


def stick_regions(grid):
    """Maximal s-intervals where static friction can hold the joint at rest.

    The margin ``F_fric_max - |F_cons + gravity|`` is nonnegative on each
    returned interval; interval ends are refined by linear interpolation of
    the margin between grid points. Zero-width (isolated point) regions are
    dropped.
    """
    s = grid.s
    m = grid.f_fric_max - np.abs(grid.net_rest_force)
    ok = m >= 0.0
    regions = []
    n = s.size
    i = 0
    while i < n:
        if not ok[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and ok[j + 1]:
            j += 1
        lo = s[i] if i == 0 else _crossing(s[i - 1], s[i], m[i - 1], m[i])
        hi = s[j] if j == n - 1 else _crossing(s[j], s[j + 1], m[j], m[j + 1])
        if hi > lo:
            regions.append((float(lo), float(hi)))
        i = j + 1
    return regions


def _bisect(fn, lo, hi, f_lo, tol):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Equilibrium:
    s: float
    q: float
    stability: str
    slope: float
    kind: str = "root"  # "jump" when the sign change is a step at a component edge


def equilibria(grid, f, tol=1e-9):
    """Sign changes of ``F_cons + gravity`` refined by bisection.

    Stability comes from the sign of the spatial derivative (negative means
    a restoring force, hence stable); where the derivative vanishes the sign
    pattern across the root decides. Touching zeros without a sign change and
    zero plateaus bounded by the same sign are not reported. A sign change
    across a step (component edge) is reported with ``kind="jump"`` and
    classified by the sign pattern alone.
    """
    r = grid.net_rest_force
    s = grid.s
    sign = np.sign(r)
    jump_tol = 1e-5 * max(float(np.max(np.abs(r))), 1e-300)

    def fn(x):
        return float(f.net_rest_force(x))

    out = []
    n = s.size
    i = 0
    while i < n - 1:
        if sign[i] == 0:
            i += 1
            continue
        j = i + 1
        while j < n and sign[j] == 0:
            j += 1
        if j == n:
            break
        if sign[j] != sign[i]:
            kind = "root"
            if j == i + 1:
                root = _bisect(fn, s[i], s[j], r[i], tol)
                lo, hi = max(s[i], root - tol), min(s[j], root + tol)
                if abs(fn(lo)) + abs(fn(hi)) > jump_tol:
                    kind = "jump"
            else:
                root = 0.5 * (s[i + 1] + s[j - 1])
            slope = float(conservative_dx(f, root) + f.joint.gravity_dx_at(root))
            if kind == "root" and slope < 0:
                stab = "stable"
            elif kind == "root" and slope > 0:
                stab = "unstable"
            else:
                stab = "stable" if sign[i] > 0 else "unstable"
            out.append(Equilibrium(float(root), float(f.joint.q_of(root)), stab, slope, kind))
        i = j
    return out


def quasi_static_open_force(f, grid=None, direction=1, normalize=False):
    """External force needed to move the joint open at negligible speed.

    ``direction=1`` opens toward increasing q, ``-1`` toward decreasing q.
    The result is expressed along the opening direction, so positive values
    push the joint open.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be 1 or -1")
    grid = grid if grid is not None else profile_grid(f)
    f_open = -direction * grid.net_rest_force + grid.f_fric_max
    return normalize_curve(f_open) if normalize else f_open


def normalize_curve(y):
    """Affinely rescale to [0, 1]; a flat curve maps to zeros."""
    y = np.asarray(y, dtype=float)
    lo, hi = y.min(), y.max()
    if hi == lo:
        return np.zeros_like(y)
    return (y - lo) / (hi - lo)


def resample(grid, values, q_points):
    """Interpolate a grid-aligned curve at joint coordinates ``q_points``."""
    j = grid.joint
    s = normalize_s(np.asarray(q_points, dtype=float), j.q_min, j.q_max)
    return np.interp(s, grid.s, values)


# --------------------------------------------------------------------------
# reports


def analysis(grid, f):
    ref = reference_magnitudes(f.joint)
    return {
        "joint": {"asset_name": f.joint.asset_name, "joint_name": f.joint.joint_name,
                  "joint_type": f.joint.joint_type},
        "n_points": int(grid.s.size),
        "reference": ref.to_dict(),
        "stick_regions": [[lo, hi] for lo, hi in stick_regions(grid)],
        "equilibria": [{"s": e.s, "q": e.q, "stability": e.stability, "slope": e.slope,
                        "kind": e.kind}
                       for e in equilibria(grid, f)],
    }


def analysis_json(grid, f):
    return json.dumps(analysis(grid, f), sort_keys=True, indent=2, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# SVG


@dataclass(frozen=True)
class Annotations:
    equilibria: tuple = ()
    stick_regions: tuple = ()
    shade_stick: bool = False
    show_damping: bool = True
    title: str = ""


_W, _H = 720, 420
_L, _R, _T, _B = 70, 170, 40, 50


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def _esc(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def render_svg(grid, annotations=None):
    """Deterministic SVG of the profile; identical inputs give identical bytes."""
    ann = annotations or Annotations()
    j = grid.joint
    q_unit, f_unit, _ = _UNITS[j.joint_type]
    v_ref = reference_magnitudes(j).v_ref
    damp = grid.c_damp * v_ref
    series = [grid.f_cons, grid.gravity_balance, grid.band_lo, grid.band_hi]
    if ann.show_damping:
        series.append(damp)
    y_lo = min(float(np.min(a)) for a in series)
    y_hi = max(float(np.max(a)) for a in series)
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    pw, ph = _W - _L - _R, _H - _T - _B
    q = grid.q

    def X(qv):
        return _L + pw * (qv - j.q_min) / j.delta_q

    def Y(fv):
        return _T + ph * (y_hi - fv) / (y_hi - y_lo)

    def pts(xs, ys):
        return " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(xs, ys))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
    ]
    if ann.title:
        out.append(f'<text x="{_L}" y="22" font-size="13">{_esc(ann.title)}</text>')
    if ann.shade_stick:
        for lo, hi in ann.stick_regions:
            x0, x1 = X(j.q_of(lo)), X(j.q_of(hi))
            out.append(f'<rect class="stick" x="{x0:.2f}" y="{_T:.2f}" width="{x1 - x0:.2f}" '
                       f'height="{ph:.2f}" fill="#9be39b" fill-opacity="0.25"/>')
    band = pts(q, grid.band_hi) + " " + pts(q[::-1], grid.band_lo[::-1])
    out.append(f'<polygon class="friction-band" points="{band}" fill="#888888" '
               f'fill-opacity="0.3" stroke="none"/>')
    # axes and grid
    out.append(f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for tq in _ticks(j.q_min, j.q_max):
        x = X(tq)
        out.append(f'<line x1="{x:.2f}" y1="{_T + ph}" x2="{x:.2f}" y2="{_T + ph + 5}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{_T + ph + 18}" text-anchor="middle">{tq:.3g}</text>')
    for tf in _ticks(y_lo, y_hi):
        y = Y(tf)
        out.append(f'<line x1="{_L - 5}" y1="{y:.2f}" x2="{_L}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{_L - 8}" y="{y + 4:.2f}" text-anchor="end">{tf:.3g}</text>')
    if y_lo < 0.0 < y_hi:
        out.append(f'<line x1="{_L}" y1="{Y(0.0):.2f}" x2="{_L + pw}" y2="{Y(0.0):.2f}" '
                   f'stroke="#cccccc"/>')
    out.append(f'<text x="{_L + pw / 2:.2f}" y="{_H - 10}" text-anchor="middle">'
               f'q ({q_unit})</text>')
    out.append(f'<text x="16" y="{_T + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_T + ph / 2:.2f})">force ({_esc(f_unit)})</text>')
    # curves
    if ann.show_damping:
        out.append(f'<polyline class="damping" points="{pts(q, damp)}" fill="none" '
                   f'stroke="#2a9d2a" stroke-width="1.2" stroke-dasharray="2,3"/>')
    out.append(f'<polyline class="gravity-balance" points="{pts(q, grid.gravity_balance)}" '
               f'fill="none" stroke="#1f4fd1" stroke-width="1.5" stroke-dasharray="6,4"/>')
    out.append(f'<polyline class="conservative" points="{pts(q, grid.f_cons)}" fill="none" '
               f'stroke="#d62728" stroke-width="2"/>')
    for e in ann.equilibria:
        fill = "black" if e.stability == "stable" else "white"
        fc = float(np.interp(e.s, grid.s, grid.f_cons))
        out.append(f'<circle class="equilibrium {e.stability}" cx="{X(e.q):.2f}" '
                   f'cy="{Y(fc):.2f}" r="4" fill="{fill}" stroke="black"/>')
    # legend
    lx, ly = _L + pw + 12, _T + 10
    legend = [
        ('<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#d62728" stroke-width="2"/>',
         "conservative"),
        ('<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#1f4fd1" stroke-width="1.5" '
         'stroke-dasharray="6,4"/>', "-gravity"),
        ('<rect x="{0}" y="{3}" width="24" height="8" fill="#888888" fill-opacity="0.3"/>',
         "friction band"),
    ]
    if ann.show_damping:
        legend.append(('<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#2a9d2a" '
                       'stroke-dasharray="2,3"/>', "damping × v_ref"))
    for k, (shape, label) in enumerate(legend):
        y = ly + 18 * k
        out.append(shape.format(lx, y, lx + 24, y - 4))
        out.append(f'<text x="{lx + 30}" y="{y + 4}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
