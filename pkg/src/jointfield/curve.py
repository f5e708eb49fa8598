"""Shape-preserving piecewise cubic Hermite interpolation (PCHIP).

Interior knot slopes are the weighted harmonic mean of the neighbouring
secants (zero when the secants disagree in sign or either vanishes); the end
slopes use the one-sided three-point estimate, zeroed on sign disagreement and
limited to three times the adjacent secant. This is the same scheme SciPy's
``PchipInterpolator`` uses, so values agree with it to rounding.
"""

from __future__ import annotations

import numpy as np

from .errors import InsufficientKnotsError, InvalidKnotsError, OutOfSpanError

__all__ = [
    "PchipCurve",
    "pchip_slopes",
    "pchip_eval",
    "pchip_eval_dx",
    "pchip_grad_y",
]


def _check_knots(xs, ys):
    xs = np.array(xs, dtype=float)
    ys = np.array(ys, dtype=float)
    if xs.ndim != 1 or ys.ndim != 1 or xs.shape != ys.shape:
        raise InvalidKnotsError("xs and ys must be 1-D sequences of equal length")
    if xs.size < 2:
        raise InsufficientKnotsError(f"need at least 2 knots, got {xs.size}")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise InvalidKnotsError("knot positions and values must be finite")
    if np.any(np.diff(xs) <= 0):
        raise InvalidKnotsError("knot positions must be strictly increasing")
    return xs, ys


def _edge(h0, h1, m0, m1):
    """End slope and its partials with respect to (m0, m1)."""
    d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0, 0.0, 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > 3.0 * abs(m0):
        return 3.0 * m0, 3.0, 0.0
    return d, (2.0 * h0 + h1) / (h0 + h1), -h0 / (h0 + h1)


def _slopes_and_jacobian(xs, ys):
    n = xs.size
    h = np.diff(xs)
    m = np.diff(ys) / h
    # dm[k, j] = d m_k / d y_j
    dm = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    dm[idx, idx] = -1.0 / h
    dm[idx, idx + 1] = 1.0 / h

    d = np.zeros(n)
    jac = np.zeros((n, n))
    if n == 2:
        d[:] = m[0]
        jac[0] = jac[1] = dm[0]
        return d, jac

    for k in range(1, n - 1):
        m1, m2 = m[k - 1], m[k]
        if m1 * m2 <= 0.0:
            continue
        h1, h2 = h[k - 1], h[k]
        w1 = 2.0 * h2 + h1
        w2 = h2 + 2.0 * h1
        denom = w1 / m1 + w2 / m2
        d[k] = (w1 + w2) / denom
        # m * denom written via slope ratios so tiny slopes do not underflow
        r1 = w1 + w2 * (m1 / m2)
        r2 = w1 * (m2 / m1) + w2
        g1 = ((w1 + w2) / r1) * (w1 / r1)
        g2 = ((w1 + w2) / r2) * (w2 / r2)
        jac[k] = g1 * dm[k - 1] + g2 * dm[k]

    d[0], a0, a1 = _edge(h[0], h[1], m[0], m[1])
    jac[0] = a0 * dm[0] + a1 * dm[1]
    d[-1], b0, b1 = _edge(h[-1], h[-2], m[-1], m[-2])
    jac[-1] = b0 * dm[-1] + b1 * dm[-2]
    return d, jac


def pchip_slopes(xs, ys):
    """Knot derivatives for the shape-preserving Hermite interpolant."""
    xs, ys = _check_knots(xs, ys)
    return _slopes_and_jacobian(xs, ys)[0]


class PchipCurve:
    """Immutable PCHIP curve on knots inside ``[0, 1]``.

    Calling the curve evaluates it; ``derivative`` and ``grad_y`` give the
    spatial derivative and the gradient with respect to the knot values.
    Positions outside ``[xs[0], xs[-1]]`` raise :class:`OutOfSpanError`;
    clamping is the caller's business.
    """

    __slots__ = ("xs", "ys", "ds", "_jac")

    def __init__(self, xs, ys):
        xs, ys = _check_knots(xs, ys)
        if xs[0] < 0.0 or xs[-1] > 1.0:
            raise InvalidKnotsError("knot positions must lie in [0, 1]")
        ds, jac = _slopes_and_jacobian(xs, ys)
        for a in (xs, ys, ds, jac):
            a.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "ds", ds)
        object.__setattr__(self, "_jac", jac)

    def __setattr__(self, name, value):
        raise AttributeError("PchipCurve is immutable")

    def __repr__(self):
        return f"PchipCurve(xs={self.xs.tolist()}, ys={self.ys.tolist()})"

    def __eq__(self, other):
        if not isinstance(other, PchipCurve):
            return NotImplemented
        return np.array_equal(self.xs, other.xs) and np.array_equal(self.ys, other.ys)

    def __hash__(self):
        return hash((self.xs.tobytes(), self.ys.tobytes()))

    def __len__(self):
        return self.xs.size

    @classmethod
    def constant(cls, value):
        return cls([0.0, 1.0], [value, value])

    def scaled(self, factor):
        return PchipCurve(self.xs, self.ys * factor)

    def mirrored(self):
        """Reflect about u = 0.5 and flip the sign: ``y'(u) = -y(1 - u)``."""
        return PchipCurve((1.0 - self.xs)[::-1], -self.ys[::-1])

    @property
    def peak(self):
        return float(np.max(np.abs(self.ys)))

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(~(x >= self.xs[0])) or np.any(~(x <= self.xs[-1])):
            raise OutOfSpanError(
                f"position outside knot span [{self.xs[0]}, {self.xs[-1]}]"
            )
        i = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, self.xs.size - 2)
        h = self.xs[i + 1] - self.xs[i]
        t = (x - self.xs[i]) / h
        return x, i, h, t

    def __call__(self, x):
        x, i, h, t = self._locate(x)
        t1 = 1.0 - t
        h10 = t * t1 * t1
        h01 = t * t * (3.0 - 2.0 * t)
        h11 = t * t * (t - 1.0)
        # written around ys[i] (h00 = 1 - h01) so flat data is reproduced exactly
        y0 = self.ys[i]
        out = y0 + h01 * (self.ys[i + 1] - y0) + h * (h10 * self.ds[i] + h11 * self.ds[i + 1])
        out = np.where(t == 1.0, self.ys[i + 1], out)
        return float(out) if out.ndim == 0 else out

    def derivative(self, x):
        x, i, h, t = self._locate(x)
        dh00 = 6.0 * t * t - 6.0 * t
        dh10 = 3.0 * t * t - 4.0 * t + 1.0
        dh11 = 3.0 * t * t - 2.0 * t
        out = (
            dh00 * (self.ys[i] - self.ys[i + 1]) / h
            + dh10 * self.ds[i]
            + dh11 * self.ds[i + 1]
        )
        return float(out) if out.ndim == 0 else out

    def grad_y(self, x):
        """Gradient of ``self(x)`` with respect to ``ys`` (scalar ``x``).

        The secant sign pattern is held at its current state, which makes the
        harmonic-mean slope rule smooth in a neighbourhood of ``ys``.
        """
        x, i, h, t = self._locate(float(x))
        i = int(i)
        t1 = 1.0 - t
        g = h * t * t1 * t1 * self._jac[i] + h * t * t * (t - 1.0) * self._jac[i + 1]
        g[i] += (1.0 + 2.0 * t) * t1 * t1
        g[i + 1] += t * t * (3.0 - 2.0 * t)
        return g


def pchip_eval(curve, x):
    return curve(x)


def pchip_eval_dx(curve, x):
    return curve.derivative(x)


def pchip_grad_y(curve, x):
    return curve.grad_y(x)
