"""Independent reference routines used only by the tests."""

import math


def fc_slopes(x, y):
    """Textbook monotone Hermite slopes, written with plain Python loops."""
    n = len(x)
    h = [x[k + 1] - x[k] for k in range(n - 1)]
    delta = [(y[k + 1] - y[k]) / h[k] for k in range(n - 1)]
    if n == 2:
        return [delta[0], delta[0]]
    d = [0.0] * n
    for k in range(1, n - 1):
        if delta[k - 1] == 0 or delta[k] == 0 or (delta[k - 1] > 0) != (delta[k] > 0):
            d[k] = 0.0
        else:
            wa = 2 * h[k] + h[k - 1]
            wb = h[k] + 2 * h[k - 1]
            d[k] = (wa + wb) / (wa / delta[k - 1] + wb / delta[k])

    def end(h0, h1, d0, d1):
        s = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1)
        sgn = lambda v: (v > 0) - (v < 0)  # noqa: E731
        if sgn(s) != sgn(d0):
            return 0.0
        if sgn(d0) != sgn(d1) and abs(s) > abs(3 * d0):
            return 3 * d0
        return s

    d[0] = end(h[0], h[1], delta[0], delta[1])
    d[-1] = end(h[-1], h[-2], delta[-1], delta[-2])
    return d


def fc_eval(x, y, d, t):
    """Evaluate the Hermite cubic through (x, y, d) at scalar t (power form)."""
    k = 0
    while k < len(x) - 2 and t >= x[k + 1]:
        k += 1
    hk = x[k + 1] - x[k]
    dy = (y[k + 1] - y[k]) / hk
    c2 = (3 * dy - 2 * d[k] - d[k + 1]) / hk
    c3 = (d[k] + d[k + 1] - 2 * dy) / hk**2
    r = t - x[k]
    return y[k] + r * (d[k] + r * (c2 + r * c3))


def central_diff(fn, x0, h):
    return (fn(x0 + h) - fn(x0 - h)) / (2 * h)


def isclose_rel(a, b, rel, abs_floor=0.0):
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), abs_floor) or math.isclose(a, b)
