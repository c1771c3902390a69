"""Hyper-dual numbers for exact first and pure second partials.

A :class:`HyperDual` carries ``(value, first, second)`` where ``first`` and
``second`` are the first and second derivative along a single seeded input
coordinate.  The three parts may be numpy arrays, jax arrays or tracers, so
the same arithmetic runs inside ``jax.jit`` and can itself be differentiated
by ``jax.grad``.

Seeding is vectorised: giving ``first`` a leading axis of one-hot vectors runs
one independent seeded pass per input coordinate in a single evaluation.

Elementary functions live here as module-level functions (``sin``, ``exp``,
``sigmoid``...).  They accept plain arrays as well, so transition and reward
code is written once and used for simulation, propagation and partials.
"""

import jax
import jax.numpy as jnp
import numpy as np
from scipy import special

from disprod.errors import DomainError

DOMAIN_EPS = 1e-12


def _is_jax(x):
    return isinstance(x, jax.Array)


def _xp(*xs):
    for x in xs:
        if isinstance(x, HyperDual):
            if _is_jax(x.value) or _is_jax(x.first) or _is_jax(x.second):
                return jnp
        elif _is_jax(x):
            return jnp
    return np


def _is_concrete(x):
    return not isinstance(x, jax.core.Tracer)


def _check_domain(x, lower, what):
    if _is_concrete(x) and np.any(np.asarray(x) < lower):
        raise DomainError(f"{what} argument below guard {lower:g}")


class HyperDual:
    """Number of the form ``v + f*e1 + f*e2 + s*e1*e2`` restricted to one direction."""

    __slots__ = ("value", "first", "second")
    # Make numpy defer to our reflected operators instead of broadcasting us as an object.
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, value, first=0.0, second=0.0):
        self.value = value
        self.first = first
        self.second = second

    def __repr__(self):
        return f"HyperDual({self.value!r}, {self.first!r}, {self.second!r})"

    def _chain(self, f0, f1, f2):
        # f1, f2: first and second derivative of the outer function at self.value
        return HyperDual(f0, f1 * self.first, f2 * self.first * self.first + f1 * self.second)

    def __neg__(self):
        return HyperDual(-self.value, -self.first, -self.second)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(self.value + other.value, self.first + other.first, self.second + other.second)
        return HyperDual(self.value + other, self.first, self.second)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(self.value - other.value, self.first - other.first, self.second - other.second)
        return HyperDual(self.value - other, self.first, self.second)

    def __rsub__(self, other):
        return HyperDual(other - self.value, -self.first, -self.second)

    def __mul__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(
                self.value * other.value,
                self.first * other.value + self.value * other.first,
                self.second * other.value + 2.0 * self.first * other.first + self.value * other.second,
            )
        return HyperDual(self.value * other, self.first * other, self.second * other)

    __rmul__ = __mul__

    def reciprocal(self):
        v = self.value
        _check_domain(abs(v), DOMAIN_EPS, "division")
        inv = 1.0 / v
        return self._chain(inv, -inv * inv, 2.0 * inv * inv * inv)

    def __truediv__(self, other):
        if isinstance(other, HyperDual):
            return self * other.reciprocal()
        _check_domain(abs(other), DOMAIN_EPS, "division")
        return HyperDual(self.value / other, self.first / other, self.second / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, HyperDual):
            return exp(p * log(self))
        if isinstance(p, (int, float)) and float(p).is_integer():
            p = int(p)
            if p == 0:
                return HyperDual(self.value * 0.0 + 1.0, self.first * 0.0, self.second * 0.0)
            if p == 1:
                return self
            if p == 2:
                return self * self
            if p < 0:
                return (self ** (-p)).reciprocal()
            v = self.value
            return self._chain(v**p, p * v ** (p - 1), p * (p - 1) * v ** (p - 2))
        v = self.value
        _check_domain(v, DOMAIN_EPS, "fractional power")
        return self._chain(v**p, p * v ** (p - 1), p * (p - 1) * v ** (p - 2))

    def __rpow__(self, base):
        return exp(self * log(base))

    def __bool__(self):
        raise TypeError("HyperDual has no truth value; use where() with a comparison on .value")


def lift(x):
    """Wrap a constant as a hyper-dual with zero derivative parts."""
    return x if isinstance(x, HyperDual) else HyperDual(x, 0.0, 0.0)


def value_of(x):
    return x.value if isinstance(x, HyperDual) else x


def sin(x):
    if isinstance(x, HyperDual):
        xp = _xp(x)
        s, c = xp.sin(x.value), xp.cos(x.value)
        return x._chain(s, c, -s)
    return _xp(x).sin(x)


def cos(x):
    if isinstance(x, HyperDual):
        xp = _xp(x)
        s, c = xp.sin(x.value), xp.cos(x.value)
        return x._chain(c, -s, -c)
    return _xp(x).cos(x)


def tanh(x):
    if isinstance(x, HyperDual):
        t = _xp(x).tanh(x.value)
        d = 1.0 - t * t
        return x._chain(t, d, -2.0 * t * d)
    return _xp(x).tanh(x)


def exp(x):
    if isinstance(x, HyperDual):
        e = _xp(x).exp(x.value)
        return x._chain(e, e, e)
    return _xp(x).exp(x)


def log(x):
    if isinstance(x, HyperDual):
        v = x.value
        _check_domain(v, DOMAIN_EPS, "log")
        inv = 1.0 / v
        return x._chain(_xp(x).log(v), inv, -inv * inv)
    _check_domain(x, DOMAIN_EPS, "log")
    return _xp(x).log(x)


def sqrt(x):
    if isinstance(x, HyperDual):
        v = x.value
        _check_domain(v, DOMAIN_EPS, "sqrt")
        r = _xp(x).sqrt(v)
        return x._chain(r, 0.5 / r, -0.25 / (r * v))
    return _xp(x).sqrt(x)


def square(x):
    return x * x


def _sigmoid_raw(v):
    if _is_jax(v):
        return jax.nn.sigmoid(v)
    return special.expit(v)


def sigmoid(x):
    if isinstance(x, HyperDual):
        s = _sigmoid_raw(x.value)
        d = s * (1.0 - s)
        return x._chain(s, d, d * (1.0 - 2.0 * s))
    return _sigmoid_raw(x)


def softplus(x):
    """``log(1 + exp(x))`` computed without overflow."""
    if isinstance(x, HyperDual):
        xp = _xp(x)
        s = _sigmoid_raw(x.value)
        return x._chain(xp.logaddexp(0.0, x.value), s, s * (1.0 - s))
    return _xp(x).logaddexp(0.0, x)


def where(cond, a, b):
    """Elementwise select; ``cond`` must be a plain boolean array."""
    if isinstance(a, HyperDual) or isinstance(b, HyperDual):
        a, b = lift(a), lift(b)
        xp = _xp(a, b, cond)
        return HyperDual(
            xp.where(cond, a.value, b.value),
            xp.where(cond, a.first, b.first),
            xp.where(cond, a.second, b.second),
        )
    return _xp(a, b, cond).where(cond, a, b)


def smooth_clamp(x, lo, hi, sharpness):
    """Softplus-smoothed ``clip(x, lo, hi)``; error at the corners is ``log(2)/sharpness``."""
    k = sharpness
    return lo + softplus(k * (x - lo)) / k - softplus(k * (x - hi)) / k


def smooth_min(values, sharpness):
    """Soft minimum ``-log(sum(exp(-k*v)))/k`` of a sequence of terms."""
    k = sharpness
    raw = [value_of(v) for v in values]
    xp = _xp(*raw)
    shift = raw[0]
    for r in raw[1:]:
        shift = xp.minimum(shift, r)
    if xp is jnp:
        shift = jax.lax.stop_gradient(shift)
    # The result does not depend on the shift, so treating it as a constant is exact.
    total = 0.0
    for v in values:
        total = total + exp(-k * (v - shift))
    return shift - log(total) / k
