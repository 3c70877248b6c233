"""Forward-mode dual numbers, nestable for exact second derivatives.

A ``Dual`` holds a value part ``a`` and a derivative part ``b``.  Either part
may itself be a Dual (nesting gives second derivatives) and ``b`` may be a
numpy vector (one pass yields a full gradient).  numpy is told to defer to the
Dual operators via ``__array_ufunc__ = None`` so that ``ndarray * Dual`` does
not silently broadcast into object arrays.

Non-differentiable evaluation points (``abs`` at 0, max-norm ties, ``sqrt`` at
0) do not poison results with inf/nan: the derivative is taken as 0 and the
event is recorded on the active :func:`collect_nonsmooth` log, if any.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager

import numpy as np

_FLAGS: contextvars.ContextVar = contextvars.ContextVar("finslerlab_nonsmooth", default=None)


class NonSmoothLog:
    """Collects descriptions of non-differentiable evaluation events."""

    def __init__(self):
        self.events = []

    def mark(self, what):
        self.events.append(what)

    def __bool__(self):
        return bool(self.events)


@contextmanager
def collect_nonsmooth():
    log = NonSmoothLog()
    token = _FLAGS.set(log)
    try:
        yield log
    finally:
        _FLAGS.reset(token)


def mark_nonsmooth(what):
    log = _FLAGS.get()
    if log is not None:
        log.mark(what)


def primal(x):
    """Strip all dual layers off a value."""
    while isinstance(x, Dual):
        x = x.a
    return x


def _zero_like(b):
    if isinstance(b, Dual):
        return Dual(_zero_like(b.a), _zero_like(b.b))
    if isinstance(b, np.ndarray):
        return np.zeros_like(b)
    return 0.0


class Dual:
    __slots__ = ("a", "b")
    __array_ufunc__ = None

    def __init__(self, a, b):
        self.a = a
        self.b = b

    def __repr__(self):
        return f"Dual({self.a!r}, {self.b!r})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a + o.a, self.b + o.b)
        return Dual(self.a + o, self.b)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a - o.a, self.b - o.b)
        return Dual(self.a - o, self.b)

    def __rsub__(self, o):
        return Dual(o - self.a, -self.b)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a * o.a, self.a * o.b + self.b * o.a)
        return Dual(self.a * o, self.b * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            inv = 1.0 / o.a
            return Dual(self.a * inv, (self.b - (self.a * inv) * o.b) * inv)
        return Dual(self.a / o, self.b / o)

    def __rtruediv__(self, o):
        inv = 1.0 / self.a
        val = o * inv
        return Dual(val, -val * inv * self.b)

    def __neg__(self):
        return Dual(-self.a, -self.b)

    def __pos__(self):
        return self

    def __pow__(self, p):
        if isinstance(p, Dual):
            return fexp(p * flog(self))
        if primal(self.a) == 0.0:
            if p == 1:
                return Dual(self.a, self.b)
            if p > 1:
                return Dual(self.a ** p, _zero_like(self.b))
            mark_nonsmooth(f"pow({p}) at 0")
            return Dual(self.a ** p if p > 0 else np.inf, _zero_like(self.b))
        return Dual(self.a ** p, (self.a ** (p - 1)) * p * self.b)

    def __rpow__(self, base):
        return fexp(self * np.log(base))

    def __abs__(self):
        s = np.sign(primal(self.a))
        if s == 0:
            mark_nonsmooth("abs at 0")
        return Dual(abs(self.a) if isinstance(self.a, Dual) else np.abs(self.a), self.b * s)

    # comparisons act on primal values ------------------------------------
    def __lt__(self, o):
        return primal(self.a) < primal(o.a if isinstance(o, Dual) else o)

    def __le__(self, o):
        return primal(self.a) <= primal(o.a if isinstance(o, Dual) else o)

    def __gt__(self, o):
        return primal(self.a) > primal(o.a if isinstance(o, Dual) else o)

    def __ge__(self, o):
        return primal(self.a) >= primal(o.a if isinstance(o, Dual) else o)

    def __float__(self):
        return float(primal(self.a))

    # elementary functions -------------------------------------------------
    def sin(self):
        return Dual(fsin(self.a), fcos(self.a) * self.b)

    def cos(self):
        return Dual(fcos(self.a), -fsin(self.a) * self.b)

    def exp(self):
        e = fexp(self.a)
        return Dual(e, e * self.b)

    def log(self):
        return Dual(flog(self.a), self.b / self.a)

    def sqrt(self):
        if primal(self.a) == 0.0:
            mark_nonsmooth("sqrt at 0")
            return Dual(fsqrt(self.a), _zero_like(self.b))
        r = fsqrt(self.a)
        return Dual(r, self.b / (r * 2.0))


# generic dispatchers: work on floats, numpy arrays and Duals alike ---------

def fsin(x):
    return x.sin() if isinstance(x, Dual) else np.sin(x)


def fcos(x):
    return x.cos() if isinstance(x, Dual) else np.cos(x)


def fexp(x):
    return x.exp() if isinstance(x, Dual) else np.exp(x)


def flog(x):
    if isinstance(x, Dual):
        return x.log()
    if np.isscalar(x) and x <= 0:
        raise ZeroDivisionError("log of non-positive value")
    return np.log(x)


def fsqrt(x):
    if isinstance(x, Dual):
        return x.sqrt()
    return np.sqrt(x)


def fabs(x):
    return abs(x) if isinstance(x, Dual) else np.abs(x)


def fpow(x, p):
    if isinstance(x, Dual) or isinstance(p, Dual):
        if isinstance(x, Dual):
            return x ** p
        return x ** p if not isinstance(p, Dual) else fexp(p * flog(x))
    return np.power(x, p)


# derivative drivers ---------------------------------------------------------

def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def _dual_of(x):
    """Derivative part of a possibly-plain value."""
    return x.b if isinstance(x, Dual) else 0.0


def _as_grad(x, n):
    """Normalize a derivative part to an (n,) float array."""
    x = primal(x)
    if isinstance(x, np.ndarray):
        return np.asarray(x, dtype=float)
    return np.full(n, float(x))


def value_and_grad(f, xs):
    """Evaluate f on dual-seeded coordinates; return (value, gradient)."""
    n = len(xs)
    seeds = [Dual(float(xs[i]), _unit(n, i)) for i in range(n)]
    out = f(seeds)
    if isinstance(out, Dual):
        return float(primal(out)), _as_grad(out.b, n)
    return float(out), np.zeros(n)


def value_grad_hess(f, xs):
    """Evaluate f with nested duals; return (value, gradient, hessian).

    One nested pass per coordinate; the Hessian is symmetrized to absorb
    floating-point asymmetry.
    """
    n = len(xs)
    val = None
    grad = np.zeros(n)
    hess = np.zeros((n, n))
    for k in range(n):
        seeds = [
            Dual(Dual(float(xs[i]), _unit(n, i)), Dual(1.0 if i == k else 0.0, np.zeros(n)))
            for i in range(n)
        ]
        out = f(seeds)
        if not isinstance(out, Dual):
            val = float(out)
            continue
        inner = out.a
        if val is None:
            val = float(primal(inner))
            if isinstance(inner, Dual):
                grad = _as_grad(inner.b, n)
        outer = out.b
        hess[k] = _as_grad(_dual_of(outer), n)
    return float(val), grad, 0.5 * (hess + hess.T)
