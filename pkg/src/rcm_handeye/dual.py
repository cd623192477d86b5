"""
Forward-mode automatic differentiation over numpy arrays.

A :class:`Dual` carries a value array ``val`` of shape ``S`` and a tangent
array ``der`` of shape ``S + (n,)`` holding the partial derivatives of every
entry with respect to ``n`` seed variables. With 9 to 18 hand-eye parameters
this is cheaper and simpler than a reverse-mode tape.

The module-level helpers (:func:`sqrt`, :func:`norm`, :func:`stack`, ...)
accept either plain arrays or duals, so the same numerical code path serves
both loss evaluation and gradient evaluation.
"""

from __future__ import annotations

import numpy as np

# Norms below this are treated as exactly zero; the subgradient 0 is used.
NORM_EPS = 1e-12


class Dual:
    __slots__ = ("val", "der")
    __array_priority__ = 1000
    # make ndarray binary ops defer to the reflected Dual methods
    __array_ufunc__ = None

    def __init__(self, val, der):
        self.val = np.asarray(val, dtype=float)
        self.der = np.asarray(der, dtype=float)

    @classmethod
    def variables(cls, x) -> "Dual":
        """Seed a 1-D vector so that ``der`` is the identity."""
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(x.copy(), np.eye(x.size))

    @property
    def nvars(self) -> int:
        return self.der.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self) -> int:
        return self.val.ndim

    def __repr__(self):
        return f"Dual(val={self.val!r}, nvars={self.nvars})"

    def __getitem__(self, key):
        if isinstance(key, tuple) and any(k is Ellipsis for k in key):
            dkey = key + (slice(None),)
        else:
            dkey = key
        return Dual(self.val[key], self.der[dkey])

    def _full(self, val_shape):
        return np.broadcast_to(self.der, tuple(val_shape) + (self.nvars,))

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        val = self.val + other
        return Dual(val, self._full(val.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.val * other.val,
                self.der * other.val[..., None] + self.val[..., None] * other.der,
            )
        other = np.asarray(other, dtype=float)
        val = self.val * other
        return Dual(val, np.broadcast_to(self.der * other[..., None], val.shape + (self.nvars,)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(
                self.val * inv,
                (self.der - (self.val * inv)[..., None] * other.der) * inv[..., None],
            )
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        val = np.asarray(other, dtype=float) / self.val
        return Dual(val, (-val / self.val)[..., None] * self.der)

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("Dual exponents are not supported")
        return Dual(self.val**p, (p * self.val ** (p - 1))[..., None] * self.der)

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.val.sum(), self.der.reshape(-1, self.nvars).sum(axis=0))
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(a % self.ndim for a in axes)
        return Dual(self.val.sum(axis=axes), self.der.sum(axis=axes))


def value(x):
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def sqrt(x):
    if isinstance(x, Dual):
        s = np.sqrt(x.val)
        return Dual(s, (0.5 / s)[..., None] * x.der)
    return np.sqrt(x)


def arctan2(y, x):
    if not isinstance(y, Dual) and not isinstance(x, Dual):
        return np.arctan2(y, x)
    yv, xv = value(y), value(x)
    r2 = xv * xv + yv * yv
    out = Dual(np.arctan2(yv, xv), 0.0)
    der = 0.0
    if isinstance(y, Dual):
        der = der + (xv / r2)[..., None] * y.der
    if isinstance(x, Dual):
        der = der - (yv / r2)[..., None] * x.der
    out.der = np.asarray(der, dtype=float)
    return out


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    if isinstance(x, Dual):
        return x.sum(axis)
    return np.sum(x, axis=axis)


def norm(x, axis=-1):
    """Euclidean norm along ``axis``; derivative is 0 where the norm is < NORM_EPS."""
    if not isinstance(x, Dual):
        return np.linalg.norm(x, axis=axis)
    ax = axis % x.ndim
    n = np.sqrt(np.sum(x.val * x.val, axis=ax))
    safe = np.where(n < NORM_EPS, 1.0, n)
    der = np.sum(x.val[..., None] * x.der, axis=ax) / safe[..., None]
    der = np.where((n < NORM_EPS)[..., None], 0.0, der)
    return Dual(n, der)


def stack(items, axis=0):
    items = list(items)
    if not any(isinstance(i, Dual) for i in items):
        return np.stack(items, axis=axis)
    n = next(i.nvars for i in items if isinstance(i, Dual))
    vals = np.broadcast_arrays(*[value(i) for i in items])
    shape = vals[0].shape
    ders = [
        np.broadcast_to(i.der, shape + (n,)) if isinstance(i, Dual) else np.zeros(shape + (n,))
        for i in items
    ]
    ax = axis % (len(shape) + 1)
    return Dual(np.stack(vals, axis=ax), np.stack(ders, axis=ax))


def where(mask, a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.where(mask, a, b)
    av, bv = value(a), value(b)
    val = np.where(mask, av, bv)
    n = a.nvars if isinstance(a, Dual) else b.nvars
    ad = a.der if isinstance(a, Dual) else np.zeros(np.shape(av) + (n,))
    bd = b.der if isinstance(b, Dual) else np.zeros(np.shape(bv) + (n,))
    return Dual(val, np.where(np.asarray(mask)[..., None], ad, bd))


def dot(a, b):
    return sum(a * b, axis=-1)


def cross(a, b):
    return stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def matvec(m, x):
    """Batched ``m @ x`` for ``m`` of shape (..., r, c) and ``x`` of shape (..., c)."""
    return sum(m * x[..., None, :], axis=-1)
