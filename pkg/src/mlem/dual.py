"""Forward-mode dual arrays for directional derivatives.

A Dual carries (value, tangent) numpy arrays of the same shape.  Arithmetic
propagates the tangent, so pushing a Dual state through a solver yields the
directional derivative of the output in one forward pass with memory constant
in path length.  Only the primitives the drift fields and schedules need are
implemented.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Dual", "lift", "value", "tangent", "sin", "cos", "exp", "log", "sqrt", "dsum"]


class Dual:
    __slots__ = ("val", "tan")

    # opt out of numpy ufunc dispatch so `ndarray <op> Dual` falls back to the
    # reflected methods below instead of building object arrays
    __array_ufunc__ = None

    def __init__(self, val, tan):
        self.val = np.asarray(val, dtype=np.float64)
        self.tan = np.asarray(tan, dtype=np.float64)

    @property
    def shape(self):
        return self.val.shape

    def __repr__(self):
        return f"Dual(val={self.val!r}, tan={self.tan!r})"

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.tan[idx])

    def reshape(self, shape):
        return Dual(self.val.reshape(shape), self.tan.reshape(shape))

    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.tan + other.tan)
        return Dual(self.val + other, self.tan + np.zeros_like(np.asarray(other, dtype=np.float64)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.tan - other.tan)
        return Dual(self.val - other, self.tan + np.zeros_like(np.asarray(other, dtype=np.float64)))

    def __rsub__(self, other):
        return Dual(other - self.val, np.zeros_like(np.asarray(other, dtype=np.float64)) - self.tan)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.tan * other.val + self.val * other.tan)
        return Dual(self.val * other, self.tan * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv, (self.tan - self.val * inv * other.tan) * inv)
        return Dual(self.val / other, self.tan / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, -val * inv * self.tan)

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("dual exponents are not supported")
        return Dual(self.val**p, p * self.val ** (p - 1) * self.tan)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val @ other.val, self.tan @ other.val + self.val @ other.tan)
        return Dual(self.val @ other, self.tan @ other)

    def __rmatmul__(self, other):
        return Dual(other @ self.val, other @ self.tan)


def lift(x) -> Dual:
    """Constant as a Dual (zero tangent)."""
    x = np.asarray(x, dtype=np.float64)
    return Dual(x, np.zeros_like(x))


def value(x):
    return x.val if isinstance(x, Dual) else x


def tangent(x):
    return x.tan if isinstance(x, Dual) else np.zeros_like(np.asarray(x, dtype=np.float64))


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), np.cos(x.val) * x.tan)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -np.sin(x.val) * x.tan)
    return np.cos(x)


def exp(x):
    if isinstance(x, Dual):
        v = np.exp(x.val)
        return Dual(v, v * x.tan)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.tan / x.val)
    return np.log(x)


def sqrt(x):
    if isinstance(x, Dual):
        v = np.sqrt(x.val)
        return Dual(v, 0.5 * x.tan / v)
    return np.sqrt(x)


def dsum(x, axis=None, keepdims=False):
    if isinstance(x, Dual):
        return Dual(
            np.sum(x.val, axis=axis, keepdims=keepdims),
            np.sum(x.tan, axis=axis, keepdims=keepdims),
        )
    return np.sum(x, axis=axis, keepdims=keepdims)
