"""Truncated Taylor jets of scalar functions of one variable.

A jet of order ``m`` at points ``x`` is an array of shape ``(m + 1,) + x.shape``
whose row ``k`` holds the k-th derivative. The primitives below are the smooth
building blocks of the trajectory profiles. They are assembled with the usual
jet arithmetic (Leibniz products, series division, exponential composition)
so that every derivative is exact up to rounding.
"""
from __future__ import annotations

from math import comb, e, factorial

import numpy as np

MAX_ORDER = 9

# below this distance to a support edge the exp(-1/d) factors are < 1e-217
_EDGE = 2e-3


def check_order(order: int) -> None:
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"jet order must lie in [0, {MAX_ORDER}], got {order}")


def variable(x, order: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros((order + 1,) + x.shape)
    out[0] = x
    if order >= 1:
        out[1] = 1.0
    return out


def constant(x, value, order: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros((order + 1,) + x.shape, dtype=np.result_type(value, float))
    out[0] = value
    return out


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Leibniz rule for the product of two jets of equal order."""
    m = a.shape[0] - 1
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for k in range(m + 1):
        for j in range(k + 1):
            out[k] += comb(k, j) * a[j] * b[k - j]
    return out


def div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Jet of a / b; b[0] must not vanish."""
    m = a.shape[0] - 1
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for k in range(m + 1):
        acc = a[k].copy() if np.ndim(a[k]) else a[k]
        for j in range(1, k + 1):
            acc = acc - comb(k, j) * b[j] * out[k - j]
        out[k] = acc / b[0]
    return out


def exp(g: np.ndarray) -> np.ndarray:
    """Jet of exp(g) from f' = g' f."""
    m = g.shape[0] - 1
    out = np.zeros_like(g)
    out[0] = np.exp(g[0])
    for k in range(m):
        for j in range(k + 1):
            out[k + 1] += comb(k, j) * g[j + 1] * out[k - j]
    return out


def shift(a: np.ndarray, by: int) -> np.ndarray:
    """Jet of the ``by``-th derivative, losing ``by`` orders."""
    return a[by:]


def _masked(builder, x: np.ndarray, order: int, mask: np.ndarray) -> np.ndarray:
    out = np.zeros((order + 1,) + x.shape)
    if np.any(mask):
        out[:, mask] = builder(x[mask], order)
    return out


def _exp_minus_inverse(w: np.ndarray) -> np.ndarray:
    """exp(-1/w) for a jet w with w[0] > 0."""
    return exp(-div(constant(w[0], 1.0, w.shape[0] - 1), w))


def step(x, order: int) -> np.ndarray:
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, flat to all orders at both ends."""
    check_order(order)
    x = np.asarray(x, dtype=float)

    def build(xs, m):
        v = variable(xs, m)
        a = _exp_minus_inverse(v)
        b = _exp_minus_inverse(constant(xs, 1.0, m) - v)
        return div(a, a + b)

    out = _masked(build, x, order, (x > _EDGE) & (x < 1 - _EDGE))
    out[0][x >= 1 - _EDGE] = 1.0
    return out


def exp_core(z, order: int) -> np.ndarray:
    """exp(-1/(1-z^2)) on |z| < 1, zero elsewhere."""
    check_order(order)
    z = np.asarray(z, dtype=float)

    def build(zs, m):
        v = variable(zs, m)
        return _exp_minus_inverse(constant(zs, 1.0, m) - mul(v, v))

    return _masked(build, z, order, 1 - z**2 > _EDGE)


def bump(u, order: int) -> np.ndarray:
    """exp(1 - 1/(1-u^2)) on |u| < 1, zero elsewhere; equals 1 at u = 0."""
    return e * exp_core(u, order)


def gexp(z, order: int, dim: int) -> np.ndarray:
    """Radial Laplacian of exp(-1/(1-z^2)) in dimension ``dim``, for 0 < z < 1."""
    check_order(order)
    z = np.asarray(z, dtype=float)
    core = exp_core(z, order + 2)
    out = core[2:].copy()
    if dim != 1:
        safe = np.where(z > 0, z, 1.0)
        inv = div(constant(safe, float(dim - 1), order), variable(safe, order))
        out += mul(inv, core[1 : order + 2])
    out[:, z <= 0] = 0.0
    return out


def affine(jet_fn, x, scale: float, offset: float, order: int, **kw) -> np.ndarray:
    """Jet of f(scale * x + offset) given the jet function of f."""
    inner = jet_fn(scale * np.asarray(x, dtype=float) + offset, order, **kw)
    for k in range(order + 1):
        inner[k] = inner[k] * scale**k
    return inner


def monomial(x, center: float, power: int, order: int) -> np.ndarray:
    """Jet of (x - center)^power / power!."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((order + 1,) + x.shape)
    d = x - center
    for k in range(min(order, power) + 1):
        out[k] = d ** (power - k) / factorial(power - k)
    return out
