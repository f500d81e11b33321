"""One-variable profiles of the reference trajectory.

The radial profile ``g0`` solves ``g0'' + (N-1)/z g0' = G`` with ``g0(1) = g0'(1) = 0``.
``G`` is pinned on three pieces (a constant near 0, a power of ``z - 1/2`` on a
band around 1/2 and the radial Laplacian of ``exp(-1/(1-z^2))`` near 1); the two
free segments in between are filled by blending the pinned pieces in with C-infinity
steps and adding nonnegative bumps whose amplitudes enforce the two moment
conditions that make ``g0(z) = 1 - z^2`` near the origin.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
import sympy as sp
from scipy.interpolate import make_interp_spline
from scipy.optimize import minimize

from . import jets
from .errors import ConsistencyError, ConstructionError, ParameterError

CUBIC = "cubic"
QUADRATIC_COMPLEX = "quadratic-complex"
KINDS = (CUBIC, QUADRATIC_COMPLEX)

N_CONTROL_POINTS = 6
GAUSS_POINTS = 16
MOMENT_TOL = 1e-10
AMPLITUDE_FLOOR = 1e-2


def band_power(kind: str) -> int:
    return 3 if kind == CUBIC else 2


def check_delta(delta: float) -> None:
    if not 0.0 < delta < 0.1:
        raise ParameterError(f"delta must lie in (0, 1/10), got {delta}")


def check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ParameterError(f"kind must be one of {KINDS}, got {kind!r}")


@dataclass(frozen=True)
class SampledProfile:
    """A function of one variable sampled on a uniform grid.

    ``jet`` (when present) evaluates the function and its derivatives exactly;
    otherwise a degree-7 interpolating spline of the samples is used.
    """

    name: str
    grid: np.ndarray
    values: np.ndarray
    jet: Callable[[np.ndarray, int], np.ndarray] | None = field(default=None, repr=False)
    info: dict = field(default_factory=dict, repr=False)

    @cached_property
    def _spline(self):
        return make_interp_spline(self.grid, self.values, k=7)

    def derivatives(self, x, order: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jet is not None:
            return self.jet(x, order)
        return np.stack([self._spline(x, nu=k) for k in range(order + 1)])

    def __call__(self, x, order: int = 0) -> np.ndarray:
        return self.derivatives(x, order)[order]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)


def sample(name: str, lo: float, hi: float, n: int, jet, info=None) -> SampledProfile:
    grid = np.linspace(lo, hi, n)
    return SampledProfile(name, grid, jet(grid, 0)[0], jet, dict(info or {}))


# ---------------------------------------------------------------- quadrature


@lru_cache(maxsize=None)
def _gauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def gauss_nodes(a, b, n: int = GAUSS_POINTS):
    """Gauss-Legendre nodes/weights on [a, b]; a, b may be arrays (broadcast on axis 0)."""
    x, w = _gauss(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def panel_edges(delta: float, panels_per_unit: int) -> np.ndarray:
    """Panel edges on [delta, 1] honoring every breakpoint of G."""
    breaks = [delta, 0.5 - delta, 0.5 + delta, 1.0 - delta, 1.0]
    edges = [np.array([delta])]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(4, int(np.ceil((b - a) * panels_per_unit)))
        edges.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(edges)


# ---------------------------------------------------------------- source term


@dataclass(frozen=True)
class SourceTerm:
    """Piecewise definition of G with the free-segment amplitudes."""

    dim: int
    delta: float
    kind: str
    amp_re: np.ndarray  # (2, N_CONTROL_POINTS)
    amp_im: np.ndarray  # (2, N_CONTROL_POINTS)

    @property
    def segments(self):
        d = self.delta
        return ((d, 0.5 - d), (0.5 + d, 1.0 - d))

    def _band(self, z, order):
        p = band_power(self.kind)
        from math import factorial

        return factorial(p) * jets.monomial(z, 0.5, p, order)

    def _pinned(self, which: str, z, order):
        if which == "origin":
            return jets.constant(z, -2.0 * self.dim, order)
        if which == "band":
            return self._band(z, order)
        return jets.gexp(z, order, self.dim)

    def _segment_base(self, i: int, z, order):
        a, b = self.segments[i]
        w = 0.25 * (b - a)
        left, right = (("origin", "band"), ("band", "outer"))[i]
        wl = -jets.affine(jets.step, z, 1.0 / w, -a / w, order)
        wl[0] += 1.0
        wr = jets.affine(jets.step, z, 1.0 / w, -(b - w) / w, order)
        return jets.mul(wl, self._pinned(left, z, order)) + jets.mul(wr, self._pinned(right, z, order))

    def basis(self, i: int, z, order) -> np.ndarray:
        """Nonnegative bumps centred at the control points of segment ``i``."""
        a, b = self.segments[i]
        h = (b - a) / (N_CONTROL_POINTS + 1)
        out = np.empty((N_CONTROL_POINTS, order + 1) + np.shape(z))
        for k in range(N_CONTROL_POINTS):
            c = a + (k + 1) * h
            out[k] = jets.affine(jets.bump, z, 1.0 / h, -c / h, order)
        return out

    def jet(self, z, order: int) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        cplx = self.kind == QUADRATIC_COMPLEX
        out = np.zeros((order + 1,) + z.shape, dtype=complex if cplx else float)
        d = self.delta
        (a1, b1), (a2, b2) = self.segments
        pieces = [
            ((z > 0) & (z < a1), lambda zz: self._pinned("origin", zz, order)),
            ((z >= a1) & (z <= b1), lambda zz: self._segment(0, zz, order)),
            ((z > b1) & (z < a2), lambda zz: self._band(zz, order)),
            ((z >= a2) & (z <= b2), lambda zz: self._segment(1, zz, order)),
            ((z > b2) & (z < 1.0), lambda zz: self._pinned("outer", zz, order)),
        ]
        for mask, fn in pieces:
            if np.any(mask):
                out[:, mask] = fn(z[mask])
        out[0][z == 0] = -2.0 * self.dim
        del d
        return out

    def _segment(self, i, z, order):
        base = self._segment_base(i, z, order)
        B = self.basis(i, z, order)
        val = base + np.tensordot(self.amp_re[i], B, axes=1)
        if self.kind == QUADRATIC_COMPLEX:
            val = val + 1j * np.tensordot(self.amp_im[i], B, axes=1)
        return val

    def __call__(self, z, order: int = 0):
        return self.jet(z, order)[order]


def _moment_weights(dim: int, y: np.ndarray) -> np.ndarray:
    """Rows: weight of the vanishing moment, weight of the normalization moment."""
    first = y ** (dim - 1)
    second = y * np.log(y) if dim == 2 else y
    return np.stack([first, second])


def moment_targets(dim: int) -> np.ndarray:
    return np.array([0.0, 1.0 if dim == 2 else 2.0 - dim])


def _origin_moments(dim: int, delta: float) -> np.ndarray:
    """Exact moments of G = -2N on (0, delta)."""
    c = -2.0 * dim
    first = c * delta**dim / dim
    if dim == 2:
        second = c * (0.5 * delta**2 * np.log(delta) - 0.25 * delta**2)
    else:
        second = c * 0.5 * delta**2
    return np.array([first, second])


def moments(G: SourceTerm, panels_per_unit: int = 400) -> np.ndarray:
    """The two moment integrals of G over (0, 1) by composite Gauss-Legendre."""
    edges = panel_edges(G.delta, panels_per_unit)
    y, w = gauss_nodes(edges[:-1], edges[1:])
    vals = G(y.ravel()).reshape(y.shape)
    W = _moment_weights(G.dim, y)
    return _origin_moments(G.dim, G.delta) + np.sum(W * vals * w, axis=(1, 2))


def _basis_moments(G: SourceTerm, panels_per_unit: int = 400) -> np.ndarray:
    """Moments of every basis bump, shape (2 segments, 2 moments, N_CONTROL_POINTS)."""
    out = np.zeros((2, 2, N_CONTROL_POINTS))
    for i, (a, b) in enumerate(G.segments):
        edges = np.linspace(a, b, int(np.ceil((b - a) * panels_per_unit)) + 1)
        y, w = gauss_nodes(edges[:-1], edges[1:])
        B = G.basis(i, y.ravel(), 0)[:, 0].reshape((N_CONTROL_POINTS,) + y.shape)
        W = _moment_weights(G.dim, y)
        out[i] = np.einsum("mpq,kpq,pq->mk", W, B, w)
    return out


def _outer_sign_proxy(dim: int, z: np.ndarray) -> np.ndarray:
    """G / exp(-1/(1-z^2)) on the outer piece; same sign as G but free of underflow."""
    q = 1.0 - z**2
    phi1 = -2.0 * z / q**2
    phi2 = -2.0 / q**2 - 8.0 * z**2 / q**3
    return phi2 + phi1**2 + (dim - 1) / z * phi1


def sign_values(G: "SourceTerm", grid: np.ndarray) -> np.ndarray:
    """Values of G with the outer piece replaced by a positive multiple that cannot underflow."""
    vals = np.array(G(grid))
    outer = (grid > 1.0 - G.delta) & (grid < 1.0)
    vals[outer] = _outer_sign_proxy(G.dim, grid[outer])
    return vals


def _check_signs(G: SourceTerm, grid: np.ndarray) -> str | None:
    """Name of the first violated sign condition at the grid nodes, or None."""
    (a1, b1), (a2, b2) = G.segments
    vals = sign_values(G, grid)
    if G.kind == CUBIC:
        inner = (grid > 0) & (grid < 1) & (grid != 0.5)
        bad = (grid[inner] - 0.5) * vals[inner] <= 0
        return "(z-1/2) G(z) > 0 on (0,1)" if np.any(bad) else None
    left = (grid > a1) & (grid < b1)
    if np.any(vals[left].imag >= 0):
        return "Im G < 0 on the left free segment"
    right = (grid > a2) & (grid < b2)
    if np.any(vals[right].real <= 0):
        return "Re G > 0 on the right free segment"
    if np.any(vals[right].real <= vals[right].imag):
        return "Re G > Im G on the right free segment"
    return None


def _signed_least_norm(A: np.ndarray, rhs: np.ndarray, signs: np.ndarray, floor: float) -> np.ndarray | None:
    """Least-norm x with A x = rhs and signs * x >= floor (entries with sign 0 are free)."""
    n = A.shape[1]
    bounds = [(floor, None) if s > 0 else (None, -floor) if s < 0 else (None, None) for s in signs]
    x0 = np.linalg.lstsq(A, rhs, rcond=None)[0]
    x0 = np.where(signs != 0, signs * np.maximum(signs * x0, 2 * floor), x0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(
            lambda x: 0.5 * x @ x,
            x0,
            jac=lambda x: x,
            constraints=[{"type": "eq", "fun": lambda x: A @ x - rhs, "jac": lambda x: A}],
            bounds=bounds,
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
    if not res.success:
        return None
    x = res.x
    # polish the equality constraints; the correction is tiny and keeps the signs
    x = x + np.linalg.lstsq(A, rhs - A @ x, rcond=None)[0]
    if np.any(signs * x < 0.5 * floor * np.abs(signs)):
        return None
    return x.reshape(n // N_CONTROL_POINTS, N_CONTROL_POINTS) if n % N_CONTROL_POINTS == 0 else x


def construct_source_profile(dim: int, delta: float, kind: str = CUBIC, z_grid_n: int = 2049) -> SampledProfile:
    """Build G on [0, 1] satisfying the pinned pieces, the moment conditions and the sign conditions."""
    if int(dim) != dim or dim < 1:
        raise ParameterError(f"dim must be a positive integer, got {dim}")
    check_delta(delta)
    check_kind(kind)
    dim = int(dim)
    zeros = np.zeros((2, N_CONTROL_POINTS))
    grid = np.linspace(0.0, 1.0, z_grid_n)

    base = SourceTerm(dim, delta, kind, zeros, zeros)
    rhs = moment_targets(dim) - moments(base).real
    M = _basis_moments(base)
    A = np.concatenate([M[0], M[1]], axis=1)

    # least-norm amplitudes over all twelve bumps, then the shared-amplitude fallback
    attempts = [np.linalg.lstsq(A, rhs, rcond=None)[0].reshape(2, N_CONTROL_POINTS)]
    shared = np.stack([M[0].sum(axis=1), M[1].sum(axis=1)], axis=1)
    s = np.linalg.solve(shared, rhs)
    attempts.append(np.repeat(s[:, None], N_CONTROL_POINTS, axis=1))
    # sign-constrained least norm: the amplitudes carry the sign each segment needs
    if kind == CUBIC:
        signs = np.repeat([-1.0, 1.0], N_CONTROL_POINTS)
    else:
        signs = np.repeat([0.0, 1.0], N_CONTROL_POINTS)
    constrained = _signed_least_norm(A, rhs, signs, AMPLITUDE_FLOOR)
    if constrained is not None:
        attempts.append(constrained)

    amp_im = zeros
    if kind == QUADRATIC_COMPLEX:
        amp_im = _imaginary_amplitudes(M)

    violated = None
    names = ["least-norm", "shared-amplitude", "sign-constrained least-norm"]
    for method, amp_re in zip(names, attempts):
        scale = 1.0
        for _ in range(30):
            G = SourceTerm(dim, delta, kind, amp_re, scale * amp_im)
            violated = _check_signs(G, grid)
            if violated is None or kind == CUBIC or "Im G < 0" in violated:
                break
            scale *= 0.5
        if violated is None:
            break
    if violated is not None:
        raise ConstructionError(f"no admissible source term: sign condition violated: {violated}")

    residual = moments(G) - moment_targets(dim)
    if np.max(np.abs(residual)) > MOMENT_TOL:
        raise ConstructionError(f"moment conditions not met: residual {residual}")
    info = {
        "dim": dim,
        "delta": delta,
        "kind": kind,
        "amplitude_method": method,
        "moment_residuals": [complex(r) if kind == QUADRATIC_COMPLEX else float(r) for r in residual],
        "amplitudes_re": amp_re.tolist(),
        "amplitudes_im": (scale * amp_im).tolist(),
    }
    prof = SampledProfile("G", grid, G(grid), G.jet, info)
    object.__setattr__(prof, "source", G)
    return prof


def _imaginary_amplitudes(M: np.ndarray) -> np.ndarray:
    """Imaginary amplitudes: uniform negative on the left segment, moment-free on the right."""
    left = -np.ones(N_CONTROL_POINTS)
    right = np.linalg.lstsq(M[1], -M[0] @ left, rcond=None)[0]
    out = np.stack([left, right])
    return out / np.max(np.abs(out))


# ---------------------------------------------------------------- radial ODE


class RadialSolution:
    """g0 from the quadratures of the radial ODE, with exact higher derivatives.

    g0'(z) = z^(1-N) int_0^z s^(N-1) G ds and g0(z) = -int_z^1 g0'. The outer
    integral of the second quadrature is folded by parts, leaving single integrals:
    g0 = (z^(2-N) C(z) + int_z^1 y G) / (2-N) for N != 2 and
    g0 = ln(z) C(z) + int_z^1 y ln(y) G for N = 2, where C(z) = int_0^z s^(N-1) G.
    """

    def __init__(self, G: SourceTerm, panels_per_unit: int = 400):
        self.G = G
        self.dim = G.dim
        self.delta = G.delta
        self.dtype = complex if G.kind == QUADRATIC_COMPLEX else float
        edges = panel_edges(G.delta, panels_per_unit)
        self.edges = edges
        n = self.dim
        y, w = gauss_nodes(edges[:-1], edges[1:])
        Gy = G(y.ravel()).reshape(y.shape)
        inc = np.sum(y ** (n - 1) * Gy * w, axis=1)
        # C(e_k) for every panel edge, starting at delta
        self._c1 = -2.0 * self.delta**n + np.concatenate([[0.0], np.cumsum(inc)])
        consistency = self._c1[-1]
        if abs(consistency) > MOMENT_TOL:
            raise ConsistencyError(
                f"vanishing-moment condition fails (residual {abs(consistency):.3e}); g0' would blow up at 0"
            )
        inc = np.sum(self._outer_weight(y) * Gy * w, axis=1)
        self._tail = np.concatenate([np.cumsum(inc[::-1])[::-1], [0.0]])

    def _outer_weight(self, y):
        return y * np.log(y) if self.dim == 2 else y

    def _panel(self, z):
        k = np.searchsorted(self.edges, z, side="right") - 1
        return np.clip(k, 0, len(self.edges) - 2)

    def _inner(self, z):
        """C(z) for delta < z < 1."""
        k = self._panel(z)
        y, w = gauss_nodes(self.edges[k], z)
        part = np.sum(y ** (self.dim - 1) * self.G(y.ravel()).reshape(y.shape) * w, axis=1)
        return self._c1[k] + part

    def first_derivative(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape, dtype=self.dtype)
        near = (z > 0) & (z <= self.delta)
        out[near] = -2.0 * z[near]
        mid = (z > self.delta) & (z < 1.0 - self.delta)
        if np.any(mid):
            zm = z[mid]
            out[mid] = self._inner(zm) / zm ** (self.dim - 1)
        outer = (z >= 1.0 - self.delta) & (z < 1.0)
        out[outer] = jets.exp_core(z[outer], 1)[1]
        return out

    def value(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape, dtype=self.dtype)
        near = z <= self.delta
        out[near] = 1.0 - z[near] ** 2
        # on the outer piece the solution is known in closed form; using it keeps
        # the relative accuracy of the exponentially small values
        outer = (z >= 1.0 - self.delta) & (z < 1.0)
        out[outer] = jets.exp_core(z[outer], 0)[0]
        mid = (z > self.delta) & (z < 1.0 - self.delta)
        if np.any(mid):
            zm = z[mid]
            k = self._panel(zm)
            y, w = gauss_nodes(zm, self.edges[k + 1])
            tail = self._tail[k + 1] + np.sum(self._outer_weight(y) * self.G(y.ravel()).reshape(y.shape) * w, axis=1)
            c = self._inner(zm)
            if self.dim == 2:
                out[mid] = np.log(zm) * c + tail
            else:
                out[mid] = (zm ** (2 - self.dim) * c + tail) / (2 - self.dim)
        return out

    def jet(self, z, order: int) -> np.ndarray:
        """Rows g0, g0', g0'', ... using p^(k+1) = G^(k) + (k G^(k-1) - (k+N-1) p^(k)) / z."""
        z = np.asarray(z, dtype=float)
        n = self.dim
        dtype = complex if self.G.kind == QUADRATIC_COMPLEX else float
        out = np.zeros((order + 1,) + z.shape, dtype=dtype)
        out[0] = self.value(z)
        if order == 0:
            return out
        out[1] = self.first_derivative(z)
        if order >= 2:
            Gj = self.G.jet(z, order - 2)
            pos = z > 0
            zp = z[pos]
            for k in range(0, order - 1):
                prev = Gj[k - 1][pos] if k >= 1 else 0.0
                out[k + 2][pos] = Gj[k][pos] + (k * prev - (k + n - 1) * out[k + 1][pos]) / zp
            # at the origin g0 = 1 - z^2 exactly
            out[2][~pos] = -2.0
        outer = (z >= 1.0 - self.delta) & (z < 1.0)
        out[:, outer] = jets.exp_core(z[outer], order)
        out[:, z >= 1.0] = 0.0
        return out


def solve_radial_ode(G: SampledProfile, dim: int | None = None, z_grid_n: int | None = None) -> SampledProfile:
    """g0 on [0, 1] (extended by zero beyond 1) from the source profile ``G``."""
    source: SourceTerm = G.source
    if dim is not None and dim != source.dim:
        raise ParameterError(f"dimension mismatch: G built for N={source.dim}, asked N={dim}")
    sol = RadialSolution(source)
    n = z_grid_n or len(G.grid)
    info = {"g0(0+)": complex(sol.value(np.array([0.0]))[0]) if source.kind == QUADRATIC_COMPLEX
            else float(sol.value(np.array([0.0]))[0])}
    prof = sample("g0", 0.0, 1.0, n, sol.jet, info)
    object.__setattr__(prof, "solution", sol)
    return prof


# ---------------------------------------------------------------- bump profiles


def plateau(z, delta: float, order: int) -> np.ndarray:
    """Equal to 1 on |z-1/2| <= delta/4, supported in |z-1/2| <= delta/2."""
    q = 0.25 * delta
    left = jets.affine(jets.step, z, 1.0 / q, -(0.5 - 0.5 * delta) / q, order)
    right = jets.affine(jets.step, z, -1.0 / q, (0.5 + 0.5 * delta) / q, order)
    return jets.mul(left, right)


def bump_profile_jet(power: int, delta: float):
    def jet(z, order):
        z = np.asarray(z, dtype=float)
        return jets.mul(jets.monomial(z, 0.5, power, order), plateau(z, delta, order))

    return jet


def build_bump_profiles(delta: float, kind: str = CUBIC, z_grid_n: int = 2049) -> list[SampledProfile]:
    """g1, g2 (and g3 for the cubic kind): (z-1/2)^j / j! times a plateau bump, j = 2, 3, 4."""
    check_delta(delta)
    check_kind(kind)
    count = 3 if kind == CUBIC else 2
    return [
        sample(f"g{i}", 0.0, 1.0, z_grid_n, bump_profile_jet(i + 1, delta), {"power": i + 1})
        for i in range(1, count + 1)
    ]


# ---------------------------------------------------------------- time profiles


@lru_cache(maxsize=None)
def _time_closed_forms(kind: str, dim: int):
    """Lambdified ratios f_i / f0 and (d f_i/dt) / f0 as functions of (t, eps, d0, d1, d2, d3).

    Every f_i is f0 times a rational function of t, and (f0 P)' = f0 (P' + phi' P)
    with phi' = f0'/f0 = -2t/(1-t^2)^2, so the exponential never enters the algebra.
    """
    t, eps = sp.symbols("t epsilon", real=True)
    d = sp.symbols("d0:4")  # g0^(j)(1/2), possibly complex
    N = dim
    half = sp.Rational(1, 2)
    phi_dot = -2 * t / (1 - t**2) ** 2

    def dot(P):
        return sp.diff(P, t) + phi_dot * P

    lam = eps * (1 - t**2) ** 2
    ll = lam * sp.diff(lam, t)
    # ratios to f0: F0 = 1, F0_dot = phi_dot
    F0, F0_dot = sp.Integer(1), phi_dot
    F1 = -half * ll * F0 * d[1] + lam**2 * F0_dot * d[0]
    F2 = -(F1 * (2 * (N - 1) + half * ll) + half * ll * F0 * d[2] + (ll * F0 - lam**2 * F0_dot) * d[1])
    Fs = [F0, F1, F2]
    if kind == CUBIC:
        F3 = -((2 * (N - 1) + half * ll) * F2 + (2 * ll - 8 * (N - 1)) * F1 - lam**2 * dot(F1)
               + half * ll * F0 * d[3] + (2 * ll * F0 - lam**2 * F0_dot) * d[2])
        Fs.append(F3)
    args = (t, eps) + d
    ratios = tuple(sp.lambdify(args, F, "numpy") for F in Fs)
    dratios = tuple(sp.lambdify(args, dot(F), "numpy") for F in Fs)
    return ratios, dratios


def f0_value(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return jets.exp_core(t, 0)[0]


@dataclass(frozen=True)
class TimeProfiles:
    """lambda, f0 and the correctors f_i, with their exact time derivatives."""

    kind: str
    dim: int
    bump_epsilon: float
    g0_at_half: tuple  # g0^(j)(1/2), j = 0..3

    def _call(self, table, i, t):
        t = np.asarray(t, dtype=float)
        val = table[i](t, self.bump_epsilon, *self.g0_at_half)
        return np.broadcast_to(val, t.shape).astype(np.result_type(val, float))

    @property
    def count(self) -> int:
        return 4 if self.kind == CUBIC else 3

    def ratio(self, i: int, t) -> np.ndarray:
        """f_i / f0 (a rational function of t), zero for |t| >= 1."""
        t = np.asarray(t, dtype=float)
        inside = np.abs(t) < 1
        out = np.zeros(t.shape, dtype=complex if self.kind == QUADRATIC_COMPLEX else float)
        out[inside] = self._call(_time_closed_forms(self.kind, self.dim)[0], i, t[inside])
        return out

    def ratio_dot(self, i: int, t) -> np.ndarray:
        """(d f_i / dt) / f0."""
        t = np.asarray(t, dtype=float)
        inside = np.abs(t) < 1
        out = np.zeros(t.shape, dtype=complex if self.kind == QUADRATIC_COMPLEX else float)
        out[inside] = self._call(_time_closed_forms(self.kind, self.dim)[1], i, t[inside])
        return out

    def lam(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.where(np.abs(t) < 1, self.bump_epsilon * (1 - t**2) ** 2, 0.0)

    def lam_dot(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.where(np.abs(t) < 1, -4 * self.bump_epsilon * t * (1 - t**2), 0.0)

    def f(self, i: int, t) -> np.ndarray:
        return self.ratio(i, t) * f0_value(t)

    def f_dot(self, i: int, t) -> np.ndarray:
        return self.ratio_dot(i, t) * f0_value(t)


def build_time_profiles(cfg, g0: SampledProfile, t_grid_n: int | None = None) -> tuple[list[SampledProfile], TimeProfiles]:
    """lambda, f0, f1, f2 (and f3 for the cubic kind) on [-1, 1].

    ``cfg`` needs ``bump_epsilon``, ``dim`` and ``kind``. Returns the sampled
    profiles and the closed-form evaluator they were sampled from.
    """
    check_kind(cfg.kind)
    if not cfg.bump_epsilon > 0:
        raise ParameterError(f"bump_epsilon must be positive, got {cfg.bump_epsilon}")
    half = g0.derivatives(np.array([0.5]), 3)[:, 0]
    vals = tuple(complex(v) if cfg.kind == QUADRATIC_COMPLEX else float(v.real) for v in half)
    tp = TimeProfiles(cfg.kind, int(cfg.dim), float(cfg.bump_epsilon), vals)
    n = t_grid_n or getattr(cfg, "t_grid_n", 2049)

    def pair(value, deriv):
        def jet(t, order):
            if order > 1:
                raise ValueError("time profiles carry value and first derivative only")
            rows = [value(t)] + ([deriv(t)] if order == 1 else [])
            return np.stack(rows)

        return jet

    out = [sample("lambda", -1.0, 1.0, n, pair(tp.lam, tp.lam_dot))]
    for i in range(tp.count):
        out.append(sample(f"f{i}", -1.0, 1.0, n, pair(lambda t, i=i: tp.f(i, t), lambda t, i=i: tp.f_dot(i, t))))
    return out, tp
