"""Finite-difference solvers for the coupled two-component parabolic system on an interval.

Space is discretized with the centred three-point Laplacian on the interior nodes
of a uniform mesh (homogeneous Dirichlet data at both ends), time with the
theta-scheme. The two unknowns are interleaved node by node, so each time step is
a banded solve with two sub- and two super-diagonals. The per-step LU factors are
kept, which makes the adjoint sweep an exact transpose of the forward sweep.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.linalg import get_lapack_funcs

from .errors import ParameterError, ReturnCtrlError

KL = KU = 2


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform space-time grid on (0, T) x (x_lo, x_hi) with nx interior nodes."""

    x_lo: float = 0.0
    x_hi: float = 1.0
    nx: int = 200
    T: float = 1.0
    nt: int = 400
    theta: float = 1.0

    def __post_init__(self):
        if self.nx < 3 or self.nt < 2:
            raise ParameterError(f"grid needs nx >= 3 and nt >= 2, got nx={self.nx}, nt={self.nt}")
        if not self.T > 0:
            raise ParameterError(f"horizon T must be positive, got {self.T}")
        if not self.x_lo < self.x_hi:
            raise ParameterError(f"need x_lo < x_hi, got ({self.x_lo}, {self.x_hi})")
        if self.theta not in (0.5, 1.0):
            raise ParameterError(f"theta must be 1/2 or 1, got {self.theta}")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx + 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_lo + self.dx * np.arange(1, self.nx + 1)

    @cached_property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt + 1, self.nx)

    def space_mask(self, interval) -> np.ndarray:
        """Sharp nodal indicator of a closed subinterval."""
        a, b = interval
        return (self.x >= a - 1e-12) & (self.x <= b + 1e-12)

    def time_mask(self, interval) -> np.ndarray:
        a, b = interval
        return (self.t >= a - 1e-12) & (self.t <= b + 1e-12)

    def with_resolution(self, nx: int, nt: int) -> "SpaceTimeGrid":
        return replace(self, nx=nx, nt=nt)

    def as_dict(self) -> dict:
        return {"x_lo": self.x_lo, "x_hi": self.x_hi, "nx": self.nx, "T": self.T, "nt": self.nt, "theta": self.theta}


@dataclass(frozen=True)
class Field:
    """Space-time samples on the interior nodes; boundary values are implicitly zero."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ParameterError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid, complex_: bool = False) -> "Field":
        return cls(grid, np.zeros(grid.shape, dtype=complex if complex_ else float))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def final(self) -> np.ndarray:
        return self.values[-1]

    def l2_at(self, n: int) -> float:
        return float(np.sqrt(self.grid.dx * np.sum(np.abs(self.values[n]) ** 2)))

    def l2(self) -> float:
        """Space-time L2 norm with the rectangle rule in time."""
        g = self.grid
        return float(np.sqrt(g.dt * g.dx * np.sum(np.abs(self.values) ** 2)))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class FieldPair:
    first: Field
    second: Field

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.first.grid

    def final(self) -> np.ndarray:
        return np.concatenate([self.first.final(), self.second.final()])

    def final_l2(self) -> float:
        return float(np.hypot(self.first.l2_at(-1), self.second.l2_at(-1)))

    def sup(self) -> float:
        return max(self.first.sup(), self.second.sup())


@dataclass
class CoefficientSet:
    """Coupling coefficients a_ij on the grid (scalars broadcast), with the measured bound and window."""

    a11: np.ndarray | complex
    a12: np.ndarray | complex
    a21: np.ndarray | complex
    a22: np.ndarray | complex
    M_bar: float | None = None
    window: tuple | None = None  # (t1, t2, x_a, x_b)

    def arrays(self, grid: SpaceTimeGrid) -> tuple[np.ndarray, ...]:
        return tuple(np.broadcast_to(np.asarray(a), grid.shape) for a in (self.a11, self.a12, self.a21, self.a22))

    @property
    def is_complex(self) -> bool:
        return any(np.iscomplexobj(np.asarray(a)) for a in (self.a11, self.a12, self.a21, self.a22))

    def measured_bound(self, grid: SpaceTimeGrid) -> float:
        return float(max(np.max(np.abs(a)) for a in self.arrays(grid)))

    def check(self, grid: SpaceTimeGrid, complex_kind: bool = False) -> None:
        """Verify |a_ij| <= M_bar everywhere and the coupling lower bound on the window."""
        if self.M_bar is None:
            return
        if self.measured_bound(grid) > self.M_bar * (1 + 1e-12):
            raise ParameterError("coefficient exceeds the stated bound M_bar")
        if self.window is not None:
            t1, t2, xa, xb = self.window
            a21 = self.arrays(grid)[2][np.ix_(grid.time_mask((t1, t2)), grid.space_mask((xa, xb)))]
            low = np.abs(a21.imag) if complex_kind else a21.real
            if a21.size == 0 or np.min(low) < 1.0 / self.M_bar * (1 - 1e-12):
                raise ParameterError("coupling lower bound fails on the stated window")


def zero_coefficients() -> CoefficientSet:
    return CoefficientSet(0.0, 0.0, 0.0, 0.0)


def laplacian(u: np.ndarray, dx: float) -> np.ndarray:
    """Dirichlet three-point Laplacian along the last axis."""
    out = -2.0 * u
    out[..., 1:] += u[..., :-1]
    out[..., :-1] += u[..., 1:]
    return out / dx**2


class ThetaStepper:
    """Factorized theta-scheme for one (grid, coefficients) pair.

    Step n -> n+1 reads  P_{n+1} y^{n+1} = E_n y^n + dt (theta s^{n+1} + (1-theta) s^n)
    with P = I - theta dt A, E = I + (1-theta) dt A, A the coupled operator.
    """

    def __init__(self, grid: SpaceTimeGrid, coeffs: CoefficientSet, complex_: bool | None = None):
        self.grid = grid
        self.coeffs = coeffs
        if complex_ is None:
            complex_ = coeffs.is_complex
        self.dtype = np.complex128 if complex_ or coeffs.is_complex else np.float64
        self.a = tuple(np.asarray(c, dtype=self.dtype) for c in coeffs.arrays(grid))
        self._gbtrf, self._gbtrs = get_lapack_funcs(("gbtrf", "gbtrs"), dtype=self.dtype)
        self._factors = [None] * (grid.nt + 1)

    def _banded(self, n: int) -> np.ndarray:
        g = self.grid
        nx, c = g.nx, g.theta * g.dt
        a11, a12, a21, a22 = (a[n] for a in self.a)
        ab = np.zeros((2 * KL + KU + 1, 2 * nx), dtype=self.dtype)
        diag = ab[KL + KU]
        diag[0::2] = 1.0 - c * (-2.0 / g.dx**2 + a11)
        diag[1::2] = 1.0 - c * (-2.0 / g.dx**2 + a22)
        # A[i, j] sits at row KL + KU + i - j, column j
        ab[KL + KU - 1, 1::2] = -c * a12  # (2k, 2k+1)
        ab[KL + KU + 1, 0::2] = -c * a21  # (2k+1, 2k)
        ab[KL + KU - 2, 2:] = -c / g.dx**2
        ab[KL + KU + 2, :-2] = -c / g.dx**2
        return ab

    def factor(self, n: int):
        f = self._factors[n]
        if f is None:
            lu, piv, info = self._gbtrf(self._banded(n), KL, KU)
            if info != 0:
                raise ReturnCtrlError(f"singular time-step matrix at step {n}")
            f = self._factors[n] = (lu, piv)
        return f

    def solve(self, n: int, rhs: np.ndarray, trans: int = 0) -> np.ndarray:
        lu, piv = self.factor(n)
        x, info = self._gbtrs(lu, KL, KU, rhs.reshape(-1, 1), piv, trans=trans)
        return x[:, 0]

    def apply_A(self, n: int, y1, y2, transpose: bool = False, conjugate: bool = False):
        a11, a12, a21, a22 = (a[n] for a in self.a)
        if transpose:
            a12, a21 = a21, a12
        if conjugate:
            a11, a12, a21, a22 = (np.conj(v) for v in (a11, a12, a21, a22))
        dx = self.grid.dx
        return laplacian(y1, dx) + a11 * y1 + a12 * y2, laplacian(y2, dx) + a21 * y1 + a22 * y2


def _interleave(y1, y2):
    out = np.empty(2 * y1.shape[-1], dtype=np.result_type(y1, y2))
    out[0::2] = y1
    out[1::2] = y2
    return out


def _profile(grid: SpaceTimeGrid, p) -> np.ndarray:
    if p is None:
        return np.zeros(grid.nx)
    if callable(p):
        return np.asarray(p(grid.x))
    p = np.asarray(p)
    if p.shape == ():
        return np.full(grid.nx, p)
    if p.shape != (grid.nx,):
        raise ParameterError(f"profile has shape {p.shape}, expected ({grid.nx},)")
    return p


def solve_forward(grid: SpaceTimeGrid, coeffs: CoefficientSet, initial=(None, None), source_h=None,
                  omega=None, stepper: ThetaStepper | None = None, start: int = 0, stop: int | None = None,
                  ) -> FieldPair:
    """Forward theta-scheme sweep; ``source_h`` enters the first equation masked by ``omega``.

    ``start``/``stop`` restrict the sweep to the time indices [start, stop]; the
    returned fields are zero outside that range.
    """
    stop = grid.nt if stop is None else stop
    y1, y2 = (_profile(grid, p) for p in initial)
    h = None
    if source_h is not None:
        h = source_h.values if isinstance(source_h, Field) else np.asarray(source_h)
        if h.shape != grid.shape:
            raise ParameterError(f"source shape {h.shape} does not match grid {grid.shape}")
    complex_ = any(np.iscomplexobj(v) for v in (y1, y2)) or (h is not None and np.iscomplexobj(h))
    st = stepper or ThetaStepper(grid, coeffs, complex_)
    if complex_ and st.dtype != np.complex128:
        st = ThetaStepper(grid, coeffs, True)
    mask = np.ones(grid.nx) if omega is None else grid.space_mask(omega).astype(float)
    th, dt = grid.theta, grid.dt
    out1 = np.zeros(grid.shape, dtype=st.dtype)
    out2 = np.zeros(grid.shape, dtype=st.dtype)
    out1[start], out2[start] = y1, y2
    for n in range(start, stop):
        r1, r2 = y1, y2
        if th < 1:
            A1, A2 = st.apply_A(n, y1, y2)
            r1, r2 = y1 + (1 - th) * dt * A1, y2 + (1 - th) * dt * A2
        if h is not None:
            r1 = r1 + dt * mask * (th * h[n + 1] + (1 - th) * h[n])
        y = st.solve(n + 1, _interleave(r1, r2))
        y1, y2 = y[0::2], y[1::2]
        out1[n + 1], out2[n + 1] = y1, y2
    return FieldPair(Field(grid, out1), Field(grid, out2))


@dataclass(frozen=True)
class AdjointPair:
    """Adjoint states (phi_1, phi_2) with phi(T) = phi_T, plus the observation densities.

    ``observed`` is the exact dual of the forward source: for zero initial data
    <zeta(T), phi_T> = sum_n dt dx h^n . conj(observed_1^n) over the control mask.
    """

    phi: FieldPair
    observed: FieldPair

    @property
    def first(self) -> Field:
        return self.phi.first

    @property
    def second(self) -> Field:
        return self.phi.second


def solve_adjoint(grid: SpaceTimeGrid, coeffs: CoefficientSet, final=(None, None), conjugate: bool = False,
                  stepper: ThetaStepper | None = None, start: int = 0, stop: int | None = None) -> AdjointPair:
    """Backward sweep: the exact discrete (conjugate) transpose of :func:`solve_forward`."""
    stop = grid.nt if stop is None else stop
    p1, p2 = (_profile(grid, p) for p in final)
    complex_ = conjugate or coeffs.is_complex or np.iscomplexobj(p1) or np.iscomplexobj(p2)
    if conjugate and not complex_:
        raise ParameterError("conjugate adjoint requires complex scalars")
    st = stepper or ThetaStepper(grid, coeffs, complex_)
    if complex_ and st.dtype != np.complex128:
        st = ThetaStepper(grid, coeffs, True)
    trans = 2 if conjugate else 1
    th, dt = grid.theta, grid.dt
    shape = grid.shape
    psi1, psi2 = np.zeros(shape, st.dtype), np.zeros(shape, st.dtype)
    mu1, mu2 = np.zeros(shape, st.dtype), np.zeros(shape, st.dtype)
    psi1[stop], psi2[stop] = p1, p2
    y1, y2 = np.asarray(p1, st.dtype), np.asarray(p2, st.dtype)
    for n in range(stop - 1, start - 1, -1):
        m = st.solve(n + 1, _interleave(y1, y2), trans=trans)
        m1, m2 = m[0::2], m[1::2]
        mu1[n + 1], mu2[n + 1] = m1, m2
        if th < 1:
            A1, A2 = st.apply_A(n, m1, m2, transpose=True, conjugate=conjugate)
            y1, y2 = m1 + (1 - th) * dt * A1, m2 + (1 - th) * dt * A2
        else:
            y1, y2 = m1, m2
        psi1[n], psi2[n] = y1, y2
    obs1, obs2 = th * mu1, th * mu2
    obs1[start:stop] += (1 - th) * mu1[start + 1 : stop + 1]
    obs2[start:stop] += (1 - th) * mu2[start + 1 : stop + 1]
    return AdjointPair(
        FieldPair(Field(grid, psi1), Field(grid, psi2)),
        FieldPair(Field(grid, obs1), Field(grid, obs2)),
    )


def pairing(grid: SpaceTimeGrid, a: np.ndarray, b: np.ndarray, conjugate: bool = True):
    """Discrete L2 pairing dx * sum a conj(b) (bilinear when conjugate is False)."""
    return grid.dx * np.sum(a * (np.conj(b) if conjugate else b))


def space_time_pairing(grid: SpaceTimeGrid, h: np.ndarray, g: np.ndarray, mask=None, conjugate: bool = True):
    """dt dx sum over all time levels of h conj(g) restricted to the nodal mask."""
    w = 1.0 if mask is None else mask
    return grid.dt * grid.dx * np.sum(w * h * (np.conj(g) if conjugate else g))
