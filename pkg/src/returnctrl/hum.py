"""Null controls of the linear coupled system by the penalized weighted dual method.

The control acts on the first equation only, on a window (t1, t2) x omega0. With
the weight W = exp(-s rho eta) (s eta)^7 the penalized problem

    minimize  1/2 sum W^-1 |h|^2  +  1/(2 penalty) |zeta(t2)|^2

has the dual  (Lambda + penalty) phi_T = -zeta_free(t2), where Lambda maps an
adjoint final datum to the state it steers to at t2 through h = W phi_1 1_omega0.
Lambda is Hermitian and positive semidefinite for the discrete L2 pairing because
the adjoint solver is the exact transpose of the forward one, so plain conjugate
gradient applies. Outside the window the state evolves freely.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    CouplingDegeneracyError,
    GeometryError,
    ParameterError,
    WeightConfigurationError,
)
from .pde import (
    CoefficientSet,
    Field,
    FieldPair,
    SpaceTimeGrid,
    ThetaStepper,
    pairing,
    solve_adjoint,
    solve_forward,
)
from .profiles import SampledProfile
from .rng import DEFAULT_GENERATOR, make_rng

log = logging.getLogger(__name__)

WEIGHT_POWER = 7
CG_TOL = 1e-10
CG_MAXITER = 2000
_TINY = 1e-300


# ---------------------------------------------------------------- weights


def _pow(y, k):
    return y**k if k >= 0 else np.zeros_like(y)


def _psi_exponents(c: float, max_degree: int = 40) -> tuple[int, int]:
    """Integers (m, n) such that y^m (1-y)^n peaks at m/(m+n), as close to c as possible."""
    best = (1, 1)
    for d in range(2, max_degree + 1):
        for m in range(1, d):
            if abs(m / d - c) < abs(best[0] / sum(best) - c) - 1e-15:
                best = (m, d - m)
    return best


@dataclass(frozen=True)
class CarlemanWeight:
    """The space-time weight of the penalized problem on a control window.

    ``eta`` uses the window relabelled to (0, t2 - t1) with time clamped to
    [kappa L, (1 - kappa) L]. The stored weight is normalized to a maximum of one
    over the window; the factor ``log_scale`` that was divided out is kept.
    """

    s: float
    rho_x: SampledProfile
    eta_clamp: float
    grid: SpaceTimeGrid
    window: tuple[float, float]
    omega1: tuple[float, float]
    exponents: tuple[int, int] = (1, 1)
    log_scale: float = 0.0

    def eta(self, t, clamp: bool = True) -> np.ndarray:
        t1, t2 = self.window
        L = t2 - t1
        tau = np.asarray(t, dtype=float) - t1
        if clamp:
            tau = np.clip(tau, self.eta_clamp * L, (1 - self.eta_clamp) * L)
        return 1.0 / (tau * (L - tau))

    def log_weight(self, t, x) -> np.ndarray:
        """log of exp(-s rho eta) (s eta)^7 before normalization."""
        e = self.eta(t)
        return -self.s * self.rho_x(x) * e + WEIGHT_POWER * np.log(self.s * e)

    def values(self) -> np.ndarray:
        """Normalized weight on the whole grid; zero outside the retained time levels."""
        g = self.grid
        keep = retained_levels(g, self.window)
        T, X = np.meshgrid(g.t[keep], g.x, indexing="ij")
        out = np.zeros(g.shape)
        out[keep] = np.exp(self.log_weight(T, X) - self.log_scale)
        return out


def retained_levels(grid: SpaceTimeGrid, window) -> np.ndarray:
    """Time levels strictly inside the window: only there may the control be nonzero.

    With this choice every time step that reads a nonzero control lies inside the
    window for both theta = 1 and theta = 1/2.
    """
    t1, t2 = window
    n1, n2 = window_indices(grid, window)
    keep = np.zeros(grid.nt + 1, dtype=bool)
    keep[n1 + 1 : n2] = True
    return keep


def window_indices(grid: SpaceTimeGrid, window) -> tuple[int, int]:
    t1, t2 = window
    n1 = int(round(t1 / grid.dt))
    n2 = int(round(t2 / grid.dt))
    if not (0 <= n1 and n2 <= grid.nt and n2 - n1 >= 2):
        raise GeometryError(f"control window {window} does not cover two time steps of the grid")
    return n1, n2


def build_weights(grid: SpaceTimeGrid, s: float, omega1, kappa: float = 0.05, window=None,
                  omega0=None) -> CarlemanWeight:
    """Weight with rho(x) = exp(2 mu |psi|) - exp(mu psi(x)), mu = 2/|psi|.

    psi = y^m (1-y)^n on the relabelled interval y in (0, 1), with the peak
    m/(m+n) placed inside ``omega1``.
    """
    if not s > 0:
        raise ParameterError(f"weight strength s must be positive, got {s}")
    if not 0 < kappa < 0.25:
        raise ParameterError(f"eta clamp must lie in (0, 1/4), got {kappa}")
    a, b = float(omega1[0]), float(omega1[1])
    lo, hi = (grid.x_lo, grid.x_hi) if omega0 is None else (float(omega0[0]), float(omega0[1]))
    if not (lo < a < b < hi and grid.x_lo <= lo and hi <= grid.x_hi):
        raise GeometryError(f"omega1 = {tuple(omega1)} must lie strictly inside omega0 = ({lo}, {hi})")
    window = (0.0, grid.T) if window is None else (float(window[0]), float(window[1]))
    L = grid.x_hi - grid.x_lo
    m, n = _psi_exponents(0.5 * (a + b - 2 * grid.x_lo) / L)
    peak = grid.x_lo + L * m / (m + n)
    if not a < peak < b:
        raise GeometryError(f"omega1 = {tuple(omega1)} is too narrow to hold the critical point of psi")
    psi_max = (m / (m + n)) ** m * (n / (m + n)) ** n
    mu = 2.0 / psi_max

    def jet(x, order):
        # factored forms: expanded coefficients of y^m (1-y)^n lose all digits for large m + n
        if order > 2:
            raise ParameterError("rho(x) is sampled with two derivatives")
        y = np.clip((np.asarray(x, float) - grid.x_lo) / L, 0.0, 1.0)
        w = 1.0 - y
        e = np.exp(mu * y**m * w**n)
        out = [np.exp(2 * mu * psi_max) - e]
        if order >= 1:
            d1 = y ** (m - 1) * w ** (n - 1) * (m * w - n * y)
            out.append(-mu * d1 * e / L)
        if order >= 2:
            d2 = m * (m - 1) * _pow(y, m - 2) * w**n - 2 * m * n * y ** (m - 1) * w ** (n - 1) \
                + n * (n - 1) * y**m * _pow(w, n - 2)
            out.append(-mu * (d2 + mu * d1**2) * e / L**2)
        return np.stack(out)

    xs = np.linspace(grid.x_lo, grid.x_hi, 2 * grid.nx + 3)
    rho_x = SampledProfile("rho", xs, jet(xs, 0)[0], jet, {"psi_exponents": [m, n], "mu": mu})
    w = CarlemanWeight(s, rho_x, kappa, grid, window, (a, b), (m, n))
    keep = retained_levels(grid, window)
    T, X = np.meshgrid(grid.t[keep], grid.x, indexing="ij")
    lw = w.log_weight(T, X)
    scale = float(np.max(lw))
    w = CarlemanWeight(s, rho_x, kappa, grid, window, (a, b), (m, n), scale)
    spread = scale - float(np.min(lw))
    if not np.all(np.isfinite(lw)) or spread > -np.log(_TINY):
        raise WeightConfigurationError(
            f"weight spans {spread:.0f} e-folds on the window; it underflows at retained nodes (lower s)")
    return w


def select_window(grid: SpaceTimeGrid, a21, complex_kind: bool = False, fraction: float = 0.6,
                  levels=(0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01)) -> tuple[tuple[float, float], tuple[float, float]]:
    """Control window (t1, t2) and omega0 from the coupling coefficient.

    The first candidate is the middle ``fraction`` of the temporal and spatial
    extent of the support of a21. It is kept when the coupling stays above the
    smallest of ``levels`` (relative to its maximum) on it. Otherwise (the first
    trajectory component changes sign inside) each level q gives the largest box
    on which a21 >= q max a21, and the box with the best area * q wins.
    """
    a = np.broadcast_to(np.asarray(a21), grid.shape)
    low = np.abs(a.imag) if complex_kind else a.real
    top = float(np.max(low))
    if not top > 0:
        raise CouplingDegeneracyError("the coupling coefficient vanishes on the whole grid")
    it, ix = np.nonzero(low > 0)

    def middle(idx, axis):
        lo, hi = axis[idx.min()], axis[idx.max()]
        pad = 0.5 * (1 - fraction) * (hi - lo)
        return lo + pad, hi - pad

    tw, xw = middle(it, grid.t), middle(ix, grid.x)
    inside = low[np.ix_(grid.time_mask(tw), grid.space_mask(xw))]
    if inside.size and np.min(inside) >= min(levels) * top:
        return tw, xw
    best, box = -1.0, None
    for q in sorted(levels, reverse=True):
        (a0, a1), (b0, b1) = largest_rectangle(low >= q * top)
        score = q * (a1 - a0 + 1) * (b1 - b0 + 1)
        if score > best:
            best, box = score, (a0, a1, b0, b1)
    a0, a1, b0, b1 = box
    return (float(grid.t[a0]), float(grid.t[a1])), (float(grid.x[b0]), float(grid.x[b1]))


def largest_rectangle(good: np.ndarray) -> tuple[tuple[int, int], tuple[int, int]]:
    """Inclusive row and column ranges of the largest all-True rectangle (stack histogram method)."""
    rows, cols = good.shape
    heights = np.zeros(cols, dtype=int)
    best, box = 0, ((0, 0), (0, 0))
    for i in range(rows):
        heights = np.where(good[i], heights + 1, 0)
        stack: list[int] = []
        for j in range(cols + 1):
            hj = heights[j] if j < cols else 0
            while stack and heights[stack[-1]] >= hj:
                top = stack.pop()
                left = stack[-1] + 1 if stack else 0
                area = heights[top] * (j - left)
                if area > best:
                    best, box = area, ((i - heights[top] + 1, i), (left, j - 1))
            stack.append(j)
    return box


# ---------------------------------------------------------------- the dual problem


@dataclass
class ControlResult:
    h: Field
    zeta: FieldPair
    terminal_norm: float
    weighted_norm: float
    sup_norm: float
    penalty_epsilon: float
    cg_iterations: int
    cg_residual: float
    phi_T: np.ndarray | None = field(default=None, repr=False)
    window: tuple | None = None
    omega0: tuple | None = None
    s: float | None = None
    target_norm: float = 0.0
    cg_history: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "terminal_norm": self.terminal_norm,
            "target_norm": self.target_norm,
            "weighted_norm": self.weighted_norm,
            "sup_norm": self.sup_norm,
            "penalty_epsilon": self.penalty_epsilon,
            "s": self.s,
            "window": list(self.window) if self.window else None,
            "omega0": list(self.omega0) if self.omega0 else None,
            "cg_iterations": self.cg_iterations,
            "cg_residual": self.cg_residual,
            "cg_history": list(self.cg_history),
        }


class DualOperator:
    """phi_T -> zeta(t2) for zero state at t1, through the control h = W phi_1 on the window."""

    def __init__(self, grid: SpaceTimeGrid, coeffs: CoefficientSet, weight: CarlemanWeight, omega0,
                 conjugate: bool = False, stepper: ThetaStepper | None = None):
        self.grid = grid
        self.coeffs = coeffs
        self.omega0 = tuple(omega0)
        self.conjugate = bool(conjugate)
        self.n1, self.n2 = window_indices(grid, weight.window)
        self.W = weight.values() * grid.space_mask(self.omega0)[None, :]
        complex_ = self.conjugate or coeffs.is_complex
        if coeffs.is_complex and not self.conjugate:
            raise ParameterError("complex coefficients need the conjugated adjoint")
        self.stepper = stepper or ThetaStepper(grid, coeffs, complex_)
        self.dtype = self.stepper.dtype
        self.size = 2 * grid.nx

    def split(self, phi):
        return phi[: self.grid.nx], phi[self.grid.nx :]

    def observe(self, phi) -> np.ndarray:
        """The first observed adjoint density on the grid (zero outside the window)."""
        adj = solve_adjoint(self.grid, self.coeffs, self.split(phi), conjugate=self.conjugate,
                            stepper=self.stepper, start=self.n1, stop=self.n2)
        return adj.observed.first.values

    def control(self, phi) -> np.ndarray:
        return self.W * self.observe(phi)

    def steer(self, h, initial=(None, None)) -> FieldPair:
        return solve_forward(self.grid, self.coeffs, initial, h, None, self.stepper, self.n1, self.n2)

    def apply(self, phi) -> np.ndarray:
        z = self.steer(self.control(phi))
        return np.concatenate([z.first.values[self.n2], z.second.values[self.n2]])

    def energy(self, phi) -> float:
        """<Lambda phi, phi> computed from the observation alone."""
        g = self.grid
        return float(g.dt * g.dx * np.sum(self.W * np.abs(self.observe(phi)) ** 2))

    def dense(self) -> np.ndarray:
        """Column-by-column assembly (one adjoint and one forward sweep per unit vector)."""
        cols = []
        for k in range(self.size):
            e = np.zeros(self.size, dtype=self.dtype)
            e[k] = 1.0
            cols.append(self.apply(e))
        return np.stack(cols, axis=1)


def dual_objective(op: DualOperator, phi, b, penalty: float) -> float:
    """1/2 <Lambda phi, phi> + penalty/2 |phi|^2 - Re <b, phi> in the discrete L2 pairing."""
    return 0.5 * op.energy(phi) + 0.5 * penalty * float(np.real(pairing(op.grid, phi, phi))) \
        - float(np.real(pairing(op.grid, b, phi)))


def dual_gradient(op: DualOperator, phi, b, penalty: float) -> np.ndarray:
    return op.apply(phi) + penalty * phi - b


def conjugate_gradient(apply, b, x0=None, tol: float = CG_TOL, maxiter: int = CG_MAXITER,
                       stagnation: int = 50):
    """Hermitian CG for apply(x) = b; returns (x, iterations, relative residual, history)."""
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=b.dtype)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0, 0.0, [0.0]
    r = b - apply(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = np.vdot(r, r).real
    hist = [float(np.sqrt(rr) / bnorm)]
    best, since = hist[0], 0
    k = 0
    while hist[-1] > tol and k < maxiter:
        Ap = apply(p)
        pAp = np.vdot(p, Ap).real
        if pAp <= 0:
            raise ConvergenceError("CG met a non-positive curvature direction", hist)
        a = rr / pAp
        x = x + a * p
        r = r - a * Ap
        rr_new = np.vdot(r, r).real
        p = r + (rr_new / rr) * p
        rr = rr_new
        k += 1
        hist.append(float(np.sqrt(rr) / bnorm))
        if hist[-1] < 0.5 * best:
            best, since = hist[-1], 0
        else:
            since += 1
            if since >= stagnation:
                raise ConvergenceError(f"CG stagnated at relative residual {hist[-1]:.3e} after {k} iterations",
                                       hist)
    if hist[-1] > tol:
        raise ConvergenceError(f"CG reached the iteration cap {maxiter} at relative residual {hist[-1]:.3e}",
                               hist)
    return x, k, hist[-1], hist


def _profile(grid, p, dtype):
    if p is None:
        return np.zeros(grid.nx, dtype=dtype)
    if callable(p):
        return np.asarray(p(grid.x), dtype=dtype)
    return np.broadcast_to(np.asarray(p, dtype=dtype), (grid.nx,)).copy()


def solve_penalized_control(grid: SpaceTimeGrid, coeffs: CoefficientSet, alpha, weight: CarlemanWeight,
                            penalty_epsilon: float, omega0, conjugate: bool = False, phi0=None,
                            tol: float = CG_TOL, maxiter: int = CG_MAXITER,
                            stepper: ThetaStepper | None = None) -> ControlResult:
    """Free evolution to t1, penalized control on (t1, t2), free evolution to T.

    The window is the one carried by ``weight``. ``phi0`` warm-starts CG.
    """
    if not penalty_epsilon > 0:
        raise ParameterError(f"penalty_epsilon must be positive, got {penalty_epsilon}")
    t1, t2 = weight.window
    if not 0 <= t1 < t2 <= grid.T:
        raise GeometryError(f"control window ({t1}, {t2}) is not inside (0, {grid.T})")
    op = DualOperator(grid, coeffs, weight, omega0, conjugate, stepper)
    a1, a2 = (_profile(grid, p, op.dtype) for p in alpha)
    free = solve_forward(grid, coeffs, (a1, a2), None, None, op.stepper, 0, op.n2)
    b = -np.concatenate([free.first.values[op.n2], free.second.values[op.n2]])
    target = float(np.sqrt(np.real(pairing(grid, b, b))))
    phi, its, res, hist = conjugate_gradient(lambda p: op.apply(p) + penalty_epsilon * p, b, phi0, tol, maxiter)
    h = op.control(phi)
    zeta = solve_forward(grid, coeffs, (a1, a2), h, op.omega0, op.stepper)
    weighted = np.sqrt(max(op.energy(phi), 0.0))
    return ControlResult(
        h=Field(grid, h),
        zeta=zeta,
        terminal_norm=zeta.final_l2(),
        weighted_norm=float(weighted),
        sup_norm=float(np.max(np.abs(h))),
        penalty_epsilon=float(penalty_epsilon),
        cg_iterations=its,
        cg_residual=res,
        phi_T=phi,
        window=(t1, t2),
        omega0=op.omega0,
        s=weight.s,
        target_norm=target,
        cg_history=hist,
    )


def penalty_sweep(grid, coeffs, alpha, weight, omega0, penalties, conjugate: bool = False) -> list[ControlResult]:
    """Controls along a penalty schedule, each solve warm-started from the previous dual datum."""
    stepper = None
    phi = None
    out = []
    for eps in penalties:
        res = solve_penalized_control(grid, coeffs, alpha, weight, eps, omega0, conjugate, phi0=phi,
                                      stepper=stepper)
        phi = res.phi_T
        stepper = stepper or ThetaStepper(grid, coeffs, conjugate or coeffs.is_complex)
        out.append(res)
    return out


def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# ---------------------------------------------------------------- observability


@dataclass
class ObservabilityReport:
    ratios: np.ndarray
    n_samples: int
    seed: int

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    @property
    def diverges(self) -> bool:
        return not np.isfinite(self.max_ratio)

    def summary(self) -> dict:
        finite = self.ratios[np.isfinite(self.ratios)]
        return {
            "n_samples": self.n_samples,
            "seed": self.seed,
            "max_ratio": self.max_ratio if not self.diverges else "inf",
            "median_ratio": float(np.median(finite)) if finite.size else None,
            "diverges": self.diverges,
        }


def observability_ratio(grid: SpaceTimeGrid, coeffs: CoefficientSet, final, omega0,
                        conjugate: bool = False, stepper: ThetaStepper | None = None) -> float:
    """|phi(0)|^2 over the observation of phi_1 on (0, T) x omega0."""
    p1, p2 = final
    if not (np.any(np.asarray(p1) != 0) or np.any(np.asarray(p2) != 0)):
        raise ParameterError("observability ratio of a zero final datum is 0/0")
    adj = solve_adjoint(grid, coeffs, final, conjugate=conjugate, stepper=stepper)
    num = adj.phi.first.l2_at(0) ** 2 + adj.phi.second.l2_at(0) ** 2
    obs = adj.phi.first.values * grid.space_mask(omega0)[None, :]
    den = grid.dt * grid.dx * np.sum(np.abs(obs) ** 2)
    if den == 0:
        return float("inf")
    return float(num / den)


def estimate_observability(grid: SpaceTimeGrid, coeffs: CoefficientSet, omega0, n_samples: int,
                           seed: int, conjugate: bool = False, generator: str = DEFAULT_GENERATOR,
                           ) -> ObservabilityReport:
    """Empirical ratios over seeded random unit final data.

    Every other sample has a zero first component: observing phi_1 can only
    see it through the coupling a21, so without coupling those ratios are +inf.
    """
    if n_samples < 1:
        raise ParameterError("n_samples must be at least 1")
    rng = make_rng(seed, generator)
    complex_ = conjugate or coeffs.is_complex
    stepper = ThetaStepper(grid, coeffs, complex_)
    ratios = np.empty(n_samples)
    for k in range(n_samples):
        p = rng.standard_normal((2, grid.nx))
        if complex_:
            p = p + 1j * rng.standard_normal((2, grid.nx))
        if k % 2:
            p[0] = 0  # odd samples probe the unobserved component alone

        p /= np.sqrt(grid.dx * np.sum(np.abs(p) ** 2))
        ratios[k] = observability_ratio(grid, coeffs, (p[0], p[1]), omega0, conjugate, stepper)
    return ObservabilityReport(ratios, n_samples, seed)


# ---------------------------------------------------------------- choice of s


def select_s(grid: SpaceTimeGrid, coeffs: CoefficientSet, window, omega0, omega1, kappa: float = 0.05,
             candidates=None, tiny=(12, 16), improvement: float = 0.9, conjugate: bool = False,
             reference_penalty: float = 1e-8) -> dict:
    """Smallest s in a geometric sweep after which the dual condition number stops improving.

    The operator is assembled densely on a coarse copy of the grid, refined just
    enough that omega0 holds three nodes and the window four time levels; the
    coefficients are resampled there at the nearest node. The bare Gramian is
    numerically singular (only a handful of modes survive the parabolic
    smoothing), so the number compared is that of the penalized system
    ``Lambda + reference_penalty * I`` that the solver actually inverts.
    """
    L = grid.x_hi - grid.x_lo
    nx = max(tiny[0], int(np.ceil(3 * L / (omega0[1] - omega0[0]))))
    nt = max(tiny[1], int(np.ceil(5 * grid.T / (window[1] - window[0]))))
    small = grid.with_resolution(min(nx, grid.nx), min(nt, grid.nt))
    ix = np.abs(grid.x[None, :] - small.x[:, None]).argmin(axis=1)
    it = np.abs(grid.t[None, :] - small.t[:, None]).argmin(axis=1)
    c_small = CoefficientSet(*(np.asarray(a)[np.ix_(it, ix)] for a in coeffs.arrays(grid)))
    if candidates is None:
        candidates = [2.0**k for k in range(-10, 5)]
    table = []
    for s in candidates:
        try:
            w = build_weights(small, s, omega1, kappa, window, omega0)
        except WeightConfigurationError:
            break
        lam = DualOperator(small, c_small, w, omega0, conjugate).dense()
        ev = np.linalg.eigvalsh(0.5 * (lam + lam.conj().T))
        ev = np.clip(ev, 0.0, None) + reference_penalty
        table.append({"s": s, "condition": float(ev[-1] / ev[0]),
                      "rank": int(np.sum(ev - reference_penalty > 1e-12 * ev[-1]))})
    chosen = None
    for a, b in zip(table[:-1], table[1:]):
        if b["condition"] > improvement * a["condition"]:
            chosen = a["s"]
            break
    if chosen is None:
        chosen = table[-1]["s"] if table else candidates[0]
    return {"s": chosen, "sweep": table, "coarse_grid": [small.nx, small.nt],
            "reference_penalty": reference_penalty,
            "heuristic": "first s whose successor improves the penalized coarse condition number by less than 10%"}
