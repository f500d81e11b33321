"""Local null control of the nonlinear system around the reference trajectory.

The system is  u_t - u_xx = g(u, v) + h 1_omega,  v_t - v_xx = u^p + R v  with
p = 3 (real, cubic kind) or p = 2 (complex kind). Writing (u, v) = (u_bar + z1,
v_bar + z2), the increments solve a linear system whose coefficients depend on z;
freezing them at the current iterate and taking the minimal weighted control of
the frozen system defines a map z -> zeta, iterated here to a fixed point.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coupling import Coupling
from .errors import ConvergenceError, CouplingDegeneracyError, DivergenceError, ParameterError
from .hum import CarlemanWeight, ControlResult, solve_penalized_control
from .pde import CoefficientSet, Field, FieldPair, SpaceTimeGrid, ThetaStepper, laplacian, zero_coefficients
from .rng import DEFAULT_GENERATOR, make_rng
from .trajectory import ReferenceTrajectory

log = logging.getLogger(__name__)

QUOTIENT_THRESHOLD = 1e-8
SMALLNESS = 1e-3


@dataclass
class NonlinearProblem:
    """Trajectory, coupling, reaction and initial data of one nonlinear control problem."""

    traj: ReferenceTrajectory
    u0: np.ndarray
    v0: np.ndarray
    coupling: Coupling | None = None
    reaction: float | None = None
    delta: float | None = None
    nu: float | None = None

    def __post_init__(self):
        g = self.traj.grid
        self.coupling = self.coupling or self.traj.coupling
        if self.reaction is None:
            self.reaction = self.traj.cfg.reaction
        cplx = self.traj.is_complex
        dtype = complex if cplx else float
        self.u0 = _profile(g, self.u0, dtype)
        self.v0 = _profile(g, self.v0, dtype)
        if not cplx and (np.iscomplexobj(self.u0) or np.iscomplexobj(self.v0)):
            raise ParameterError("complex initial data need the quadratic-complex trajectory")
        scale = self.scale
        if self.delta is None:
            self.delta = SMALLNESS * scale
        if self.nu is None:
            self.nu = 0.1 * scale
        size = float(np.max(np.abs(self.u0)) + np.max(np.abs(self.v0)))
        if not size < self.delta:
            raise ParameterError(f"initial data of sup size {size:.3g} exceed the smallness bound {self.delta:.3g}")

    @property
    def scale(self) -> float:
        """Bump scale: the sup of the first trajectory component."""
        return self.traj.u_bar.sup()

    @property
    def power(self) -> int:
        return self.traj.power

    @property
    def is_complex(self) -> bool:
        return self.traj.is_complex


def _profile(grid: SpaceTimeGrid, p, dtype) -> np.ndarray:
    if p is None:
        return np.zeros(grid.nx, dtype=dtype)
    if callable(p):
        p = p(grid.x)
    p = np.asarray(p)
    if p.shape == ():
        p = np.full(grid.nx, p)
    if p.shape != (grid.nx,):
        raise ParameterError(f"initial profile has shape {p.shape}, expected ({grid.nx},)")
    return p.astype(np.result_type(p, dtype))


def _quotient(num_hi, num_lo, dz, derivative, small):
    """(num_hi - num_lo)/dz with the derivative closure wherever |dz| is below the threshold."""
    safe = np.where(small, 1.0, dz)
    return np.where(small, derivative, (num_hi - num_lo) / safe)


def freeze_coefficients(problem: NonlinearProblem, z: FieldPair | None, window=None,
                        threshold: float = QUOTIENT_THRESHOLD) -> CoefficientSet:
    """a_ij of the increment system at the iterate z (z = None means z = 0).

    ``window`` = (t1, t2, x_a, x_b) is where the coupling lower bound is checked.
    """
    traj = problem.traj
    g, grid = problem.coupling, traj.grid
    ub, vb = traj.u_bar.values, traj.v_bar.values
    if z is None:
        z1 = np.zeros_like(ub)
        z2 = np.zeros_like(vb)
    else:
        z1, z2 = z.first.values, z.second.values
        if z1.shape != grid.shape:
            raise ParameterError("iterate is not defined on the trajectory grid")
    tau = threshold * max(problem.scale, traj.v_bar.sup(), 1e-300)
    v_new = vb + z2
    s1 = np.abs(z1) <= tau
    s2 = np.abs(z2) <= tau
    a11 = _quotient(g.g(ub + z1, v_new), g.g(ub, v_new), z1, g.dg_du(ub + 0.5 * z1, v_new), s1)
    a12 = _quotient(g.g(ub, v_new), g.g(ub, vb), z2, g.dg_dv(ub, vb + 0.5 * z2), s2)
    if problem.power == 3:
        a21 = 3 * ub**2 + 3 * ub * z1 + z1**2
    else:
        a21 = 2 * ub + z1
    a22 = problem.reaction
    coeffs = CoefficientSet(a11, a12, a21, a22)
    bound = coeffs.measured_bound(grid)
    if window is not None:
        t1, t2, xa, xb = window
        part = np.asarray(a21)[np.ix_(grid.time_mask((t1, t2)), grid.space_mask((xa, xb)))]
        low = np.abs(part.imag) if problem.is_complex else part.real
        floor = float(np.min(low)) if low.size else 0.0
        if not floor > 0:
            raise CouplingDegeneracyError(
                f"coupling coefficient reaches {floor:.3g} on the control window: no lower bound 1/M_bar")
        bound = max(bound, 1.0 / floor)
    coeffs.M_bar = bound
    coeffs.window = None if window is None else tuple(window)
    coeffs.check(grid, problem.is_complex)
    return coeffs


@dataclass
class PicardState:
    k: int
    z: FieldPair = field(repr=False)
    update_norm: float
    sup_norm: float
    control: ControlResult = field(repr=False)

    def as_dict(self) -> dict:
        c = self.control
        return {"k": self.k, "update_norm": self.update_norm, "sup_norm": self.sup_norm,
                "terminal_norm": c.terminal_norm, "weighted_norm": c.weighted_norm,
                "control_sup": c.sup_norm, "cg_iterations": c.cg_iterations}


@dataclass
class PicardResult:
    u: Field
    v: Field
    h: Field
    history: list[PicardState]
    converged: bool
    omega0: tuple
    window: tuple

    @property
    def terminal_norm(self) -> float:
        return float(np.hypot(self.u.l2_at(-1), self.v.l2_at(-1)))

    def summary(self, problem: NonlinearProblem) -> dict:
        g = self.u.grid
        data = float(np.sqrt(g.dx * (np.sum(np.abs(problem.u0) ** 2) + np.sum(np.abs(problem.v0) ** 2))))
        return {
            "converged": self.converged,
            "iterations": len(self.history),
            "terminal_norm": self.terminal_norm,
            "initial_norm": data,
            "terminal_ratio": self.terminal_norm / data if data > 0 else 0.0,
            "window": list(self.window),
            "omega0": list(self.omega0),
            "history": [s.as_dict() for s in self.history],
        }


def run_picard(problem: NonlinearProblem, weight: CarlemanWeight, omega0, penalty_epsilon: float = 1e-8,
               tol: float = 1e-10, max_iter: int = 15) -> PicardResult:
    """Fixed-point iteration z -> zeta(z) from z = 0.

    Stops once the sup-norm update falls below ``tol`` times the sup of the data
    (or is exactly zero). Three consecutive growing updates, or an iterate
    leaving the admissible ball of radius ``nu``, abort with a divergence error.
    """
    traj = problem.traj
    grid = traj.grid
    window = (*weight.window, *omega0)
    data_sup = float(max(np.max(np.abs(problem.u0)), np.max(np.abs(problem.v0))))
    z = None
    history: list[PicardState] = []
    growing = 0
    converged = False
    phi = None
    for k in range(1, max_iter + 1):
        coeffs = freeze_coefficients(problem, z, window)
        ctrl = solve_penalized_control(grid, coeffs, (problem.u0, problem.v0), weight, penalty_epsilon, omega0,
                                       conjugate=problem.is_complex, phi0=phi)
        phi = ctrl.phi_T
        new = ctrl.zeta
        if z is None:
            upd = new.sup()
        else:
            upd = float(max(np.max(np.abs(new.first.values - z.first.values)),
                            np.max(np.abs(new.second.values - z.second.values))))
        state = PicardState(k, new, upd, new.sup(), ctrl)
        history.append(state)
        log.info("picard %d: update %.3e sup %.3e terminal %.3e", k, upd, state.sup_norm, ctrl.terminal_norm)
        if state.sup_norm > problem.nu:
            raise DivergenceError(f"iterate left the admissible ball (sup {state.sup_norm:.3g} > nu "
                                  f"{problem.nu:.3g}); use smaller initial data", [s.as_dict() for s in history])
        if len(history) > 1 and upd > history[-2].update_norm:
            growing += 1
            if growing >= 3:
                raise DivergenceError("update norm grew for 3 consecutive iterations; use smaller initial data",
                                      [s.as_dict() for s in history])
        else:
            growing = 0
        z = new
        if upd <= tol * data_sup:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Picard iteration did not reach tol {tol:g} in {max_iter} iterations",
                               [s.as_dict() for s in history])
    ctrl = history[-1].control
    u = Field(grid, traj.u_bar.values + z.first.values)
    v = Field(grid, traj.v_bar.values + z.second.values)
    h = Field(grid, traj.h_bar.values + ctrl.h.values)
    return PicardResult(u, v, h, history, converged, tuple(omega0), tuple(weight.window))


def nonlinear_residual(grid: SpaceTimeGrid, coupling: Coupling, power: int, reaction: float, u, v, h,
                       omega) -> tuple[np.ndarray, np.ndarray]:
    """Residuals of the theta-scheme for the nonlinear system at every step (independent evaluator)."""
    u, v, h = (a.values if isinstance(a, Field) else np.asarray(a) for a in (u, v, h))
    th, dt, dx = grid.theta, grid.dt, grid.dx
    mask = grid.space_mask(omega)[None, :]
    f1 = laplacian(u, dx) + coupling.g(u, v) + mask * h
    f2 = laplacian(v, dx) + u**power + reaction * v
    r1 = (u[1:] - u[:-1]) / dt - th * f1[1:] - (1 - th) * f1[:-1]
    r2 = (v[1:] - v[:-1]) / dt - th * f2[1:] - (1 - th) * f2[:-1]
    return r1, r2


def residual_check(problem: NonlinearProblem, result: PicardResult) -> dict:
    """Residual of (u, v, h) against the residual the trajectory itself leaves in the scheme.

    The first equation holds exactly for the trajectory by the definition of
    h_bar; the second carries the truncation error of sampling the continuous v_bar.
    """
    traj, grid = problem.traj, problem.traj.grid
    args = (grid, problem.coupling, problem.power, problem.reaction)
    r1, r2 = nonlinear_residual(*args, result.u, result.v, result.h, traj.omega)
    b1, b2 = nonlinear_residual(*args, traj.u_bar, traj.v_bar, traj.h_bar, traj.omega)
    scale = max(result.u.sup(), result.v.sup(), 1e-300)
    return {
        "u_residual": float(np.max(np.abs(r1))),
        "v_residual": float(np.max(np.abs(r2))),
        "trajectory_u_residual": float(np.max(np.abs(b1))),
        "trajectory_v_residual": float(np.max(np.abs(b2))),
        "excess_u": float(np.max(np.abs(r1 - b1))),
        "excess_v": float(np.max(np.abs(r2 - b2))),
        "scale": scale,
    }


# ---------------------------------------------------------------- obstruction


def solve_nonlinear(grid: SpaceTimeGrid, coupling: Coupling, power: int, reaction: float, u0, v0, h=None,
                    omega=None, tol: float = 1e-13, max_sweeps: int = 60) -> FieldPair:
    """Fully implicit theta-scheme for the nonlinear system, fixed-point iteration inside each step."""
    y1 = np.asarray(u0, float).copy()
    y2 = np.asarray(v0, float).copy()
    st1 = ThetaStepper(grid, zero_coefficients())
    st2 = ThetaStepper(grid, CoefficientSet(0.0, 0.0, 0.0, reaction))
    hv = np.zeros(grid.shape) if h is None else (h.values if isinstance(h, Field) else np.asarray(h))
    mask = np.ones(grid.nx) if omega is None else grid.space_mask(omega).astype(float)
    th, dt, dx = grid.theta, grid.dt, grid.dx
    out1, out2 = np.zeros(grid.shape), np.zeros(grid.shape)
    out1[0], out2[0] = y1, y2
    zero = np.zeros(grid.nx)
    for n in range(grid.nt):
        g_old, p_old = coupling.g(y1, y2), y1**power
        base1 = y1 + (1 - th) * dt * (laplacian(y1, dx) + g_old) + dt * mask * (th * hv[n + 1] + (1 - th) * hv[n])
        base2 = y2 + (1 - th) * dt * (laplacian(y2, dx) + p_old + reaction * y2)
        n1, n2 = y1.copy(), y2.copy()
        for sweep in range(max_sweeps):
            rhs1 = base1 + th * dt * coupling.g(n1, n2)
            rhs2 = base2 + th * dt * n1**power
            m1 = st1.solve(n + 1, _pair(rhs1, zero))[0::2]
            m2 = st2.solve(n + 1, _pair(zero, rhs2))[1::2]
            change = max(np.max(np.abs(m1 - n1)), np.max(np.abs(m2 - n2)))
            n1, n2 = m1, m2
            if change <= tol * max(1.0, np.max(np.abs(n1)), np.max(np.abs(n2))):
                break
        else:
            raise ConvergenceError(f"implicit step {n} did not converge in {max_sweeps} sweeps")
        y1, y2 = n1, n2
        out1[n + 1], out2[n + 1] = y1, y2
    return FieldPair(Field(grid, out1), Field(grid, out2))


def _pair(a, b):
    out = np.empty(2 * a.size)
    out[0::2], out[1::2] = a, b
    return out


@dataclass
class ObstructionReport:
    min_gap: float
    min_v_final: float
    n_controls: int
    seed: int
    gaps: list

    def summary(self) -> dict:
        return {"min_gap": self.min_gap, "min_v_final": self.min_v_final, "n_controls": self.n_controls,
                "seed": self.seed, "per_control_min_gap": self.gaps}


def demo_obstruction(grid: SpaceTimeGrid, coupling: Coupling, reaction: float, u0, v0, n_random_controls: int,
                     seed: int, omega=None, amplitude: float = 1.0, generator: str = DEFAULT_GENERATOR,
                     workers: int = 1) -> ObstructionReport:
    """v(T) - v*(T) over random controls for the system with a u^2 source in the v-equation.

    v* solves the free equation v*_t - v*_xx = R v* from v0. By comparison the
    gap is nonnegative whatever the control, so v(T) cannot reach 0.
    """
    if grid.theta != 1.0:
        raise ParameterError("the obstruction demo needs theta = 1 (the order-preserving scheme)")
    u0 = _profile(grid, u0, float)
    v0 = _profile(grid, v0, float)
    if np.iscomplexobj(u0) or np.iscomplexobj(v0):
        raise ParameterError("the obstruction demo is real-valued")
    if np.any(v0 < 0) or not np.any(v0 > 0):
        raise ParameterError("v0 must be nonnegative and not identically zero")
    omega = (grid.x_lo, grid.x_hi) if omega is None else tuple(omega)
    st = ThetaStepper(grid, CoefficientSet(0.0, 0.0, 0.0, reaction))
    vstar = np.zeros(grid.shape)
    vstar[0] = v0
    for n in range(grid.nt):
        y = vstar[n] + (1 - grid.theta) * grid.dt * (laplacian(vstar[n], grid.dx) + reaction * vstar[n])
        vstar[n + 1] = st.solve(n + 1, _pair(np.zeros(grid.nx), y))[1::2]
    # all controls are drawn up front so the result does not depend on the worker count
    rng = make_rng(seed, generator)
    controls = [amplitude * rng.standard_normal(grid.shape) for _ in range(n_random_controls)]

    def final_v(h):
        return solve_nonlinear(grid, coupling, 2, reaction, u0, v0, h, omega).second.values[-1]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            finals = list(pool.map(final_v, controls))
    else:
        finals = [final_v(h) for h in controls]
    gaps = [float(np.min(vT - vstar[-1])) for vT in finals]
    min_v = min(float(np.min(vT)) for vT in finals)
    return ObstructionReport(float(min(gaps)), float(min_v), n_random_controls, seed, gaps)
