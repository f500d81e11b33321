"""Assembly and verification of the reference trajectory (u_bar, v_bar, h_bar).

In the reference frame (tau, r) with tau in (-1, 1) the second component is the
radial function V = sum_i f_i(tau) g_i(r / lambda(tau)). The first component K is
the real cube root (cubic kind) or the branch-corrected square root (complex
kind) of V_tau - Delta V, which factors as -lambda^-2 f0 A(tau, z). The frame is
then rescaled by rho, shifted to (T/2, x0) and multiplied by the exponentials
that absorb the reaction term R V.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import jets
from .coupling import Coupling, product
from .errors import ConstructionError, GeometryError, ParameterError
from .pde import Field, SpaceTimeGrid, laplacian
from .profiles import (
    CUBIC,
    QUADRATIC_COMPLEX,
    SampledProfile,
    band_power,
    build_bump_profiles,
    build_time_profiles,
    check_delta,
    check_kind,
    construct_source_profile,
    f0_value,
    solve_radial_ode,
)

log = logging.getLogger(__name__)

EPS_MAX = 0.5
MIN_NODES_ACROSS = 8
REMAINDER_T_N = 161
REMAINDER_Z_N = 801


@dataclass(frozen=True)
class BumpConfig:
    """Scalar parameters of the construction; ``None`` entries are filled by :meth:`resolved`."""

    bump_epsilon: float | None = None
    delta: float = 0.05
    dim: int = 1
    reaction: float = 0.0
    rho_radius: float | None = None
    center_t: float | None = None
    center_x: float | None = None
    z_grid_n: int = 2049
    t_grid_n: int = 2049
    kind: str = CUBIC
    enforce_remainder: bool = True

    def validate(self) -> None:
        check_delta(self.delta)
        check_kind(self.kind)
        if int(self.dim) != self.dim or self.dim < 1:
            raise ParameterError(f"dim must be a positive integer, got {self.dim}")
        if self.bump_epsilon is not None and not self.bump_epsilon > 0:
            raise ParameterError(f"bump_epsilon must be positive, got {self.bump_epsilon}")
        if self.rho_radius is not None and not self.rho_radius > 0:
            raise ParameterError(f"rho_radius must be positive, got {self.rho_radius}")

    def resolved(self, T: float, omega: tuple[float, float]) -> "BumpConfig":
        """Fill the centre and radius from the horizon and the control set."""
        self.validate()
        ct = T / 2 if self.center_t is None else self.center_t
        cx = 0.5 * (omega[0] + omega[1]) if self.center_x is None else self.center_x
        rho = self.rho_radius
        if rho is None:
            rho = 0.4 * min(T, cx - omega[0], omega[1] - cx)
        return replace(self, center_t=ct, center_x=cx, rho_radius=rho)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class ReferenceProfiles:
    """All one-variable profiles plus evaluators of V, A and K in the reference frame."""

    def __init__(self, cfg: BumpConfig, G: SampledProfile | None = None, g0: SampledProfile | None = None):
        cfg.validate()
        if cfg.bump_epsilon is None:
            raise ParameterError("bump_epsilon must be set; use build_reference for the automatic choice")
        self.cfg = cfg
        self.kind = cfg.kind
        self.dim = int(cfg.dim)
        self.power = band_power(cfg.kind)
        self.G = G or construct_source_profile(self.dim, cfg.delta, cfg.kind, cfg.z_grid_n)
        self.g0 = g0 or solve_radial_ode(self.G, self.dim)
        self.bumps = build_bump_profiles(cfg.delta, cfg.kind, cfg.z_grid_n)
        self.time_profiles, self.tp = build_time_profiles(cfg, self.g0, cfg.t_grid_n)
        self.dtype = complex if cfg.kind == QUADRATIC_COMPLEX else float

    @property
    def epsilon(self) -> float:
        return self.cfg.bump_epsilon

    @property
    def count(self) -> int:
        return 1 + len(self.bumps)

    def g_jets(self, z, order: int) -> list[np.ndarray]:
        out = [self.g0.derivatives(z, order)]
        out += [b.derivatives(z, order) for b in self.bumps]
        return out

    def _radial_laplacians(self, z, gj, order: int) -> list[np.ndarray]:
        """g_i'' + (N-1)/z g_i' as jets of the given order; the i = 0 entry is G itself."""
        out = [self.G.derivatives(z, order)]
        if self.dim == 1:
            return out + [g[2 : order + 3] for g in gj[1:]]
        safe = np.where(z > 0, z, 1.0)
        inv = jets.div(jets.constant(safe, float(self.dim - 1), order), jets.variable(safe, order))
        for g in gj[1:]:
            out.append(g[2 : order + 3] + jets.mul(inv, g[1 : order + 2]))
        return out

    def A(self, t, z, order: int = 0) -> np.ndarray:
        """Jet in z of A = (lambda^2 (Delta v - v_t)) / f0 at the points (t, z)."""
        t, z = np.broadcast_arrays(np.asarray(t, float), np.asarray(z, float))
        tp = self.tp
        # the z-jets do not depend on t: evaluate them once per distinct z
        zu, inv = np.unique(z, return_inverse=True)
        inv = inv.reshape(z.shape)
        gu = self.g_jets(zu, order + 2)
        gj = [g[:, inv] for g in gu]
        lap = [g[:, inv] for g in self._radial_laplacians(zu, gu, order)]
        ll = tp.lam(t) * tp.lam_dot(t)
        l2 = tp.lam(t) ** 2
        zj = jets.variable(z, order)
        out = np.zeros((order + 1,) + z.shape, dtype=self.dtype)
        for i in range(self.count):
            F, Fd = tp.ratio(i, t), tp.ratio_dot(i, t)
            out += F * lap[i] + ll * F * jets.mul(zj, gj[i][1 : order + 2]) - l2 * Fd * gj[i][: order + 1]
        return out

    def v_parts(self, t, r):
        """(V, V_tau, Delta V) in the reference frame, exact up to rounding."""
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        tp = self.tp
        lam = tp.lam(t)
        inside = lam > 0
        z = np.where(inside, r / np.where(inside, lam, 1.0), 2.0)
        live = inside & (z < 1.0)
        V = np.zeros(t.shape, dtype=self.dtype)
        Vt, LV = V.copy(), V.copy()
        if np.any(live):
            tl, zl, laml = t[live], z[live], lam[live]
            gj = self.g_jets(zl, 2)
            lap = self._radial_laplacians(zl, gj, 0)
            ratio_lam = tp.lam_dot(tl) / laml
            f0 = f0_value(tl)
            for i in range(self.count):
                F, Fd = tp.ratio(i, tl) * f0, tp.ratio_dot(i, tl) * f0
                V[live] += F * gj[i][0]
                Vt[live] += Fd * gj[i][0] - ratio_lam * F * zl * gj[i][1]
                LV[live] += F * lap[i][0] / laml**2
        return V, Vt, LV

    def V(self, t, r) -> np.ndarray:
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        tp = self.tp
        lam = tp.lam(t)
        inside = lam > 0
        z = np.where(inside, r / np.where(inside, lam, 1.0), 2.0)
        live = inside & (z < 1.0)
        out = np.zeros(t.shape, dtype=self.dtype)
        if np.any(live):
            tl, zl = t[live], z[live]
            f0 = f0_value(tl)
            acc = np.zeros(tl.shape, dtype=self.dtype)
            for i, g in enumerate(self.g_jets(zl, 0)):
                acc += tp.ratio(i, tl) * g[0]
            out[live] = f0 * acc
        return out

    def K(self, t, r) -> np.ndarray:
        """First component in the reference frame: K^p = V_tau - Delta V."""
        t, r = np.broadcast_arrays(np.asarray(t, float), np.asarray(r, float))
        lam = self.tp.lam(t)
        inside = lam > 0
        z = np.where(inside, r / np.where(inside, lam, 1.0), 2.0)
        live = inside & (z < 1.0)
        out = np.zeros(t.shape, dtype=self.dtype)
        if np.any(live):
            tl, zl = t[live], z[live]
            w = f0_value(tl) / lam[live] ** 2 * self.A(tl, zl)[0]  # lambda^-2 * calV
            if self.kind == CUBIC:
                out[live] = -np.cbrt(w.real)
            else:
                out[live] = 1j * np.sign(zl - 0.5) * analytic_sqrt(w)
        return out

    def z_basis(self, z, order: int) -> np.ndarray:
        """The z-factors of A: rows (L_i, z g_i', g_i) for every i, as jets; shape (3m, order+1, nz)."""
        z = np.asarray(z, dtype=float)
        gj = self.g_jets(z, order + 2)
        lap = self._radial_laplacians(z, gj, order)
        zj = jets.variable(z, order)
        rows = []
        for i in range(self.count):
            rows += [lap[i], jets.mul(zj, gj[i][1 : order + 2]), gj[i][: order + 1]]
        return np.stack(rows)

    def t_coefficients(self, t) -> np.ndarray:
        """The t-factors of A matching :meth:`z_basis`; shape (nt, 3m)."""
        t = np.asarray(t, dtype=float)
        tp = self.tp
        ll = tp.lam(t) * tp.lam_dot(t)
        l2 = tp.lam(t) ** 2
        cols = []
        for i in range(self.count):
            F, Fd = tp.ratio(i, t), tp.ratio_dot(i, t)
            cols += [F, ll * F, -l2 * Fd]
        return np.stack(cols, axis=-1)

    def A_grid(self, t, z, order: int = 0, basis: np.ndarray | None = None) -> np.ndarray:
        """A and its z-derivatives on the tensor grid t x z; shape (order+1, nt, nz)."""
        B = self.z_basis(z, order) if basis is None else basis
        return np.einsum("tk,kjz->jtz", self.t_coefficients(t), B)

    def remainder_report(self, cache: dict | None = None) -> dict:
        """Band domination, off-band nonvanishing and the zero conditions at z = 1/2.

        Evaluated at every node of the profile grids (t in (-1, 1), z in [0, 1)).
        ``cache`` may carry the epsilon-independent z-factors between calls.
        """
        cache = {} if cache is None else cache
        d, p = self.cfg.delta, self.power
        t = np.linspace(-1.0, 1.0, self.cfg.t_grid_n)[1:-1]
        z = np.linspace(0.0, 1.0, self.cfg.z_grid_n)[:-1]
        if "band" not in cache:
            zb = z[np.abs(z - 0.5) < d]
            zo = z[np.abs(z - 0.5) >= d / 2]
            cache["zb"], cache["zo"] = zb, zo
            cache["band"] = self.z_basis(zb, p)
            cache["off"] = self._offband_basis(zo)
            cache["half"] = self.z_basis(np.array([0.5]), 2)
            cache["G_off"] = self._scaled_G(zo)
        zb, zo = cache["zb"], cache["zo"]
        coeff = self.t_coefficients(t)
        # band: calV_zzz >= f0 (cubic) or Re calV_zz >= f0 (complex), i.e. the A-jet against 1
        Ab = np.einsum("tk,kz->tz", coeff, cache["band"][:, p])
        band_min = float(np.min(Ab.real))
        # off band: |A| > |G|/2 on [0, 1/2 - d/2] U [1/2 + d/2, 1), scaled by exp(-1/(1-z^2)) near 1
        Ao = np.einsum("tk,kz->tz", coeff, cache["off"])
        ratio = np.abs(Ao) / (0.5 * np.abs(cache["G_off"]))
        off_min = float(np.min(ratio))
        # zero conditions at z = 1/2, relative to max |calV| = max |f0 A|
        Az = np.einsum("tk,kj->jt", coeff, cache["half"][:, :, 0]) * f0_value(t)
        unscaled = Ao * np.where(zo > 1 - d, 0.0, 1.0)
        vmax = float(np.max(np.abs(unscaled * f0_value(t)[:, None])))
        zeros = [float(np.max(np.abs(Az[k]))) / vmax for k in range(p)]
        report = {
            "bump_epsilon": self.epsilon,
            "band_min": band_min,
            "band_ok": band_min >= 1.0,
            "offband_min_ratio": off_min,
            "offband_ok": off_min > 1.0,
            "zero_conditions": zeros,
            "zero_ok": all(zr <= 1e-10 for zr in zeros),
        }
        ok = report["band_ok"] and report["offband_ok"]
        if self.kind == QUADRATIC_COMPLEX:
            # the square-root branch must avoid the cut i R+: A/(z-1/2)^2 in the band, A elsewhere
            A0 = np.einsum("tk,kz->tz", coeff, cache["band"][:, 0])
            A2 = np.einsum("tk,kz->tz", coeff, cache["band"][:, 2])
            s = zb - 0.5
            q = np.where(np.abs(s) > 1e-3, A0 / np.where(s == 0, 1.0, s) ** 2, A2 / 2)
            vals = np.concatenate([q.ravel(), Ao.ravel()])
            on_cut = (np.abs(vals.real) <= 1e-12 * np.abs(vals)) & (vals.imag > 0)
            report["branch_ok"] = not bool(np.any(on_cut))
            ok = ok and report["branch_ok"]
        report["ok"] = bool(ok)
        return report

    def _outer(self, z):
        return z > 1.0 - self.cfg.delta

    def _offband_basis(self, z) -> np.ndarray:
        """z-factors of A at order 0, divided by exp(-1/(1-z^2)) on the outer piece."""
        B = self.z_basis(z, 0)[:, 0]
        o = self._outer(z)
        if np.any(o):
            zo = z[o]
            q = 1.0 - zo**2
            phi1 = -2.0 * zo / q**2
            B[:, o] = 0.0
            B[0, o] = self._scaled_G(zo)  # L_0 = G
            B[1, o] = zo * phi1  # z g0'
            B[2, o] = 1.0  # g0
        return B

    def _scaled_G(self, z) -> np.ndarray:
        from .profiles import _outer_sign_proxy

        out = np.asarray(self.G(z), dtype=complex if self.kind == QUADRATIC_COMPLEX else float).copy()
        o = self._outer(z)
        out[o] = _outer_sign_proxy(self.dim, z[o])
        return out


def analytic_sqrt(w: np.ndarray) -> np.ndarray:
    """Square root analytic off the closed half-line i R+ (cut along the positive imaginary axis)."""
    return np.exp(-0.25j * np.pi) * np.sqrt(1j * np.asarray(w, dtype=complex))


def choose_epsilon(cfg: BumpConfig, iterations: int = 24, floor: float = 1e-9) -> tuple[float, dict]:
    """Largest epsilon <= 0.5 (bisection in log epsilon) passing the remainder checks."""
    G = construct_source_profile(cfg.dim, cfg.delta, cfg.kind, cfg.z_grid_n)
    g0 = solve_radial_ode(G, cfg.dim)
    cache: dict = {}

    def report(eps):
        return ReferenceProfiles(replace(cfg, bump_epsilon=eps), G, g0).remainder_report(cache)

    top = report(EPS_MAX)
    if top["ok"]:
        return EPS_MAX, top
    best = report(floor)
    if not best["ok"]:
        raise ConstructionError(f"no bump_epsilon in [{floor:g}, {EPS_MAX}] passes the remainder check")
    lo, hi = np.log(floor), np.log(EPS_MAX)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        r = report(float(np.exp(mid)))
        if r["ok"]:
            lo, best = mid, r
        else:
            hi = mid
    return float(np.exp(lo)), best


def build_reference(cfg: BumpConfig) -> ReferenceProfiles:
    """Profiles for ``cfg``; picks epsilon automatically when unset and checks the remainder bound."""
    cfg.validate()
    if cfg.bump_epsilon is None:
        eps, rep = choose_epsilon(cfg)
        log.info("bump_epsilon chosen by bisection: %.6g", eps)
        ref = ReferenceProfiles(replace(cfg, bump_epsilon=eps))
        ref.report = rep
        return ref
    ref = ReferenceProfiles(cfg)
    rep = ref.remainder_report()
    if not rep["ok"] and not cfg.enforce_remainder:
        log.warning("remainder check fails at bump_epsilon=%g; continuing because enforce_remainder is off",
                    cfg.bump_epsilon)
    elif not rep["ok"]:
        failed = [k for k in ("band_ok", "offband_ok", "branch_ok") if rep.get(k) is False]
        raise ConstructionError(
            f"remainder check failed ({', '.join(failed)}; band min {rep['band_min']:.3g}, "
            f"off-band ratio {rep['offband_min_ratio']:.3g}) at bump_epsilon={cfg.bump_epsilon}: "
            "use a smaller bump_epsilon"
        )
    ref.report = rep
    return ref


@dataclass(frozen=True)
class SupportBox:
    t_lo: float
    t_hi: float
    x_lo: float
    x_hi: float

    def contains(self, t, x) -> np.ndarray:
        return (t >= self.t_lo) & (t <= self.t_hi) & (x >= self.x_lo) & (x <= self.x_hi)

    def as_dict(self) -> dict:
        return {"t": [self.t_lo, self.t_hi], "x": [self.x_lo, self.x_hi]}



@dataclass
class ReferenceTrajectory:
    grid: SpaceTimeGrid
    u_bar: Field
    v_bar: Field
    h_bar: Field
    support: SupportBox
    kind: str
    cfg: BumpConfig
    ref: ReferenceProfiles = field(repr=False)
    coupling: Coupling = field(repr=False)
    omega: tuple = (0.0, 1.0)
    ring_max: float = 0.0  # largest |u_bar| zeroed on the edge ring of the support box

    @property
    def is_complex(self) -> bool:
        return self.kind == QUADRATIC_COMPLEX

    @property
    def power(self) -> int:
        return band_power(self.kind)

    def sample(self, t, x):
        """(u_bar, v_bar) at arbitrary points, evaluated from the profiles."""
        return physical_fields(self.ref, self.cfg, t, x)

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(self.u_bar.values)))


def physical_fields(ref: ReferenceProfiles, cfg: BumpConfig, t, x):
    """(u_bar, v_bar) at physical points after the R-, rho- and shift transforms."""
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    rho, p = cfg.rho_radius, band_power(cfg.kind)
    tau = (t - cfg.center_t) / rho**2
    r = np.abs(x - cfg.center_x) / rho
    growth = np.exp(cfg.reaction * t)
    u = growth ** (1.0 / p) * rho ** (-2.0 / p) * ref.K(tau, r)
    v = growth * ref.V(tau, r)
    return u, v


def physical_v(ref: ReferenceProfiles, cfg: BumpConfig, t, x) -> np.ndarray:
    """v_bar alone (the stencil oracle needs no first component)."""
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    rho = cfg.rho_radius
    return np.exp(cfg.reaction * t) * ref.V((t - cfg.center_t) / rho**2, np.abs(x - cfg.center_x) / rho)


def physical_defect(ref: ReferenceProfiles, cfg: BumpConfig, t, x) -> np.ndarray:
    """v_t - Delta v - u^p - R v at physical points from the exact derivatives."""
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    rho, p = cfg.rho_radius, band_power(cfg.kind)
    tau = (t - cfg.center_t) / rho**2
    r = np.abs(x - cfg.center_x) / rho
    _, Vt, LV = ref.v_parts(tau, r)
    return np.exp(cfg.reaction * t) * rho**-2 * (Vt - LV - ref.K(tau, r) ** p)


def support_box(cfg: BumpConfig) -> SupportBox:
    """V vanishes unless |tau| < 1 and r < lambda(tau) <= epsilon."""
    rho, eps = cfg.rho_radius, cfg.bump_epsilon
    return SupportBox(cfg.center_t - rho**2, cfg.center_t + rho**2,
                      cfg.center_x - rho * eps, cfg.center_x + rho * eps)


def boundary_ring(inside: np.ndarray) -> np.ndarray:
    """Nodes of ``inside`` whose backward-Euler stencil image leaves it.

    A node (n, j) stays when (n+1, j), (n, j-1) and (n, j+1) are inside too;
    zeroing the rest keeps every residual stencil centred outside on zeros.
    """
    keep = inside.copy()
    keep[:-1] &= inside[1:]
    keep[-1] = False
    keep[:, 1:] &= inside[:, :-1]
    keep[:, :-1] &= inside[:, 1:]
    keep[:, 0] = keep[:, -1] = False
    return inside & ~keep


def discrete_source(grid: SpaceTimeGrid, u: np.ndarray, v: np.ndarray, coupling: Coupling) -> np.ndarray:
    """The h making the theta-scheme for u_t - u_xx = g(u, v) + h hold exactly at every step.

    With theta = 1 this is the backward-difference residual; for theta = 1/2 the
    step equations are solved for h^{n+1} with h^0 = 0.
    """
    th, dt = grid.theta, grid.dt
    op = laplacian(u, grid.dx) + coupling.g(u, v)
    h = np.zeros_like(u)
    rate = (u[1:] - u[:-1]) / dt
    for n in range(grid.nt):
        res = rate[n] - th * op[n + 1] - (1 - th) * op[n]
        h[n + 1] = (res - (1 - th) * h[n]) / th
    return h


def auto_geometry(cfg: BumpConfig, nx: int = 200, nt: int = 400, theta: float = 1.0,
                  length: float = 2.0, fill: float = 0.8) -> tuple[BumpConfig, SpaceTimeGrid]:
    """A grid on (0, length) x (0, T) sized to the support of the trajectory.

    The support is |t - T/2| <= rho^2, |x - x0| <= rho*epsilon, so with a small
    epsilon the grid only resolves it when rho*epsilon is of order one and T of
    order rho^2. ``fill`` is the fraction of the interval covered by the support.
    """
    eps = cfg.bump_epsilon
    if eps is None:
        raise ParameterError("auto geometry needs bump_epsilon")
    if not 0 < fill < 1:
        raise ParameterError(f"fill must lie in (0, 1), got {fill}")
    rho = 0.5 * fill * length / eps
    T = 2.5 * rho**2
    grid = SpaceTimeGrid(0.0, length, nx, T, nt, theta)
    return replace(cfg, rho_radius=rho, center_t=T / 2, center_x=0.5 * length), grid


def assemble_trajectory(cfg: BumpConfig, grid: SpaceTimeGrid, omega=None, coupling: Coupling | None = None,
                        ref: ReferenceProfiles | None = None) -> ReferenceTrajectory:
    """Sample (u_bar, v_bar) on the grid and define h_bar as the discrete residual of the u-equation.

    The stencil of that residual reaches one node past wherever u_bar is
    nonzero, so u_bar is set to 0 on the outermost ring of nodes of the support
    box (the last time level, and nodes next to the spatial edges). All three
    fields then vanish exactly outside the box; the size of what was cut is
    kept as ``ring_max``.
    """
    omega = (grid.x_lo, grid.x_hi) if omega is None else tuple(omega)
    if not grid.x_lo <= omega[0] < omega[1] <= grid.x_hi:
        raise GeometryError(f"control set {omega} is not inside ({grid.x_lo}, {grid.x_hi})")
    cfg = cfg.resolved(grid.T, omega)
    if ref is None:
        ref = build_reference(cfg)
    cfg = replace(cfg, bump_epsilon=ref.epsilon)
    if cfg.dim != 1:
        log.warning("dim=%d: the 1-D grid samples a radial section; the PDE identity is the radial one", cfg.dim)
    box = support_box(cfg)
    if not (0 < box.t_lo and box.t_hi < grid.T and omega[0] < box.x_lo and box.x_hi < omega[1]):
        raise GeometryError(f"support box {box.as_dict()} is not inside (0, {grid.T}) x {omega}")
    nodes_x = int(np.count_nonzero((grid.x > box.x_lo) & (grid.x < box.x_hi)))
    nodes_t = int(np.count_nonzero((grid.t > box.t_lo) & (grid.t < box.t_hi)))
    if min(nodes_x, nodes_t) < MIN_NODES_ACROSS:
        raise GeometryError(f"support box is resolved by {nodes_x} x {nodes_t} nodes (x, t); "
                            f"need at least {MIN_NODES_ACROSS} in each direction")
    coupling = coupling or product()
    T, X = np.meshgrid(grid.t, grid.x, indexing="ij")
    u, v = physical_fields(ref, cfg, T, X)
    ring = boundary_ring(box.contains(T, X))
    ring_max = float(np.max(np.abs(u[ring]))) if np.any(ring) else 0.0
    u[ring] = 0
    h = discrete_source(grid, u, v, coupling)
    if grid.theta != 1.0:
        log.warning("theta=%g: h_bar carries an alternating tail after the support ends; "
                    "use theta=1 for an exactly supported h_bar", grid.theta)
    return ReferenceTrajectory(grid, Field(grid, u), Field(grid, v), Field(grid, h), box, cfg.kind, cfg,
                               ref, coupling, omega, ring_max)


# ---------------------------------------------------------------- verification

_FD1 = {
    4: np.array([1, -8, 0, 8, -1]) / 12.0,
    6: np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0,
    8: np.array([3, -32, 168, -672, 0, 672, -168, 32, -3]) / 840.0,
}
_FD2 = {
    4: np.array([-1, 16, -30, 16, -1]) / 12.0,
    6: np.array([2, -27, 270, -490, 270, -27, 2]) / 180.0,
    8: np.array([-9, 128, -1008, 8064, -14350, 8064, -1008, 128, -9]) / 5040.0,
}


def _local_steps(cfg: BumpConfig, t, frac: float):
    """Steps ``frac`` times the local scales: rho*lambda(tau) in x and rho^2 (1-tau^2)^2 in t."""
    rho = cfg.rho_radius
    tau = (t - cfg.center_t) / rho**2
    shrink = np.clip(1.0 - tau**2, 1e-3, 1.0) ** 2
    return frac * rho**2 * shrink, frac * rho * cfg.bump_epsilon * shrink


def _central(fn, t, x, ht, hx, order: int):
    """(d/dt, d/dx, d2/dx2) of ``fn`` at (t, x) by central differences of the given order."""
    if order not in _FD1:
        raise ParameterError(f"stencil order must be one of {sorted(_FD1)}")
    half = order // 2
    k = range(-half, half + 1)
    centre = fn(t, x)
    xs = {kk: fn(t, x + kk * hx) if kk else centre for kk in k}
    ts = {kk: fn(t + kk * ht, x) if kk else centre for kk in k}
    dt_ = sum(c * ts[kk] for c, kk in zip(_FD1[order], k)) / ht
    dx_ = sum(c * xs[kk] for c, kk in zip(_FD1[order], k)) / hx
    dxx = sum(c * xs[kk] for c, kk in zip(_FD2[order], k)) / hx**2
    return dt_, dx_, dxx


def _radial_laplacian(cfg: BumpConfig, x, dx_, dxx):
    n = cfg.dim
    if n == 1:
        return dxx
    s = x - cfg.center_x
    safe = np.where(s != 0, s, 1.0)
    return np.where(s != 0, dxx + (n - 1) * dx_ / safe, n * dxx)


def fd_defect(ref: ReferenceProfiles, cfg: BumpConfig, t, x, frac: float, order: int = 6,
              centre=None) -> np.ndarray:
    """v_t - Delta v - u^p - R v from central differences of sampled v (the oracle).

    Steps are local: ``frac`` times the current spatial radius rho*lambda(tau) in x
    and ``frac`` times rho^2 (1-tau^2)^2 in t, the scales on which v varies.
    ``centre`` may carry (u, v) at the points when the caller already has them.
    """
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    ht, hx = _local_steps(cfg, t, frac)

    def v_of(tt, xx):
        return physical_v(ref, cfg, tt, xx)

    u, v = physical_fields(ref, cfg, t, x) if centre is None else centre
    vt, vx, vxx = _central(v_of, t, x, ht, hx, order)
    return vt - _radial_laplacian(cfg, x, vx, vxx) - u ** band_power(cfg.kind) - cfg.reaction * v


def verify_trajectory(traj: ReferenceTrajectory, levels: int = 3, base_frac: float = 1.0 / 1024,
                      order: int = 6) -> dict:
    """Residual report of the defining PDEs at the grid nodes.

    The v-defect is computed twice: from the exact derivatives of the profiles
    and by an independent finite-difference oracle on successively halved steps
    (the convergence table). Both use the stored u_bar in the source term, so
    the edge-ring truncation is part of the measured defect. The u-defect uses
    the discrete operators that define h_bar and vanishes to rounding.
    """
    g, cfg, ref = traj.grid, traj.cfg, traj.ref
    T, X = np.meshgrid(g.t, g.x, indexing="ij")
    inside = traj.support.contains(T, X)
    report: dict = {"kind": traj.kind, "bump_epsilon": cfg.bump_epsilon, "support": traj.support.as_dict()}
    tt, xx = T[inside], X[inside]
    scale = max(traj.v_bar.sup(), 1e-300)
    if tt.size == 0:
        exact = np.zeros(0)
    else:
        exact = physical_defect(ref, cfg, tt, xx)
    # swap the sampled u^p for the stored one (they differ on the edge ring only)
    p = band_power(cfg.kind)
    centre = physical_fields(ref, cfg, tt, xx)
    ring_term = centre[0] ** p - traj.u_bar.values[inside] ** p
    exact = exact + ring_term
    report["ring_max"] = traj.ring_max
    report["v_defect_exact_max"] = float(np.max(np.abs(exact))) if exact.size else 0.0
    # oracle: central differences with local steps halved level by level
    table = []
    for lev in range(levels):
        frac = base_frac / 2**lev
        d = fd_defect(ref, cfg, tt, xx, frac, order, centre) + ring_term if tt.size else np.zeros(0)
        err = float(np.max(np.abs(d))) if d.size else 0.0
        l2 = float(np.sqrt(np.mean(np.abs(d) ** 2))) if d.size else 0.0
        table.append({"step_fraction": frac, "max_defect": err, "l2_defect": l2})
    for a, b in zip(table[:-1], table[1:]):
        b["order"] = float(np.log2(a["max_defect"] / b["max_defect"])) if b["max_defect"] > 0 and a["max_defect"] > 0 else None
    report["convergence"] = table
    report["stencil_order"] = order
    report["v_defect_max"] = table[-1]["max_defect"]
    report["v_defect_l2"] = table[-1]["l2_defect"]
    # u-equation with the scheme's own operators
    u, v, h = traj.u_bar.values, traj.v_bar.values, traj.h_bar.values
    th = g.theta
    op = laplacian(u, g.dx) + traj.coupling.g(u, v)
    res = (u[1:] - u[:-1]) / g.dt - th * (op[1:] + h[1:]) - (1 - th) * (op[:-1] + h[:-1])
    report["u_defect_max"] = float(np.max(np.abs(res)))
    report["h_scale"] = traj.h_bar.sup()
    # exact zeros off the support box; the square max(|t - t0|, |x - x0|) < rho
    # contains that box only when rho <= 1 (rho^2 <= rho), so it is checked then only
    report["zero_outside"] = bool(np.all(u[~inside] == 0) and np.all(v[~inside] == 0) and np.all(h[~inside] == 0))
    rho = cfg.rho_radius
    if rho <= 1:
        square = np.maximum(np.abs(T - cfg.center_t), np.abs(X - cfg.center_x)) < rho
        report["zero_outside_rho_square"] = bool(np.all(u[~square] == 0) and np.all(v[~square] == 0)
                                                 and np.all(h[~square] == 0))
    else:
        report["zero_outside_rho_square"] = None
    report["v_scale"] = scale
    report["u_scale"] = traj.u_bar.sup()
    return report
