import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from returnctrl.errors import (ConvergenceError, CouplingDegeneracyError, GeometryError, ParameterError,
                               WeightConfigurationError)
from returnctrl.hum import (WEIGHT_POWER, DualOperator, build_weights, conjugate_gradient, dual_gradient,
                            dual_objective, estimate_observability, fit_slope, largest_rectangle,
                            observability_ratio, retained_levels, select_s, select_window,
                            solve_penalized_control)
from returnctrl.pde import CoefficientSet, SpaceTimeGrid, solve_forward


def coarse(setup, nx=12, nt=16):
    """The desk linearization resampled at the nearest nodes of a small grid."""
    g = setup.grid
    small = g.with_resolution(nx, nt)
    ix = np.abs(g.x[None, :] - small.x[:, None]).argmin(axis=1)
    it = np.abs(g.t[None, :] - small.t[:, None]).argmin(axis=1)
    c = CoefficientSet(*(np.asarray(a)[np.ix_(it, ix)] for a in setup.coeffs.arrays(g)))
    w = build_weights(small, setup.weight.s, setup.omega1, 0.05, setup.window, setup.omega0)
    return small, c, w


def sine(x):
    return np.sin(np.pi * x)


# ---------------------------------------------------------------- weight


def test_eta_unclamped_midpoint():
    g = SpaceTimeGrid(nx=20, nt=40, T=2.0)
    w = build_weights(g, 1e-3, (0.4, 0.6))
    assert w.eta(1.0, clamp=False) == pytest.approx(4.0 / 2.0**2, rel=1e-15)


def test_eta_clamped_at_window_ends():
    g = SpaceTimeGrid(nx=20, nt=40)
    w = build_weights(g, 1e-3, (0.4, 0.6), kappa=0.1, window=(0.2, 0.7))
    L = 0.5
    cap = 1.0 / (0.1 * L * 0.9 * L)
    assert w.eta(0.2) == pytest.approx(cap) and w.eta(0.7) == pytest.approx(cap)
    assert w.eta(0.45) == pytest.approx(4.0 / L**2)


def test_rho_positive_and_peaked_in_omega1():
    g = SpaceTimeGrid(nx=60, nt=10)
    w = build_weights(g, 1e-3, (0.55, 0.7))
    r = w.rho_x(g.x)
    assert np.all(r > 0)
    assert 0.55 < g.x[np.argmin(r)] < 0.7


def test_weight_normalized_and_confined():
    g = SpaceTimeGrid(nx=30, nt=50)
    w = build_weights(g, 1e-3, (0.4, 0.6), window=(0.2, 0.8))
    vals = w.values()
    keep = retained_levels(g, w.window)
    assert np.max(vals) == pytest.approx(1.0, rel=1e-14)
    assert np.all(vals[~keep] == 0) and np.all(vals[keep] > 0)
    assert np.all(g.t[keep] > 0.2) and np.all(g.t[keep] < 0.8)


def test_weight_matches_closed_form():
    g = SpaceTimeGrid(nx=30, nt=50)
    s = 2e-3
    w = build_weights(g, s, (0.4, 0.6))
    keep = retained_levels(g, w.window)
    T, X = np.meshgrid(g.t[keep], g.x, indexing="ij")
    eta = w.eta(T)
    raw = np.exp(-s * w.rho_x(X) * eta) * (s * eta) ** WEIGHT_POWER
    assert np.allclose(w.values()[keep], raw / raw.max(), rtol=1e-12, atol=0)


def test_small_s_weight_tends_to_eta_power():
    # s rho eta -> 0, so the normalized weight tends to (eta / max eta)^7
    g = SpaceTimeGrid(nx=20, nt=30)
    keep = retained_levels(g, (0.0, 1.0))
    errs = []
    for s in (1e-4, 1e-6, 1e-8):
        w = build_weights(g, s, (0.4, 0.6))
        eta = w.eta(g.t[keep])[:, None]
        errs.append(np.max(np.abs(w.values()[keep] - (eta / eta.max()) ** WEIGHT_POWER)))
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-5


def test_weight_underflow_is_reported():
    g = SpaceTimeGrid(nx=20, nt=400)
    with pytest.raises(WeightConfigurationError):
        build_weights(g, 50.0, (0.4, 0.6), kappa=0.01)


@pytest.mark.parametrize("kwargs", [dict(s=0.0), dict(kappa=0.3), dict(omega1=(0.6, 0.4)),
                                    dict(omega1=(0.2, 0.3), omega0=(0.25, 0.5))])
def test_weight_parameter_errors(kwargs):
    g = SpaceTimeGrid(nx=20, nt=20)
    args = dict(s=1e-3, omega1=(0.4, 0.6))
    args.update(kwargs)
    with pytest.raises((ParameterError, GeometryError)):
        build_weights(g, **args)


# ---------------------------------------------------------------- window


def brute_rectangle(good):
    best = 0
    rows, cols = good.shape
    for a in range(rows):
        for b in range(a, rows):
            for c in range(cols):
                for d in range(c, cols):
                    if good[a : b + 1, c : d + 1].all():
                        best = max(best, (b - a + 1) * (d - c + 1))
    return best


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_largest_rectangle_matches_brute_force(rows, cols, seed):
    good = np.random.default_rng(seed).random((rows, cols)) < 0.7
    (a0, a1), (b0, b1) = largest_rectangle(good)
    area = (a1 - a0 + 1) * (b1 - b0 + 1) if good[a0 : a1 + 1, b0 : b1 + 1].all() else 0
    assert area == brute_rectangle(good)


def test_window_keeps_coupling_away_from_zero(desk_cubic):
    s = desk_cubic
    a21 = np.asarray(s.coeffs.a21)
    block = a21[np.ix_(s.grid.time_mask(s.window), s.grid.space_mask(s.omega0))]
    assert block.size > 0 and np.min(block) >= 0.01 * np.max(a21)


def test_window_on_zero_coupling():
    g = SpaceTimeGrid(nx=10, nt=10)
    with pytest.raises(CouplingDegeneracyError):
        select_window(g, np.zeros(g.shape))


# ---------------------------------------------------------------- dual operator


def test_gramian_symmetric_positive(desk_cubic):
    small, c, w = coarse(desk_cubic)
    lam = DualOperator(small, c, w, desk_cubic.omega0).dense()
    assert np.max(np.abs(lam - lam.T)) <= 1e-12 * np.max(np.abs(lam))
    ev = np.linalg.eigvalsh(0.5 * (lam + lam.T))
    assert ev[0] >= -1e-12 * ev[-1]


def test_gramian_hermitian_complex(desk_complex):
    small, c, w = coarse(desk_complex)
    lam = DualOperator(small, c, w, desk_complex.omega0, conjugate=True).dense()
    assert np.max(np.abs(lam - lam.conj().T)) <= 1e-12 * np.max(np.abs(lam))
    assert np.linalg.eigvalsh(0.5 * (lam + lam.conj().T))[0] >= -1e-12 * np.max(np.abs(lam))


def test_energy_matches_pairing(desk_cubic, rng):
    small, c, w = coarse(desk_cubic)
    op = DualOperator(small, c, w, desk_cubic.omega0)
    phi = rng.standard_normal(op.size)
    assert op.energy(phi) == pytest.approx(small.dx * np.dot(op.apply(phi), phi), rel=1e-12)


def test_complex_coefficients_need_conjugate(desk_complex):
    small, c, w = coarse(desk_complex)
    with pytest.raises(ParameterError):
        DualOperator(small, c, w, desk_complex.omega0)


def test_cg_matches_dense_solve(desk_cubic):
    small, c, w = coarse(desk_cubic)
    op = DualOperator(small, c, w, desk_cubic.omega0)
    lam = op.dense()
    for pen in (1e-4, 1e-8):
        r = solve_penalized_control(small, c, (sine, sine), w, pen, desk_cubic.omega0)
        free = solve_forward(small, c, (sine(small.x), sine(small.x)), stop=op.n2)
        b = -np.concatenate([free.first.values[op.n2], free.second.values[op.n2]])
        dense = np.linalg.solve(lam + pen * np.eye(op.size), b)
        assert np.linalg.norm(r.phi_T - dense) <= 1e-8 * np.linalg.norm(dense)


def test_gradient_matches_central_differences(desk_cubic, rng):
    small, c, w = coarse(desk_cubic)
    op = DualOperator(small, c, w, desk_cubic.omega0)
    phi, b = rng.standard_normal((2, op.size))
    pen, step = 1e-4, 1e-4
    grad = dual_gradient(op, phi, b, pen)
    fd = np.empty(op.size)
    for k in range(op.size):
        e = np.zeros(op.size)
        e[k] = step
        fd[k] = (dual_objective(op, phi + e, b, pen) - dual_objective(op, phi - e, b, pen)) / (2 * step * small.dx)
    assert np.linalg.norm(fd - grad) <= 1e-6 * np.linalg.norm(grad)


def test_cg_on_spd_matrix(rng):
    q = np.linalg.qr(rng.standard_normal((30, 30)))[0]
    a = q @ np.diag(np.geomspace(1, 1e4, 30)) @ q.T
    b = rng.standard_normal(30)
    x, its, res, hist = conjugate_gradient(lambda v: a @ v, b, tol=1e-12)
    assert np.allclose(x, np.linalg.solve(a, b), rtol=1e-8, atol=0)
    assert res <= 1e-12 and len(hist) == its + 1


def test_cg_rejects_indefinite(rng):
    a = np.diag([1.0, -1.0, 2.0])
    with pytest.raises(ConvergenceError):
        conjugate_gradient(lambda v: a @ v, np.ones(3))


def test_cg_zero_rhs():
    x, its, res, _ = conjugate_gradient(lambda v: v, np.zeros(4))
    assert its == 0 and res == 0 and np.all(x == 0)


# ---------------------------------------------------------------- controls


def test_zero_data_gives_zero_control(desk_cubic):
    s = desk_cubic
    r = solve_penalized_control(s.grid, s.coeffs, (0.0, 0.0), s.weight, 1e-6, s.omega0)
    assert r.sup_norm == 0.0 and r.terminal_norm == 0.0


def test_control_support_and_terminal_reduction(desk_cubic):
    s = desk_cubic
    r = solve_penalized_control(s.grid, s.coeffs, (sine, sine), s.weight, 1e-6, s.omega0)
    h = r.h.values
    keep = retained_levels(s.grid, s.window)
    inside = s.grid.space_mask(s.omega0)
    assert np.all(h[~keep] == 0) and np.all(h[:, ~inside] == 0)
    assert r.terminal_norm < 1e-3 * r.target_norm


def test_penalty_must_be_positive(desk_cubic):
    s = desk_cubic
    with pytest.raises(ParameterError):
        solve_penalized_control(s.grid, s.coeffs, (sine, sine), s.weight, 0.0, s.omega0)


def test_fit_slope_exact():
    x = np.geomspace(1e-8, 1e-2, 7)
    assert fit_slope(x, 3.0 * x**0.5) == pytest.approx(0.5, abs=1e-12)


def test_select_s_reports_sweep(desk_cubic):
    s = desk_cubic
    rep = select_s(s.grid, s.coeffs, s.window, s.omega0, s.omega1, candidates=[2.0**-10, 2.0**-8, 2.0**-6])
    assert rep["s"] in (2.0**-10, 2.0**-8, 2.0**-6)
    assert all(row["condition"] >= 1 for row in rep["sweep"])


# ---------------------------------------------------------------- observability


def test_observability_zero_datum_rejected(desk_cubic):
    g = desk_cubic.grid
    with pytest.raises(ParameterError):
        observability_ratio(g, desk_cubic.coeffs, (np.zeros(g.nx), np.zeros(g.nx)), desk_cubic.omega0)


def test_observability_without_coupling_diverges(desk_cubic):
    s = desk_cubic
    c = CoefficientSet(s.coeffs.a11, s.coeffs.a12, 0.0, s.coeffs.a22)
    rep = estimate_observability(s.grid, c, s.omega0, 4, seed=1)
    assert rep.diverges and rep.summary()["max_ratio"] == "inf"


def test_observability_seeded(desk_cubic):
    s = desk_cubic
    a = estimate_observability(s.grid, s.coeffs, s.omega0, 4, seed=5)
    b = estimate_observability(s.grid, s.coeffs, s.omega0, 4, seed=5)
    assert np.array_equal(a.ratios, b.ratios) and np.all(np.isfinite(a.ratios))
