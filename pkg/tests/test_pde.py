import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from returnctrl.errors import ParameterError
from returnctrl.pde import (CoefficientSet, Field, SpaceTimeGrid, laplacian, pairing, solve_adjoint, solve_forward,
                            space_time_pairing, zero_coefficients)


def random_coefficients(grid, rng, complex_=False, size=1.0):
    def draw():
        a = rng.standard_normal(grid.shape)
        if complex_:
            a = a + 1j * rng.standard_normal(grid.shape)
        return size * a

    return CoefficientSet(draw(), draw(), draw(), draw())


def discrete_decay(grid, k=1):
    """Per-step amplification of sin(k pi x) under the scheme, from the symbol of the 3-point Laplacian."""
    lam = 4.0 / grid.dx**2 * np.sin(k * np.pi * grid.dx / 2) ** 2
    th, dt = grid.theta, grid.dt
    return (1 - (1 - th) * dt * lam) / (1 + th * dt * lam)


def test_zero_data_gives_zero_fields():
    g = SpaceTimeGrid(nx=20, nt=30)
    rng = np.random.default_rng(0)
    z = solve_forward(g, random_coefficients(g, rng))
    assert z.sup() == 0.0
    a = solve_adjoint(g, random_coefficients(g, rng))
    assert a.phi.sup() == 0.0 and a.observed.sup() == 0.0


@pytest.mark.parametrize("theta", [1.0, 0.5])
def test_heat_mode_matches_discrete_symbol(theta):
    g = SpaceTimeGrid(nx=40, nt=50, T=0.2, theta=theta)
    s = np.sin(np.pi * g.x)
    z = solve_forward(g, zero_coefficients(), initial=(s, 2 * s))
    expected = discrete_decay(g) ** g.nt * s
    assert np.max(np.abs(z.first.final() - expected)) < 1e-13
    assert np.max(np.abs(z.second.final() - 2 * expected)) < 1e-13


def test_heat_mode_converges_to_continuous_decay():
    errs = []
    for n in (20, 40, 80):
        g = SpaceTimeGrid(nx=n, nt=n, T=0.1, theta=0.5)
        z = solve_forward(g, zero_coefficients(), initial=(lambda x: np.sin(np.pi * x), None))
        exact = np.exp(-np.pi**2 * g.T) * np.sin(np.pi * g.x)
        errs.append(np.max(np.abs(z.first.final() - exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8)


def test_backward_heat_mode():
    g = SpaceTimeGrid(nx=30, nt=40, T=0.3)
    s = np.sin(2 * np.pi * g.x)
    a = solve_adjoint(g, zero_coefficients(), final=(s, None))
    assert np.max(np.abs(a.first.values[0] - discrete_decay(g, 2) ** g.nt * s)) < 1e-13
    assert a.second.sup() == 0.0


def manufactured_error(n, theta):
    # u = e^{-t} sin(pi x) driven through h; v_t - v_xx = u gives v in closed form
    g = SpaceTimeGrid(nx=n, nt=n, T=0.5, theta=theta)
    coeffs = CoefficientSet(0.0, 0.0, 1.0, 0.0)
    T, X = np.meshgrid(g.t, g.x, indexing="ij")
    h = (np.pi**2 - 1) * np.exp(-T) * np.sin(np.pi * X)
    z = solve_forward(g, coeffs, initial=(lambda x: np.sin(np.pi * x), None), source_h=h)
    s = np.sin(np.pi * g.x)
    u_T = np.exp(-g.T) * s
    v_T = (np.exp(-g.T) - np.exp(-np.pi**2 * g.T)) / (np.pi**2 - 1) * s
    return max(np.max(np.abs(z.first.final() - u_T)), np.max(np.abs(z.second.final() - v_T)))


def test_manufactured_solution_second_order():
    errs = [manufactured_error(n, 0.5) for n in (16, 32, 64)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), orders


def test_manufactured_solution_backward_euler_first_order_in_time():
    errs = [manufactured_error(n, 1.0) for n in (16, 32, 64)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 0.85), orders


def duality_gap(g, coeffs, rng, conjugate, omega=(0.3, 0.7)):
    cplx = conjugate
    h = rng.standard_normal(g.shape) + (1j * rng.standard_normal(g.shape) if cplx else 0)
    pT = [rng.standard_normal(g.nx) + (1j * rng.standard_normal(g.nx) if cplx else 0) for _ in range(2)]
    z = solve_forward(g, coeffs, source_h=h, omega=omega)
    a = solve_adjoint(g, coeffs, final=pT, conjugate=conjugate)
    lhs = pairing(g, z.first.final(), pT[0], conjugate) + pairing(g, z.second.final(), pT[1], conjugate)
    rhs = space_time_pairing(g, h, a.observed.first.values, g.space_mask(omega), conjugate)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


@pytest.mark.parametrize("theta", [1.0, 0.5])
@pytest.mark.parametrize("conjugate", [False, True])
def test_duality_identity(theta, conjugate):
    rng = np.random.default_rng(7)
    g = SpaceTimeGrid(nx=24, nt=30, theta=theta)
    coeffs = random_coefficients(g, rng, complex_=conjugate, size=3.0)
    for _ in range(5):
        assert duality_gap(g, coeffs, rng, conjugate) < 1e-12


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(3, 30), nt=st.integers(2, 30), seed=st.integers(0, 2**32 - 1), theta=st.sampled_from([0.5, 1.0]))
def test_duality_property(nx, nt, seed, theta):
    rng = np.random.default_rng(seed)
    g = SpaceTimeGrid(nx=nx, nt=nt, theta=theta)
    coeffs = random_coefficients(g, rng)
    assert duality_gap(g, coeffs, rng, False, omega=(0.0, 1.0)) < 1e-11


def test_forward_is_linear():
    rng = np.random.default_rng(3)
    g = SpaceTimeGrid(nx=15, nt=12)
    c = random_coefficients(g, rng)
    h1, h2 = rng.standard_normal((2, *g.shape))
    z1 = solve_forward(g, c, source_h=h1).final()
    z2 = solve_forward(g, c, source_h=h2).final()
    z12 = solve_forward(g, c, source_h=2 * h1 - h2).final()
    assert np.allclose(z12, 2 * z1 - z2, rtol=0, atol=1e-13 * np.max(np.abs(z12)))


def test_comparison_principle_for_cooperative_coupling():
    # backward Euler with a12, a21 >= 0: each step matrix is an M-matrix, so positivity propagates
    rng = np.random.default_rng(11)
    g = SpaceTimeGrid(nx=40, nt=60, T=0.5)
    c = CoefficientSet(0.0, np.abs(rng.standard_normal(g.shape)), np.abs(rng.standard_normal(g.shape)), 0.0)
    h = np.abs(rng.standard_normal(g.shape))
    z = solve_forward(g, c, initial=(np.abs(rng.standard_normal(g.nx)), None), source_h=h)
    assert np.min(z.first.values) >= 0 and np.min(z.second.values) >= 0
    # ordered data give ordered solutions
    u0 = np.abs(rng.standard_normal(g.nx))
    lo = solve_forward(g, c, initial=(u0, None), source_h=h)
    hi = solve_forward(g, c, initial=(u0 + 0.1, None), source_h=h + 0.1)
    assert np.all(hi.first.values >= lo.first.values) and np.all(hi.second.values >= lo.second.values)


def test_restricted_sweep_zero_outside_range():
    g = SpaceTimeGrid(nx=10, nt=20)
    z = solve_forward(g, zero_coefficients(), initial=(1.0, 0.0), start=5, stop=12)
    assert np.all(z.first.values[:5] == 0) and np.all(z.first.values[13:] == 0)
    assert np.all(z.first.values[5] == 1.0)


def test_laplacian_of_sine():
    g = SpaceTimeGrid(nx=50, nt=2)
    s = np.sin(np.pi * g.x)
    lam = 4.0 / g.dx**2 * np.sin(np.pi * g.dx / 2) ** 2
    assert np.allclose(laplacian(s, g.dx), -lam * s, atol=1e-10)


@pytest.mark.parametrize("kwargs", [dict(nx=2), dict(nt=1), dict(T=0.0), dict(x_lo=1.0, x_hi=0.0), dict(theta=0.3)])
def test_grid_rejects_bad_parameters(kwargs):
    with pytest.raises(ParameterError):
        SpaceTimeGrid(**kwargs)


def test_shape_checks():
    g = SpaceTimeGrid(nx=5, nt=4)
    with pytest.raises(ParameterError):
        Field(g, np.zeros((4, 5)))
    with pytest.raises(ParameterError):
        solve_forward(g, zero_coefficients(), source_h=np.zeros((3, 3)))
    with pytest.raises(ParameterError):
        solve_forward(g, zero_coefficients(), initial=(np.zeros(4), None))
    with pytest.raises(ParameterError):
        solve_adjoint(g, zero_coefficients(), final=(np.ones(6), None))


def test_coefficient_bound_check():
    g = SpaceTimeGrid(nx=10, nt=10)
    c = CoefficientSet(0.0, 1.0, 2.0, 0.0, M_bar=1.5)
    with pytest.raises(ParameterError):
        c.check(g)
    c = CoefficientSet(0.0, 1.0, 0.1, 0.0, M_bar=2.0, window=(0.2, 0.8, 0.3, 0.7))
    with pytest.raises(ParameterError):
        c.check(g)
    CoefficientSet(0.0, 1.0, 1.0, 0.0, M_bar=2.0, window=(0.2, 0.8, 0.3, 0.7)).check(g)
