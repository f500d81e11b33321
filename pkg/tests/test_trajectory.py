import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from returnctrl.coupling import product
from returnctrl.errors import ConstructionError, GeometryError, ParameterError
from returnctrl.pde import SpaceTimeGrid, laplacian
from returnctrl.trajectory import (BumpConfig, ReferenceProfiles, assemble_trajectory, auto_geometry,
                                   boundary_ring, build_reference, discrete_source, fd_defect, physical_defect,
                                   physical_fields, support_box, verify_trajectory)

from conftest import DESK, desk_trajectory


@pytest.fixture(scope="module")
def desk_ref():
    logging.getLogger("returnctrl.trajectory").setLevel(logging.ERROR)
    return ReferenceProfiles(BumpConfig(**DESK))


@pytest.fixture(scope="module")
def desk_report():
    return verify_trajectory(desk_trajectory())


# ---------------------------------------------------------------- reference frame


@pytest.mark.parametrize("kind", ["cubic", "quadratic-complex"])
def test_first_component_solves_the_band_identity(kind):
    # K^p = V_tau - Delta V, with V_tau and Delta V from their own closed forms
    ref = ReferenceProfiles(BumpConfig(**{**DESK, "kind": kind}))
    tau = np.linspace(-0.9, 0.9, 37)[:, None]
    r = np.linspace(0.0, 0.95, 41)[None, :] * ref.tp.lam(tau)
    _, Vt, LV = ref.v_parts(tau, r)
    K = ref.K(tau, r)
    p = 3 if kind == "cubic" else 2
    assert np.max(np.abs(K**p - (Vt - LV))) <= 1e-9 * np.max(np.abs(Vt - LV))


def test_reference_vanishes_off_support(desk_ref):
    tau = np.array([-1.0, -1.2, 1.0, 1.5, 0.0, 0.3])
    r = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.9])
    r[4:] *= desk_ref.tp.lam(tau[4:]) / np.array([1.0, 0.9])
    assert np.all(desk_ref.V(tau, r) == 0) and np.all(desk_ref.K(tau, r) == 0)


def test_v_parts_value_matches_V(desk_ref):
    tau = np.linspace(-0.8, 0.8, 9)[:, None]
    r = np.linspace(0, 0.2, 11)[None, :]
    assert np.allclose(desk_ref.v_parts(tau, r)[0], desk_ref.V(tau, r), rtol=1e-14, atol=0)


def test_time_derivative_matches_difference_quotient(desk_ref):
    tau, r, h = 0.2, 0.05, 1e-5
    _, Vt, _ = desk_ref.v_parts(tau, r)
    fd = (desk_ref.V(tau + h, r) - desk_ref.V(tau - h, r)) / (2 * h)
    assert fd == pytest.approx(float(Vt), rel=1e-6)


# ---------------------------------------------------------------- geometry


def test_support_box():
    cfg = BumpConfig(bump_epsilon=0.2, rho_radius=0.5, center_t=1.0, center_x=0.4)
    b = support_box(cfg)
    assert (b.t_lo, b.t_hi) == (0.75, 1.25)
    assert (b.x_lo, b.x_hi) == pytest.approx((0.3, 0.5))


def test_auto_geometry():
    cfg, grid = auto_geometry(BumpConfig(bump_epsilon=1e-3), nx=50, nt=60, length=2.0, fill=0.8)
    assert cfg.rho_radius == pytest.approx(800.0)
    assert grid.T == pytest.approx(2.5 * 800.0**2)
    assert (cfg.center_t, cfg.center_x) == pytest.approx((grid.T / 2, 1.0))
    b = support_box(cfg)
    assert b.x_hi - b.x_lo == pytest.approx(0.8 * 2.0)
    with pytest.raises(ParameterError):
        auto_geometry(BumpConfig(bump_epsilon=1e-3), fill=1.2)
    with pytest.raises(ParameterError):
        auto_geometry(BumpConfig())


def test_support_outside_control_set_rejected():
    with pytest.raises(GeometryError):
        assemble_trajectory(BumpConfig(**DESK), SpaceTimeGrid(nx=200, nt=400), omega=(0.5, 0.9))


def test_underresolved_support_rejected():
    with pytest.raises(GeometryError):
        assemble_trajectory(BumpConfig(**DESK), SpaceTimeGrid(nx=20, nt=400), omega=(0.2, 0.8))


def test_remainder_failure_raises():
    with pytest.raises(ConstructionError, match="smaller bump_epsilon"):
        build_reference(BumpConfig(**{**DESK, "enforce_remainder": True}))


def test_automatic_epsilon_passes_remainder():
    ref = build_reference(BumpConfig())
    assert ref.report["ok"] and ref.report["zero_ok"]
    # frozen from the bisection; a drift here means the construction changed
    assert ref.epsilon == pytest.approx(8.2718e-6, rel=1e-3)
    assert ref.epsilon < 0.3


# ---------------------------------------------------------------- sampled trajectory


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(6, 20), st.integers(6, 20))
def test_ring_truncation_confines_discrete_source(seed, nt, nx):
    rng = np.random.default_rng(seed)
    g = SpaceTimeGrid(nx=nx, nt=nt)
    inside = np.zeros(g.shape, dtype=bool)
    a, b = sorted(rng.choice(nt + 1, 2, replace=False))
    c, d = sorted(rng.choice(nx, 2, replace=False))
    inside[a : b + 1, c : d + 1] = True
    u, v = rng.standard_normal((2, *g.shape))
    u[~inside] = 0
    v[~inside] = 0
    u[boundary_ring(inside)] = 0
    h = discrete_source(g, u, v, product())
    assert np.all(h[~inside] == 0)


def test_discrete_source_makes_scheme_exact():
    rng = np.random.default_rng(2)
    for theta in (1.0, 0.5):
        g = SpaceTimeGrid(nx=12, nt=15, theta=theta)
        u, v = rng.standard_normal((2, *g.shape))
        h = discrete_source(g, u, v, product())
        f = laplacian(u, g.dx) + u * v + h
        res = (u[1:] - u[:-1]) / g.dt - theta * f[1:] - (1 - theta) * f[:-1]
        assert np.max(np.abs(res)) < 1e-9 * np.max(np.abs(h))


def test_desk_support_is_exact(desk_report):
    assert desk_report["zero_outside"] and desk_report["zero_outside_rho_square"]
    assert desk_report["ring_max"] > 0


def test_desk_u_equation_exact(desk_report):
    assert desk_report["u_defect_max"] <= 1e-12 * desk_report["h_scale"]


def test_fd_oracle_approaches_exact_derivatives():
    traj = desk_trajectory()
    T, X = np.meshgrid(traj.grid.t, traj.grid.x, indexing="ij")
    inside = traj.support.contains(T, X)
    t, x = T[inside][::97], X[inside][::97]
    exact = physical_defect(traj.ref, traj.cfg, t, x)
    errs = [np.max(np.abs(fd_defect(traj.ref, traj.cfg, t, x, f) - exact)) for f in (1 / 256, 1 / 512, 1 / 1024)]
    assert errs[0] > errs[1] > errs[2]


def test_sampled_fields_match_profiles():
    traj = desk_trajectory()
    g = traj.grid
    n, j = 200, 100
    u, v = physical_fields(traj.ref, traj.cfg, g.t[n], g.x[j])
    assert traj.v_bar.values[n, j] == v and traj.u_bar.values[n, j] == u


def test_theta_half_warns(caplog):
    caplog.set_level(logging.WARNING, logger="returnctrl.trajectory")
    cfg = BumpConfig(**DESK)
    assemble_trajectory(cfg, SpaceTimeGrid(nx=200, nt=400, theta=0.5), omega=(0.2, 0.8))
    assert any("alternating tail" in r.message for r in caplog.records)


@pytest.mark.parametrize("kwargs", [dict(delta=0.3), dict(kind="quartic"), dict(dim=0), dict(bump_epsilon=-1.0),
                                    dict(rho_radius=0.0)])
def test_bump_config_validation(kwargs):
    with pytest.raises(ParameterError):
        BumpConfig(**kwargs).validate()
