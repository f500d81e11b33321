import logging

import numpy as np
import pytest

from returnctrl.hum import build_weights, select_window
from returnctrl.nonlinear import NonlinearProblem, freeze_coefficients
from returnctrl.pde import SpaceTimeGrid
from returnctrl.trajectory import BumpConfig, assemble_trajectory

DESK = dict(bump_epsilon=0.3, rho_radius=0.5, center_t=0.5, center_x=0.5, enforce_remainder=False)


def desk_trajectory(kind="cubic", nx=200, nt=400):
    logging.getLogger("returnctrl.trajectory").setLevel(logging.ERROR)
    cfg = BumpConfig(kind=kind, **DESK)
    return assemble_trajectory(cfg, SpaceTimeGrid(0.0, 1.0, nx, 1.0, nt), omega=(0.2, 0.8))


class DeskSetup:
    """Desk trajectory with its z = 0 linearization, window and weight."""

    def __init__(self, kind, s=1e-3, kappa=0.05):
        self.traj = desk_trajectory(kind)
        self.grid = self.traj.grid
        problem = NonlinearProblem(self.traj, 0.0, 0.0)
        c0 = freeze_coefficients(problem, None)
        self.window, self.omega0 = select_window(self.grid, c0.a21, self.traj.is_complex)
        q = 0.25 * (self.omega0[1] - self.omega0[0])
        self.omega1 = (self.omega0[0] + q, self.omega0[1] - q)
        self.coeffs = freeze_coefficients(problem, None, (*self.window, *self.omega0))
        self.weight = build_weights(self.grid, s, self.omega1, kappa, self.window, self.omega0)


@pytest.fixture(scope="session")
def desk_cubic():
    return DeskSetup("cubic")


@pytest.fixture(scope="session")
def desk_complex():
    return DeskSetup("quadratic-complex")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
