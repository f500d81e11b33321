"""Run configuration: one TOML file (plus command-line overrides) fully determines a run."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ParameterError
from .pde import SpaceTimeGrid
from .profiles import CUBIC, KINDS
from .rng import DEFAULT_GENERATOR, make_rng
from .trajectory import BumpConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

COMMANDS = ("build-trajectory", "solve-control", "run-nonlinear", "demo-obstruction", "observability")
PROFILES = ("certificate", "desk")


@dataclass
class GridSection:
    x_lo: float = 0.0
    x_hi: float = 1.0
    nx: int = 200
    nt: int = 400
    T: float = 1.0
    theta: float = 1.0
    auto: bool = False
    length: float = 2.0
    fill: float = 0.8

    def build(self) -> SpaceTimeGrid:
        return SpaceTimeGrid(self.x_lo, self.x_hi, self.nx, self.T, self.nt, self.theta)


@dataclass
class TrajectorySection:
    kind: str = CUBIC
    bump_epsilon: float | None = None
    delta: float = 0.05
    dim: int = 1
    reaction: float = 0.0
    rho_radius: float | None = None
    center_t: float | None = None
    center_x: float | None = None
    enforce_remainder: bool = True
    z_grid_n: int = 2049
    t_grid_n: int = 2049
    omega: list | None = None
    coupling: str = "u*v"
    verify_levels: int = 3

    def bump(self) -> BumpConfig:
        return BumpConfig(self.bump_epsilon, self.delta, self.dim, self.reaction, self.rho_radius, self.center_t,
                          self.center_x, self.z_grid_n, self.t_grid_n, self.kind, self.enforce_remainder)


@dataclass
class ControlSection:
    s: float | None = 1e-3
    kappa: float = 0.05
    penalty_epsilon: float = 1e-8
    penalties: list = field(default_factory=lambda: [10.0**-k for k in range(2, 9)])
    alpha_amplitude: float = 1.0
    window: list | None = None
    omega0: list | None = None
    omega1: list | None = None


@dataclass
class NonlinearSection:
    amplitude: float = 4e-4  # sup of each initial component, relative to the bump scale
    phase: float = 0.0  # complex kind: u0 carries exp(i phase), v0 exp(-i phase)
    tol: float = 1e-10
    max_iter: int = 15
    penalty_epsilon: float = 1e-10


@dataclass
class ObstructionSection:
    nx: int = 100
    nt: int = 200
    T: float = 0.5
    reaction: float = 0.0
    n_controls: int = 32
    amplitude: float = 1.0
    omega: list = field(default_factory=lambda: [0.2, 0.8])
    coupling: str = "u*v"


@dataclass
class ObservabilitySection:
    n_samples: int = 64
    decouple: bool = False


@dataclass
class RunConfig:
    command: str = "build-trajectory"
    profile: str = "certificate"
    seed: int = 20260101
    generator: str = DEFAULT_GENERATOR
    out: str = "out"
    csv: bool = False
    grid: GridSection = field(default_factory=GridSection)
    trajectory: TrajectorySection = field(default_factory=TrajectorySection)
    control: ControlSection = field(default_factory=ControlSection)
    nonlinear: NonlinearSection = field(default_factory=NonlinearSection)
    obstruction: ObstructionSection = field(default_factory=ObstructionSection)
    observability: ObservabilitySection = field(default_factory=ObservabilitySection)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ParameterError(f"unknown command {self.command!r}")
        if self.profile not in PROFILES:
            raise ParameterError(f"unknown profile {self.profile!r}; choose one of {PROFILES}")
        if self.trajectory.kind not in KINDS:
            raise ParameterError(f"unknown kind {self.trajectory.kind!r}; choose one of {KINDS}")
        make_rng(self.seed, self.generator)
        self.trajectory.bump().validate()
        if not self.grid.auto:
            self.grid.build()
        if not self.control.penalty_epsilon > 0 or any(not p > 0 for p in self.control.penalties):
            raise ParameterError("penalty parameters must be positive")
        if self.control.s is not None and not self.control.s > 0:
            raise ParameterError("s must be positive (or omitted for the automatic sweep)")
        if self.observability.n_samples < 1 or self.obstruction.n_controls < 1:
            raise ParameterError("sample counts must be positive")
        if self.nonlinear.max_iter < 1 or not self.nonlinear.tol > 0:
            raise ParameterError("max_iter must be positive and tol > 0")

    def as_dict(self) -> dict:
        return asdict(self)


def profile_defaults(profile: str) -> dict:
    """Section values that differ between the two shipped profiles.

    ``certificate`` sizes the grid to the support of a trajectory with the
    automatically chosen epsilon; ``desk`` fixes a unit square and a moderate
    epsilon so that the control experiments see a visible coupling region.
    """
    if profile == "certificate":
        return {"grid": {"auto": True}, "trajectory": {"bump_epsilon": None, "enforce_remainder": True}}
    if profile == "desk":
        return {
            "grid": {"auto": False, "x_lo": 0.0, "x_hi": 1.0, "nx": 200, "nt": 400, "T": 1.0},
            "trajectory": {"bump_epsilon": 0.3, "rho_radius": 0.5, "center_t": 0.5, "center_x": 0.5,
                           "enforce_remainder": False, "omega": [0.2, 0.8]},
        }
    raise ParameterError(f"unknown profile {profile!r}; choose one of {PROFILES}")


_SECTIONS = {
    "grid": GridSection,
    "trajectory": TrajectorySection,
    "control": ControlSection,
    "nonlinear": NonlinearSection,
    "obstruction": ObstructionSection,
    "observability": ObservabilitySection,
}


def _check_type(name: str, value, default, where: str) -> None:
    """Scalars must match the type of their default (ints are accepted for floats)."""
    if value is None or default is None or not isinstance(default, (bool, int, float, str)):
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default)) and not isinstance(value, bool)
    if not ok:
        raise ParameterError(f"[{where}] {name} must be {type(default).__name__}, got {value!r}")


def _fill(cls, values: dict, where: str):
    by_name = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(by_name)
    if unknown:
        raise ParameterError(f"unknown key(s) in [{where}]: {sorted(unknown)}")
    for k, v in values.items():
        if k in _SECTIONS:
            continue
        default = by_name[k].default
        if default is None and str(by_name[k].type).startswith("float"):
            default = 0.0
        _check_type(k, v, default, where)
    return cls(**values)


def default_profile(command: str) -> str:
    return "certificate" if command == "build-trajectory" else "desk"


def from_dict(data: dict, command: str | None = None) -> RunConfig:
    data = dict(data)
    top = {k: v for k, v in data.items() if k not in _SECTIONS}
    command = command or top.get("command", "build-trajectory")
    top["command"] = command
    profile = top.get("profile", default_profile(command))
    top["profile"] = profile
    base = profile_defaults(profile)
    sections = {}
    for name, cls in _SECTIONS.items():
        merged = dict(base.get(name, {}))
        merged.update(data.get(name, {}) or {})
        sections[name] = _fill(cls, merged, name)
    cfg = _fill(RunConfig, {**top, **sections}, "top level")
    return cfg


def load_config(path, command: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as e:
        raise ParameterError(f"cannot read config {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ParameterError(f"invalid TOML in {path}: {e}") from None
    return from_dict(data, command)


def with_overrides(cfg: RunConfig, *, out=None, seed=None, penalty_epsilon=None, s=None, grid=None,
                   kind=None) -> RunConfig:
    """Apply command-line flags on top of a loaded configuration."""
    if out is not None:
        cfg = replace(cfg, out=str(out))
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if penalty_epsilon is not None:
        cfg = replace(cfg, control=replace(cfg.control, penalty_epsilon=float(penalty_epsilon)),
                      nonlinear=replace(cfg.nonlinear, penalty_epsilon=float(penalty_epsilon)))
    if s is not None:
        cfg = replace(cfg, control=replace(cfg.control, s=float(s)))
    if grid is not None:
        nx, nt = grid
        cfg = replace(cfg, grid=replace(cfg.grid, nx=int(nx), nt=int(nt)),
                      obstruction=replace(cfg.obstruction, nx=int(nx), nt=int(nt)))
    if kind is not None:
        cfg = replace(cfg, trajectory=replace(cfg.trajectory, kind=kind))
    return cfg
