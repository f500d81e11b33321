"""Command-line entry point: ``returnctrl <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import COMMANDS, RunConfig, from_dict, load_config, with_overrides
from .coupling import by_name
from .errors import ParameterError, ReturnCtrlError
from .hum import (build_weights, estimate_observability, fit_slope, penalty_sweep, select_s, select_window,
                  solve_penalized_control)
from .io import (write_fields, write_history_plot, write_json, write_profile_csv, write_support_plot,
                 write_sweep_plot, write_table_csv)
from .nonlinear import NonlinearProblem, demo_obstruction, freeze_coefficients, residual_check, run_picard
from .pde import CoefficientSet, SpaceTimeGrid
from .profiles import QUADRATIC_COMPLEX
from .trajectory import ReferenceTrajectory, assemble_trajectory, auto_geometry, build_reference, verify_trajectory

log = logging.getLogger("returnctrl")


def worker_count() -> int:
    raw = os.environ.get("RETURNCTRL_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"RETURNCTRL_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ParameterError(f"RETURNCTRL_THREADS must be a positive integer, got {n}")
    return n


# ---------------------------------------------------------------- shared setup


def build_trajectory(cfg: RunConfig) -> ReferenceTrajectory:
    t = cfg.trajectory
    bump = t.bump()
    coupling = by_name(t.coupling)
    if cfg.grid.auto:
        ref = build_reference(bump)
        g = cfg.grid
        bump, grid = auto_geometry(ref.cfg, g.nx, g.nt, g.theta, g.length, g.fill)
        return assemble_trajectory(bump, grid, t.omega, coupling, ref)
    return assemble_trajectory(bump, cfg.grid.build(), t.omega, coupling)


@dataclass
class Linearization:
    traj: ReferenceTrajectory
    coeffs: CoefficientSet
    window: tuple
    omega0: tuple
    omega1: tuple
    s: float
    s_report: dict | None

    def weight(self, kappa: float):
        return build_weights(self.traj.grid, self.s, self.omega1, kappa, self.window, self.omega0)


def linearize(cfg: RunConfig, traj: ReferenceTrajectory | None = None) -> Linearization:
    """Trajectory, coefficients at z = 0, control window, omega0, omega1 and s."""
    traj = traj or build_trajectory(cfg)
    c = cfg.control
    problem = NonlinearProblem(traj, 0.0, 0.0)
    coeffs = freeze_coefficients(problem, None)
    tw, xw = select_window(traj.grid, coeffs.a21, traj.is_complex)
    window = tuple(c.window) if c.window else tw
    omega0 = tuple(c.omega0) if c.omega0 else xw
    if c.omega1:
        omega1 = tuple(c.omega1)
    else:
        quarter = 0.25 * (omega0[1] - omega0[0])
        omega1 = (omega0[0] + quarter, omega0[1] - quarter)
    coeffs = freeze_coefficients(problem, None, (*window, *omega0))
    s_report = None
    s = c.s
    if s is None:
        s_report = select_s(traj.grid, coeffs, window, omega0, omega1, c.kappa, conjugate=traj.is_complex)
        s = s_report["s"]
    return Linearization(traj, coeffs, window, omega0, omega1, float(s), s_report)


def _unit_sine(grid: SpaceTimeGrid) -> np.ndarray:
    return np.sin(np.pi * (grid.x - grid.x_lo) / (grid.x_hi - grid.x_lo))


def _geometry(lin: Linearization, kappa: float) -> dict:
    return {"window": list(lin.window), "omega0": list(lin.omega0), "omega1": list(lin.omega1), "s": lin.s,
            "kappa": kappa, "s_selection": lin.s_report, "M_bar": lin.coeffs.M_bar}


# ---------------------------------------------------------------- commands


def cmd_build_trajectory(cfg: RunConfig, out: Path) -> dict:
    traj = build_trajectory(cfg)
    ref = traj.ref
    report = verify_trajectory(traj, cfg.trajectory.verify_levels)
    report["remainder"] = getattr(ref, "report", None)
    write_json(out / "residual_report.json", report)

    profiles = out / "profiles"
    profiles.mkdir(parents=True, exist_ok=True)
    for p in [ref.G, ref.g0, *ref.bumps, *ref.time_profiles]:
        write_profile_csv(profiles / f"{p.name}.csv", p)

    fields = write_fields(out / "fields", {"u_bar": traj.u_bar, "v_bar": traj.v_bar, "h_bar": traj.h_bar},
                          cfg.csv)
    tau = np.linspace(-1.0, 1.0, 201)
    r = np.linspace(0.0, ref.epsilon, 101)
    K = ref.K(tau[:, None], r[None, :])
    write_support_plot(out, tau, r, K)

    v_tol = 1e-6 * report["v_scale"]
    return {
        "kind": traj.kind,
        "bump_epsilon": ref.epsilon,
        "grid": traj.grid.as_dict(),
        "support": traj.support.as_dict(),
        "omega": list(traj.omega),
        "scale": traj.scale,
        "v_defect_max": report["v_defect_max"],
        "v_defect_tolerance": v_tol,
        "convergence_orders": [row.get("order") for row in report["convergence"][1:]],
        "u_defect_max": report["u_defect_max"],
        "zero_outside": report["zero_outside"],
        "ring_max": report["ring_max"],
        "remainder_ok": bool(ref.report["ok"]) if getattr(ref, "report", None) else None,
        "fields": fields,
    }


def cmd_solve_control(cfg: RunConfig, out: Path) -> dict:
    lin = linearize(cfg)
    c = cfg.control
    grid = lin.traj.grid
    weight = lin.weight(c.kappa)
    a = c.alpha_amplitude * _unit_sine(grid)
    dtype = complex if lin.traj.is_complex else float
    alpha = (a.astype(dtype), a.astype(dtype))
    penalties = sorted(float(p) for p in c.penalties)[::-1]
    sweep = penalty_sweep(grid, lin.coeffs, alpha, weight, lin.omega0, penalties, lin.traj.is_complex)
    rows = [{"penalty_epsilon": r.penalty_epsilon, "terminal_norm": r.terminal_norm,
             "weighted_norm": r.weighted_norm, "sup_norm": r.sup_norm} for r in sweep]
    write_table_csv(out / "penalty_sweep.csv", rows)
    write_sweep_plot(out)

    chosen = next((r for r in sweep if r.penalty_epsilon == c.penalty_epsilon), None)
    if chosen is None:
        chosen = solve_penalized_control(grid, lin.coeffs, alpha, weight, c.penalty_epsilon, lin.omega0,
                                         lin.traj.is_complex, phi0=sweep[-1].phi_T if sweep else None)
    fields = write_fields(out / "fields", {"h": chosen.h, "zeta1": chosen.zeta.first,
                                           "zeta2": chosen.zeta.second}, cfg.csv)
    terminal = [r.terminal_norm for r in sweep]
    weighted = [r.weighted_norm for r in sweep]
    return {
        "kind": lin.traj.kind,
        "geometry": _geometry(lin, c.kappa),
        "control": chosen.summary(),
        "sweep": rows,
        "slope": fit_slope(penalties, terminal) if len(sweep) > 1 else None,
        "terminal_monotone": bool(all(b < a for a, b in zip(terminal, terminal[1:]))),
        "weighted_ratio": float(max(weighted) / min(weighted)) if sweep and min(weighted) > 0 else None,
        "fields": fields,
    }


def initial_data(cfg: RunConfig, traj: ReferenceTrajectory) -> tuple[np.ndarray, np.ndarray]:
    n = cfg.nonlinear
    amp = n.amplitude * traj.scale
    shape = _unit_sine(traj.grid)
    if traj.kind == QUADRATIC_COMPLEX:
        rot = np.exp(1j * n.phase)
        return amp * rot * shape, amp * np.conj(rot) * shape
    return amp * shape, amp * shape


def cmd_run_nonlinear(cfg: RunConfig, out: Path) -> dict:
    lin = linearize(cfg)
    traj = lin.traj
    u0, v0 = initial_data(cfg, traj)
    problem = NonlinearProblem(traj, u0, v0)
    n = cfg.nonlinear
    try:
        result = run_picard(problem, lin.weight(cfg.control.kappa), lin.omega0, n.penalty_epsilon, n.tol,
                            n.max_iter)
    except ReturnCtrlError as e:
        history = getattr(e, "history", None)
        if history:
            write_table_csv(out / "picard_history.csv", [_history_row(h) for h in history])
        raise
    history = [s.as_dict() for s in result.history]
    write_table_csv(out / "picard_history.csv", [_history_row(h) for h in history])
    write_history_plot(out)
    check = residual_check(problem, result)
    write_json(out / "residual_check.json", check)
    fields = write_fields(out / "fields", {"u": result.u, "v": result.v, "h": result.h}, cfg.csv)
    summary = result.summary(problem)
    summary.update({"kind": traj.kind, "geometry": _geometry(lin, cfg.control.kappa), "residual": check,
                    "fields": fields, "initial_sup": [float(np.max(np.abs(u0))), float(np.max(np.abs(v0)))]})
    return summary


def _history_row(h: dict) -> dict:
    return {k: h[k] for k in ("k", "update_norm", "sup_norm", "terminal_norm") if k in h}


def cmd_demo_obstruction(cfg: RunConfig, out: Path) -> dict:
    o = cfg.obstruction
    grid = SpaceTimeGrid(0.0, 1.0, o.nx, o.T, o.nt, 1.0)
    v0 = np.sin(np.pi * grid.x)
    rep = demo_obstruction(grid, by_name(o.coupling), o.reaction, np.zeros(grid.nx), v0, o.n_controls, cfg.seed,
                           o.omega, o.amplitude, cfg.generator, worker_count())
    summary = rep.summary()
    summary.update({"grid": grid.as_dict(), "reaction": o.reaction, "coupling": o.coupling,
                    "omega": list(o.omega), "amplitude": o.amplitude, "generator": cfg.generator,
                    "gap_nonnegative": rep.min_gap >= 0})
    write_json(out / "obstruction.json", summary)
    return summary


def cmd_observability(cfg: RunConfig, out: Path) -> dict:
    lin = linearize(cfg)
    coeffs = lin.coeffs
    if cfg.observability.decouple:
        coeffs = replace(coeffs, a21=0.0)
    grid, n = lin.traj.grid, cfg.observability.n_samples
    conj = lin.traj.is_complex
    first = estimate_observability(grid, coeffs, lin.omega0, n, cfg.seed, conj, cfg.generator)
    doubled = estimate_observability(grid, coeffs, lin.omega0, 2 * n, cfg.seed, conj, cfg.generator)
    a, b = first.max_ratio, doubled.max_ratio
    change = abs(b - a) / a if np.isfinite(a) and np.isfinite(b) and a > 0 else None
    summary = {"kind": lin.traj.kind, "omega0": list(lin.omega0), "decoupled": cfg.observability.decouple,
               "samples": first.summary(), "doubled": doubled.summary(), "relative_change": change,
               "generator": cfg.generator}
    write_json(out / "observability.json", summary)
    return summary


HANDLERS = {
    "build-trajectory": cmd_build_trajectory,
    "solve-control": cmd_solve_control,
    "run-nonlinear": cmd_run_nonlinear,
    "demo-obstruction": cmd_demo_obstruction,
    "observability": cmd_observability,
}


# ---------------------------------------------------------------- argument handling


def _grid_pair(text: str) -> tuple[int, int]:
    try:
        nx, nt = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NX,NT, got {text!r}") from None
    return nx, nt


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="returnctrl", description="Return-method trajectories and controls for a "
                                "coupled parabolic pair.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="TOML file; omitted keys take the profile defaults")
        sp.add_argument("--out", type=Path, help="output directory (default: out/<command>)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--penalty-epsilon", type=float)
        sp.add_argument("--s", type=float, help="weight strength")
        sp.add_argument("--grid", type=_grid_pair, metavar="NX,NT")
        sp.add_argument("--kind", choices=["cubic", QUADRATIC_COMPLEX])
        sp.add_argument("--bump-epsilon", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--csv", action="store_true", help="also write fields as CSV")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config, args.command) if args.config else from_dict({}, args.command)
    out = args.out if args.out is not None else (None if args.config else Path("out") / args.command)
    cfg = with_overrides(cfg, out=out, seed=args.seed, penalty_epsilon=args.penalty_epsilon, s=args.s,
                         grid=args.grid, kind=args.kind)
    t = cfg.trajectory
    if args.bump_epsilon is not None:
        t = replace(t, bump_epsilon=args.bump_epsilon)
    if args.delta is not None:
        t = replace(t, delta=args.delta)
    cfg = replace(cfg, trajectory=t, csv=cfg.csv or args.csv)
    cfg.validate()
    return cfg


def run(cfg: RunConfig) -> dict:
    """Execute one configured command, writing everything under ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    summary = HANDLERS[cfg.command](cfg, out)
    summary["config"] = cfg.as_dict()
    write_json(out / "summary.json", summary)
    # kept apart so that summary.json is byte-identical between runs
    write_json(out / "metadata.json", {
        "version": __version__,
        "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "elapsed_seconds": round(time.perf_counter() - start, 3),
        "numpy": np.__version__,
        "python": sys.version.split()[0],
    })
    return summary


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        run(cfg)
    except ReturnCtrlError as e:
        payload = {"error": type(e).__name__, "message": str(e), "exit_code": e.exit_code}
        history = getattr(e, "history", None)
        if history:
            payload["history"] = [_history_row(h) for h in history]
        text = json.dumps(payload, sort_keys=True)
        print(text, file=sys.stderr)
        if out is not None:
            try:
                write_json(Path(out) / "error.json", payload)
            except OSError:
                pass
        return e.exit_code
    print(str(out / "summary.json"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
