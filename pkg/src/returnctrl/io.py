"""Field and profile persistence, JSON manifests and gnuplot scripts."""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .pde import Field, SpaceTimeGrid
from .profiles import SampledProfile


def _grid_from(d: dict) -> SpaceTimeGrid:
    return SpaceTimeGrid(float(d["x_lo"]), float(d["x_hi"]), int(d["nx"]), float(d["T"]), int(d["nt"]),
                         float(d["theta"]))


# ---------------------------------------------------------------- fields


def write_field_csv(path, field: Field) -> Path:
    """One row per node: t, x, value (or value_re, value_im for complex fields)."""
    path = Path(path)
    g = field.grid
    T, X = np.meshgrid(g.t, g.x, indexing="ij")
    cols = [T.ravel(), X.ravel()]
    if field.is_complex:
        cols += [field.values.real.ravel(), field.values.imag.ravel()]
        header = "t,x,value_re,value_im"
    else:
        cols.append(field.values.ravel())
        header = "t,x,value"
    meta = json.dumps(g.as_dict(), sort_keys=True)
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",", header=f"{meta}\n{header}", comments="# ")
    return path


def read_field_csv(path) -> Field:
    path = Path(path)
    with path.open() as fh:
        meta = json.loads(fh.readline()[2:])
        names = fh.readline()[2:].strip().split(",")
    grid = _grid_from(meta)
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if "value_im" in names:
        vals = data[:, 2] + 1j * data[:, 3]
    else:
        vals = data[:, 2]
    return Field(grid, vals.reshape(grid.shape))


def write_field_binary(path, field: Field, name: str = "") -> tuple[Path, Path]:
    """Row-major little-endian samples plus a JSON header next to them (``.json``)."""
    path = Path(path)
    dtype = np.dtype("<c16") if field.is_complex else np.dtype("<f8")
    path.write_bytes(np.ascontiguousarray(field.values, dtype=dtype).tobytes(order="C"))
    header = {
        "name": name,
        "grid": field.grid.as_dict(),
        "shape": list(field.values.shape),
        "scalar": "complex128" if field.is_complex else "float64",
        "endianness": "little",
        "order": "row-major (time, space)",
    }
    hpath = path.with_suffix(path.suffix + ".json")
    hpath.write_text(json.dumps(header, indent=2, sort_keys=True))
    return path, hpath


def read_field_binary(path) -> Field:
    path = Path(path)
    header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    grid = _grid_from(header["grid"])
    base = "c16" if header["scalar"] == "complex128" else "f8"
    order = "<" if header.get("endianness", sys.byteorder) == "little" else ">"
    vals = np.frombuffer(path.read_bytes(), dtype=np.dtype(order + base))
    if vals.size != math.prod(header["shape"]):
        raise ParameterError(f"{path} holds {vals.size} samples, header says {header['shape']}")
    return Field(grid, vals.reshape(header["shape"]).astype(base))


def write_fields(directory, fields: dict[str, Field], csv: bool = False) -> list[str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, f in fields.items():
        p, _ = write_field_binary(directory / f"{name}.bin", f, name)
        written.append(p.name)
        if csv:
            written.append(write_field_csv(directory / f"{name}.csv", f).name)
    return written


# ---------------------------------------------------------------- profiles


def write_profile_csv(path, profile: SampledProfile) -> Path:
    path = Path(path)
    vals = profile.values
    if np.iscomplexobj(vals):
        data, header = np.column_stack([profile.grid, vals.real, vals.imag]), "x,value_re,value_im"
    else:
        data, header = np.column_stack([profile.grid, vals]), "x,value"
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=f"{profile.name}\n{header}", comments="# ")
    return path


def read_profile_csv(path) -> SampledProfile:
    path = Path(path)
    with path.open() as fh:
        name = fh.readline()[2:].strip()
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    vals = data[:, 1] + 1j * data[:, 2] if data.shape[1] == 3 else data[:, 1]
    return SampledProfile(name, data[:, 0], vals)


# ---------------------------------------------------------------- JSON


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (complex, np.complexfloating)):
        return {"re": _jsonable(float(o.real)), "im": _jsonable(float(o.imag))}
    if isinstance(o, (float, np.floating)):
        o = float(o)
        if math.isnan(o):
            return "nan"
        if math.isinf(o):
            return "inf" if o > 0 else "-inf"
        return o
    return o


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_table_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    keys = list(rows[0]) if rows else []
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else str(r[k])
                              for k in keys))
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- plot scripts


def write_support_plot(directory, tau: np.ndarray, r: np.ndarray, K: np.ndarray) -> tuple[Path, Path]:
    """Data and a gnuplot script for the set where the first reference component is positive."""
    directory = Path(directory)
    data = directory / "k_reference.dat"
    with data.open("w") as fh:
        for i, t in enumerate(tau):
            for j, z in enumerate(r):
                val = K[i, j].real if np.iscomplexobj(K) else K[i, j]
                fh.write(f"{t:.10g} {z:.10g} {val:.10g}\n")
            fh.write("\n")
    script = directory / "k_support.gp"
    script.write_text(
        "set terminal pngcairo size 900,600\n"
        "set output 'k_support.png'\n"
        "set xlabel 't (reference frame)'\n"
        "set ylabel 'r'\n"
        "set view map\n"
        "unset surface\n"
        "set pm3d at b\n"
        "set palette defined (0 'white', 1 'black')\n"
        "set cbrange [0:1]\n"
        "unset colorbox\n"
        "set title 'region where k(t, r) > 0'\n"
        "splot 'k_reference.dat' using 1:2:($3 > 0 ? 1 : 0) notitle\n"
    )
    return data, script


def write_sweep_plot(directory, table_name: str = "penalty_sweep.csv") -> Path:
    script = Path(directory) / "penalty_sweep.gp"
    script.write_text(
        "set terminal pngcairo size 800,600\n"
        "set output 'penalty_sweep.png'\n"
        "set datafile separator ','\n"
        "set logscale xy\n"
        "set xlabel 'penalty epsilon'\n"
        "set key top left\n"
        f"plot '{table_name}' every ::1 using 1:2 with linespoints title 'terminal norm', \\\n"
        f"     '' every ::1 using 1:3 with linespoints title 'weighted norm'\n"
    )
    return script


def write_history_plot(directory, table_name: str = "picard_history.csv") -> Path:
    script = Path(directory) / "picard_history.gp"
    script.write_text(
        "set terminal pngcairo size 800,600\n"
        "set output 'picard_history.png'\n"
        "set datafile separator ','\n"
        "set logscale y\n"
        "set xlabel 'iteration'\n"
        f"plot '{table_name}' every ::1 using 1:2 with linespoints title 'update norm'\n"
    )
    return script
