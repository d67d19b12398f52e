"""History CSV and legacy-VTK field output.

All floating point values are written with 17 significant digits, which
round-trips IEEE doubles exactly; reproducibility checks compare these files
byte for byte (minus the wall-clock column, which is not a simulation
quantity).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..grid import BoundaryCondition, Field, Grid
from ..physics import State

HISTORY_HEADER = "step,time,dt,energy,mass_u,max_abs_v,newton,gmres,wall_s"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class HistoryRow:
    step: int
    time: float
    dt: float
    energy: float
    mass_u: float
    max_abs_v: float
    newton: int
    gmres: int
    wall_s: float

    def to_csv(self) -> str:
        return ",".join(
            [
                str(self.step),
                _fmt(self.time),
                _fmt(self.dt),
                _fmt(self.energy),
                _fmt(self.mass_u),
                _fmt(self.max_abs_v),
                str(self.newton),
                str(self.gmres),
                _fmt(self.wall_s),
            ]
        )

    @classmethod
    def from_csv(cls, line: str) -> "HistoryRow":
        parts = line.strip().split(",")
        if len(parts) != 9:
            raise ValueError(f"malformed history row: {line!r}")
        return cls(
            int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]),
            float(parts[4]), float(parts[5]), int(parts[6]), int(parts[7]), float(parts[8]),
        )


class HistoryWriter:
    """Appends rows to a history CSV, flushing after every step."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._fh = open(path, "w")
        self._fh.write(HISTORY_HEADER + "\n")
        self._fh.flush()

    def write(self, row: HistoryRow) -> None:
        self._fh.write(row.to_csv() + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_history(rows, path: str) -> None:
    with HistoryWriter(path) as w:
        for row in rows:
            w.write(row)


def read_history(path: str) -> list[HistoryRow]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != HISTORY_HEADER:
            raise ValueError(f"unexpected history header {header!r}")
        return [HistoryRow.from_csv(line) for line in fh if line.strip()]


def write_vtk(state: State, path: str, title: str = "acch snapshot") -> None:
    """Legacy VTK STRUCTURED_POINTS file with per-cell scalars "u" and "v".

    Cell centers are written as the point lattice: origin at the first cell
    center (dx/2, dy/2[, dz/2]) with spacing (dx, dy[, dz]).  2D fields get a
    unit-thickness z layer.
    """
    grid = state.grid
    counts = list(grid.counts) + [1] * (3 - grid.dim)
    spacing = list(grid.spacing) + [1.0] * (3 - grid.dim)
    origin = [0.5 * d for d in grid.spacing] + [0.0] * (3 - grid.dim)
    n = grid.n_cells
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)

    def dump(fh, values):
        flat = values.ravel()
        for start in range(0, n, 6):
            fh.write(" ".join(_fmt(x) for x in flat[start:start + 6]) + "\n")

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ") + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {counts[0]} {counts[1]} {counts[2]}\n")
        fh.write(f"ORIGIN {_fmt(origin[0])} {_fmt(origin[1])} {_fmt(origin[2])}\n")
        fh.write(f"SPACING {_fmt(spacing[0])} {_fmt(spacing[1])} {_fmt(spacing[2])}\n")
        fh.write(f"POINT_DATA {n}\n")
        fh.write("SCALARS u double\nLOOKUP_TABLE default\n")
        dump(fh, state.u.interior)
        fh.write("SCALARS v double\nLOOKUP_TABLE default\n")
        dump(fh, state.v.interior)


def read_vtk(path: str) -> dict:
    """Parse a file written by :func:`write_vtk` (round-trip checks)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    meta = {}
    idx = 0
    arrays = {}
    current = None
    values: list[float] = []
    while idx < len(lines):
        line = lines[idx].strip()
        idx += 1
        if not line or line.startswith("#") or line in ("ASCII", "LOOKUP_TABLE default"):
            continue
        tok = line.split()
        if tok[0] == "DIMENSIONS":
            meta["dimensions"] = tuple(int(x) for x in tok[1:4])
        elif tok[0] == "ORIGIN":
            meta["origin"] = tuple(float(x) for x in tok[1:4])
        elif tok[0] == "SPACING":
            meta["spacing"] = tuple(float(x) for x in tok[1:4])
        elif tok[0] == "POINT_DATA":
            meta["n"] = int(tok[1])
        elif tok[0] == "SCALARS":
            if current is not None:
                arrays[current] = np.array(values)
            current = tok[1]
            values = []
        elif tok[0] in ("DATASET",):
            meta["dataset"] = tok[1]
        else:
            try:
                values.extend(float(x) for x in tok)
            except ValueError:
                continue
    if current is not None:
        arrays[current] = np.array(values)
    meta["arrays"] = arrays
    return meta


def state_from_vtk(path: str, bc: BoundaryCondition) -> State:
    meta = read_vtk(path)
    nx, ny, nz = meta["dimensions"]
    counts = (nx, ny) if nz == 1 else (nx, ny, nz)
    spacing = meta["spacing"][: len(counts)]
    lengths = tuple(n * d for n, d in zip(counts, spacing))
    grid = Grid(counts, lengths, bc)
    u = meta["arrays"]["u"].reshape(grid.array_shape)
    v = meta["arrays"]["v"].reshape(grid.array_shape)
    return State(Field.from_interior(grid, u), Field.from_interior(grid, v))


def write_xy(path: str, xs, ys) -> None:
    """Two-column whitespace data file (gnuplot-ready)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        for x, y in zip(xs, ys):
            fh.write(f"{_fmt(x)} {_fmt(y)}\n")
