"""Configuration, file formats, and driver behavior."""

import os

import numpy as np
import pytest

from acch.exceptions import ConfigError
from acch.grid import BoundaryCondition
from acch.linalg import SchwarzVariant
from acch.cli.config import InitialSpec, OutputSpec, RunConfig, SolverSpec, TimeSpec, load_config
from acch.cli.drivers import (
    build_initial_state,
    restrict_block_mean,
    simulate,
)
from acch.cli.io import (
    HISTORY_HEADER,
    HistoryRow,
    read_history,
    read_vtk,
    state_from_vtk,
    write_history,
    write_vtk,
)
from acch.cli.main import main
from acch.physics import Params, State, is_admissible

from conftest import make_grid

BASE_INI = """
[grid]
cells = 16 16
lengths = 1.0 1.0
bc = neumann

[physics]
alpha = 4.0
beta = 2.0
gamma = 0.005
theta = 0.1
rho = 0.001

[initial]
kind = random_uniform
center_u = 0.55
amplitude = 0.05
seed = 99

[time]
horizon = 0.0004
mode = fixed
dt = 1e-4

[solver]
subdomains = 2

[output]
history = history.csv
"""


@pytest.fixture
def ini_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(BASE_INI)
    return str(path)


def small_config(**time_kw):
    time_spec = TimeSpec(horizon=0.0004, mode="fixed", dt=1e-4)
    if time_kw:
        from dataclasses import replace

        time_spec = replace(time_spec, **time_kw)
    return RunConfig(
        grid=make_grid((16, 16)),
        params=Params(4.0, 2.0, 0.005, 0.1, 0.001),
        initial=InitialSpec(seed=99),
        time=time_spec,
        solver=SolverSpec(subdomains=2),
        output=OutputSpec(),
    )


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_load_config_roundtrip(ini_file):
    cfg = load_config(ini_file)
    assert cfg.grid.counts == (16, 16)
    assert cfg.grid.bc is BoundaryCondition.NEUMANN
    assert cfg.params.alpha == 4.0
    assert cfg.time.mode == "fixed"
    assert cfg.solver.preconditioner is SchwarzVariant.LEFT_RAS
    assert cfg.eta == 1e4  # 2D default


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(BASE_INI + "\nwhatever = 3\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(BASE_INI + "\n[extras]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_missing_required_section(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[grid]\ncells = 8 8\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_bad_values_rejected(tmp_path):
    for mutation in (
        ("cells = 16 16", "cells = three"),
        ("bc = neumann", "bc = slippery"),
        ("dt = 1e-4", "dt = fast"),
    ):
        path = tmp_path / "bad.ini"
        path.write_text(BASE_INI.replace(*mutation))
        with pytest.raises(ConfigError):
            load_config(str(path))


def test_eta_default_3d():
    cfg = RunConfig(
        grid=make_grid((8, 8, 8)),
        params=Params(4.0, 2.0, 0.005, 0.1, 0.001),
        initial=InitialSpec(),
        time=TimeSpec(horizon=1.0),
    )
    assert cfg.eta == 1e2


# ---------------------------------------------------------------------------
# initial conditions
# ---------------------------------------------------------------------------

def test_random_initial_bounds_and_seeding():
    cfg = small_config()
    s1 = build_initial_state(cfg)
    s2 = build_initial_state(cfg)
    assert np.array_equal(s1.u.interior, s2.u.interior)
    assert np.array_equal(s1.v.interior, s2.v.interior)
    assert is_admissible(s1)
    assert np.all((s1.u.interior >= 0.5) & (s1.u.interior <= 0.6))
    assert np.all(np.abs(s1.v.interior) <= 0.05)
    s3 = build_initial_state(cfg.with_seed(100))
    assert not np.array_equal(s1.u.interior, s3.u.interior)


def test_trigonometric_initial_profile():
    from dataclasses import replace

    cfg = small_config()
    cfg = replace(cfg, initial=InitialSpec(kind="trigonometric"))
    state = build_initial_state(cfg)
    grid = cfg.grid
    x, y = grid.center_mesh()
    expect_u = 0.4 * (np.sin(2 * np.pi * x) ** 2 + np.cos(2 * np.pi * y) ** 2) + 0.1
    np.testing.assert_allclose(state.u.interior, expect_u, rtol=1e-14)
    assert is_admissible(state)


# ---------------------------------------------------------------------------
# io round trips
# ---------------------------------------------------------------------------

def test_history_roundtrip(tmp_path):
    rows = [
        HistoryRow(0, 0.0, 0.0, 1.2345678901234567, 0.55, 0.05, 0, 0, 0.0),
        HistoryRow(1, 1e-4, 1e-4, 1.2, 0.55, 0.04999, 2, 13, 0.125),
    ]
    path = str(tmp_path / "hist.csv")
    write_history(rows, path)
    back = read_history(path)
    assert back == rows
    # header is pinned
    with open(path) as fh:
        assert fh.readline().strip() == HISTORY_HEADER
    # times strictly increasing
    times = [r.time for r in back]
    assert all(b > a for a, b in zip(times, times[1:]))


def test_vtk_roundtrip_bitwise(tmp_path, rng):
    grid = make_grid((6, 4), lengths=(2.0, 1.0))
    u = 0.5 + 0.1 * rng.standard_normal(grid.array_shape)
    v = 0.1 * rng.standard_normal(grid.array_shape)
    state = State.from_interior(grid, u, v)
    path = str(tmp_path / "snap.vtk")
    write_vtk(state, path)
    meta = read_vtk(path)
    assert meta["dimensions"] == (6, 4, 1)
    assert meta["spacing"][0] == pytest.approx(2.0 / 6)
    assert meta["origin"][0] == pytest.approx(1.0 / 6)
    back = state_from_vtk(path, grid.bc)
    assert np.array_equal(back.u.interior, u)
    assert np.array_equal(back.v.interior, v)


def test_vtk_uniform_16_values(tmp_path):
    grid = make_grid((4, 4))
    state = State.from_interior(
        grid, np.full(grid.array_shape, 0.5), np.full(grid.array_shape, 0.25)
    )
    path = str(tmp_path / "u.vtk")
    write_vtk(state, path)
    meta = read_vtk(path)
    assert meta["n"] == 16
    assert len(meta["arrays"]["u"]) == 16
    assert np.all(meta["arrays"]["u"] == 0.5)
    assert np.all(meta["arrays"]["v"] == 0.25)


def test_restrict_block_mean():
    fine = np.arange(16, dtype=float).reshape(4, 4)
    coarse = restrict_block_mean(fine, 2)
    assert coarse.shape == (2, 2)
    assert coarse[0, 0] == pytest.approx(np.mean(fine[:2, :2]))
    assert coarse[1, 1] == pytest.approx(np.mean(fine[2:, 2:]))
    with pytest.raises(ValueError):
        restrict_block_mean(np.zeros((6, 6)), 4)


# ---------------------------------------------------------------------------
# simulate driver
# ---------------------------------------------------------------------------

def test_uniform_initial_is_stationary(tmp_path):
    from dataclasses import replace

    cfg = small_config()
    cfg = replace(cfg, initial=InitialSpec(center_u=0.5, amplitude=1e-30, seed=1))
    res = simulate(cfg, out_dir=str(tmp_path))
    assert res.completed
    energies = [r.energy for r in res.history]
    assert max(energies) - min(energies) <= 1e-13
    assert all(r.newton == 0 for r in res.history)


def test_fixed_run_history_consistency(tmp_path):
    cfg = small_config()
    res = simulate(cfg, out_dir=str(tmp_path))
    assert res.completed
    assert len(res.history) == 5  # initial row + 4 steps of 1e-4 to 4e-4
    rows = read_history(os.path.join(str(tmp_path), "history.csv"))
    assert [r.step for r in rows] == [0, 1, 2, 3, 4]
    times = [r.time for r in rows]
    assert all(b > a for a, b in zip(times, times[1:]))
    # mass conserved to round-off
    masses = [r.mass_u for r in rows]
    assert max(masses) - min(masses) <= 1e-12
    assert os.path.exists(os.path.join(str(tmp_path), "final.vtk"))


def test_simulate_reproducible_and_thread_invariant():
    cfg = small_config()
    runs = [simulate(cfg, threads=t) for t in (1, 1, 4)]
    base = runs[0].history
    for other in runs[1:]:
        assert len(other.history) == len(base)
        for a, b in zip(base, other.history):
            assert a.step == b.step
            assert a.time == b.time and a.dt == b.dt
            assert a.energy == b.energy
            assert a.mass_u == b.mass_u and a.max_abs_v == b.max_abs_v
            assert a.newton == b.newton and a.gmres == b.gmres


def test_snapshot_times(tmp_path):
    from dataclasses import replace

    cfg = small_config()
    cfg = replace(cfg, output=OutputSpec(snapshot_times=(2e-4,)))
    simulate(cfg, out_dir=str(tmp_path))
    assert os.path.exists(os.path.join(str(tmp_path), "snapshot_t0.0002.vtk"))


# ---------------------------------------------------------------------------
# CLI entry point
# ---------------------------------------------------------------------------

def test_cli_run_exit_codes(ini_file, tmp_path):
    out = str(tmp_path / "out")
    assert main(["run", "--config", ini_file, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "history.csv"))
    # config error path
    bad = tmp_path / "bad.ini"
    bad.write_text(BASE_INI + "\nnonsense = 1\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2


def test_cli_plot_data(ini_file, tmp_path):
    out = str(tmp_path / "out")
    assert main(["run", "--config", ini_file, "--out", out]) == 0
    plot_dir = str(tmp_path / "plots")
    assert main(["plot-data", "--history", os.path.join(out, "history.csv"), "--out", plot_dir]) == 0
    energy = np.loadtxt(os.path.join(plot_dir, "energy.dat"))
    assert energy.shape[1] == 2
    dt = np.loadtxt(os.path.join(plot_dir, "dt.dat"))
    assert np.all(dt[:, 1] == 1e-4)


def test_cli_seed_override(ini_file, tmp_path):
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    out3 = str(tmp_path / "c")
    assert main(["run", "--config", ini_file, "--out", out1, "--seed", "5"]) == 0
    assert main(["run", "--config", ini_file, "--out", out2, "--seed", "5"]) == 0
    assert main(["run", "--config", ini_file, "--out", out3, "--seed", "6"]) == 0

    def strip_wall(path):
        with open(os.path.join(path, "history.csv")) as fh:
            return [",".join(line.split(",")[:-1]) for line in fh]

    assert strip_wall(out1) == strip_wall(out2)
    assert strip_wall(out1) != strip_wall(out3)
