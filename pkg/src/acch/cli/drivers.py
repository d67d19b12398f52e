"""Simulation loop and experiment drivers (convergence, benchmarks, scaling)."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace

import numpy as np

from ..exceptions import ConfigError, SolverStallError
from ..grid import Grid, integrate
from ..linalg import SchwarzPreconditioner, partition
from ..newton import newton_solve
from ..parallel import WorkerPool
from ..physics import State, total_energy
from ..scheme import StepProblem, vector_from_state
from ..timestep import StepController
from .config import RunConfig
from .io import HistoryRow, HistoryWriter, write_vtk

COMPLETED = "completed"
STALLED = "stalled"


def build_initial_state(config: RunConfig) -> State:
    """Construct the configured initial condition on the configured grid.

    random_uniform draws u then v from one seeded generator in a fixed order,
    so a (config, seed) pair reproduces the same fields bit for bit.
    """
    grid = config.grid
    spec = config.initial
    if spec.kind == "trigonometric":
        if grid.dim != 2:
            raise ConfigError("trigonometric initial condition is 2D only")
        x, y = grid.center_mesh()
        sx = np.sin(2.0 * np.pi * x) ** 2
        cy = np.cos(2.0 * np.pi * y) ** 2
        u = 0.4 * (sx + cy) + 0.1
        v = 0.4 * (sx - cy)
    else:
        rng = np.random.default_rng(spec.seed)
        u = spec.center_u + rng.uniform(-spec.amplitude, spec.amplitude, grid.array_shape)
        v = rng.uniform(-spec.amplitude, spec.amplitude, grid.array_shape)
    return State.from_interior(grid, u, v)


@dataclass
class SimulationResult:
    status: str
    history: list[HistoryRow]
    final_state: State
    controller: StepController
    factorizations: int = 0

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED


def _state_row(step, t, dt, state, config, newton, gmres, wall) -> HistoryRow:
    return HistoryRow(
        step=step,
        time=t,
        dt=dt,
        energy=total_energy(state, config.params),
        mass_u=integrate(config.grid, state.u.interior),
        max_abs_v=float(np.max(np.abs(state.v.interior))),
        newton=newton,
        gmres=gmres,
        wall_s=wall,
    )


def simulate(
    config: RunConfig,
    threads: int = 1,
    out_dir: str | None = None,
    snapshot_every: int = 0,
    max_steps: int | None = None,
) -> SimulationResult:
    """Advance the configured problem from t = 0 to the horizon.

    Writes the history CSV incrementally (flushed per step) and field
    snapshots when requested; on a solver stall the partial outputs are kept
    and the result carries status "stalled".
    """
    grid = config.grid
    state = build_initial_state(config)
    controller = config.make_controller()
    n_sub = config.solver.subdomains or threads
    decomposition = partition(grid, n_sub, config.solver.overlap)
    newton_cfg = config.make_newton_config()
    snapshot_every = snapshot_every or config.output.snapshot_every
    pending_snapshots = sorted(config.output.snapshot_times)

    writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        writer = HistoryWriter(os.path.join(out_dir, config.output.history))

    history: list[HistoryRow] = []

    def emit(row: HistoryRow):
        history.append(row)
        if writer is not None:
            writer.write(row)

    status = COMPLETED
    factorizations = 0
    with WorkerPool(threads) as pool:
        precond = SchwarzPreconditioner(
            decomposition, config.solver.preconditioner, config.solver.subdomain_solver, pool
        )
        emit(_state_row(0, 0.0, 0.0, state, config, 0, 0, 0.0))

        t = 0.0
        step = 0
        dt_prev = None
        x_now = vector_from_state(state)
        x_prev = None
        steps_since_refreeze = 0
        refreeze_every = max(1, config.solver.refreeze_every)
        horizon = config.time.horizon
        while t < horizon * (1.0 - 1e-12):
            if max_steps is not None and step >= max_steps:
                break
            step += 1
            if step == 1 or x_prev is None:
                dt = controller.initial_dt()
            else:
                dt = controller.predict_dt(x_now, x_prev, dt_prev)

            if steps_since_refreeze >= refreeze_every:
                precond.invalidate()
                steps_since_refreeze = 0

            wall_start = time.perf_counter()
            newton_count = 0
            gmres_count = 0
            try:
                while True:
                    prob = StepProblem.create(grid, config.params, state, dt)
                    new_state, report = newton_solve(prob, state, newton_cfg, precond)
                    newton_count += report.newton_iterations
                    gmres_count += report.gmres_iterations
                    factorizations += report.factorizations
                    if report.converged:
                        break
                    dt = controller.on_divergence(dt)
                    # a retried step solves a different system; start fresh
                    precond.invalidate()
                    steps_since_refreeze = 0
            except SolverStallError:
                status = STALLED
                break
            steps_since_refreeze += 1
            controller.note_success()
            wall = time.perf_counter() - wall_start

            t += dt
            x_prev = x_now
            x_now = vector_from_state(new_state)
            dt_prev = dt
            state = new_state
            emit(_state_row(step, t, dt, state, config, newton_count, gmres_count, wall))

            if out_dir is not None:
                while pending_snapshots and t >= pending_snapshots[0] * (1.0 - 1e-12):
                    target = pending_snapshots.pop(0)
                    write_vtk(
                        state,
                        os.path.join(out_dir, f"snapshot_t{target:g}.vtk"),
                        title=f"state at t={t:.10g} (requested {target:g})",
                    )
                if snapshot_every and step % snapshot_every == 0:
                    write_vtk(state, os.path.join(out_dir, f"step_{step:06d}.vtk"))

    if writer is not None:
        writer.close()
    if out_dir is not None:
        write_vtk(state, os.path.join(out_dir, "final.vtk"), title="final state")
    return SimulationResult(status, history, state, controller, factorizations)


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

def restrict_block_mean(values: np.ndarray, factor: int) -> np.ndarray:
    """Average factor^d fine cells onto each coarse cell (nested grids)."""
    if factor == 1:
        return values.copy()
    shape = []
    for n in values.shape:
        if n % factor:
            raise ValueError(f"axis of {n} cells is not divisible by {factor}")
        shape.extend([n // factor, factor])
    out = values.reshape(shape)
    for axis in range(len(values.shape), 0, -1):
        out = out.mean(axis=2 * axis - 1)
    return out


def relative_l2_error(u, v, u_ref, v_ref) -> float:
    num = np.sum((u - u_ref) ** 2 + (v - v_ref) ** 2)
    den = np.sum(u_ref**2 + v_ref**2)
    return float(np.sqrt(num / den))


@dataclass
class ConvergenceReport:
    labels: list[float]
    errors: list[float]
    order: float

    def to_csv(self) -> str:
        lines = ["resolution,error"]
        lines += [f"{lab:g},{err:.17g}" for lab, err in zip(self.labels, self.errors)]
        lines.append(f"order,{self.order:.17g}")
        return "\n".join(lines) + "\n"


def _square_grid(base: Grid, n: int) -> Grid:
    return Grid(tuple(n for _ in base.counts), base.lengths, base.bc)


def _check_nested(coarse: int, fine: int):
    if fine % coarse:
        raise ConfigError(f"meshes not nested: {fine} is not a multiple of {coarse}")
    ratio = fine // coarse
    if ratio & (ratio - 1):
        raise ConfigError(f"meshes not factor-2 nested: ratio {ratio} is not a power of two")


def converge_space(
    config: RunConfig,
    meshes: list[int],
    reference_mesh: int,
    dt: float,
    horizon: float,
    threads: int = 1,
) -> ConvergenceReport:
    """Spatial self-convergence against a finer reference solution.

    All runs share the fixed time step; the reference is restricted onto each
    coarse mesh by block averaging before the joint (u, v) relative l2 error
    is taken.  The reported order is the least-squares slope of log error
    against log spacing.
    """
    for m in meshes:
        _check_nested(m, reference_mesh)
        if m >= reference_mesh:
            raise ConfigError("reference mesh must be strictly finer than every test mesh")
    base = config.with_time(mode="fixed", dt=dt, horizon=horizon)
    ref = simulate(base.with_grid(_square_grid(config.grid, reference_mesh)), threads=threads)
    if not ref.completed:
        raise SolverStallError("reference run stalled")
    u_ref = ref.final_state.u.interior
    v_ref = ref.final_state.v.interior

    errors = []
    for m in meshes:
        res = simulate(base.with_grid(_square_grid(config.grid, m)), threads=threads)
        if not res.completed:
            raise SolverStallError(f"run on mesh {m} stalled")
        factor = reference_mesh // m
        err = relative_l2_error(
            res.final_state.u.interior,
            res.final_state.v.interior,
            restrict_block_mean(u_ref, factor),
            restrict_block_mean(v_ref, factor),
        )
        errors.append(err)
    spacings = [1.0 / m for m in meshes]
    order = float(np.polyfit(np.log(spacings), np.log(errors), 1)[0])
    return ConvergenceReport([float(m) for m in meshes], errors, order)


def converge_time(
    config: RunConfig,
    dts: list[float],
    reference_dt: float,
    horizon: float,
    threads: int = 1,
) -> ConvergenceReport:
    """Temporal self-convergence on a fixed mesh against a small-step run."""
    for dt in list(dts) + [reference_dt]:
        steps = horizon / dt
        if abs(steps - round(steps)) > 1e-6 * steps:
            raise ConfigError(f"horizon {horizon:g} is not a whole number of steps of {dt:g}")
    if min(dts) <= reference_dt:
        raise ConfigError("reference dt must be strictly smaller than every test dt")
    base = config.with_time(mode="fixed", dt=reference_dt, horizon=horizon)
    ref = simulate(base, threads=threads)
    if not ref.completed:
        raise SolverStallError("reference run stalled")
    u_ref = ref.final_state.u.interior
    v_ref = ref.final_state.v.interior

    errors = []
    for dt in dts:
        res = simulate(base.with_time(dt=dt), threads=threads)
        if not res.completed:
            raise SolverStallError(f"run with dt={dt:g} stalled")
        errors.append(
            relative_l2_error(res.final_state.u.interior, res.final_state.v.interior, u_ref, v_ref)
        )
    order = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    return ConvergenceReport(list(dts), errors, order)


# ---------------------------------------------------------------------------
# solver benchmarks
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    label: str
    steps: int
    newton_total: int
    gmres_total: int
    wall_s: float
    status: str

    @property
    def gmres_per_newton(self) -> float:
        return self.gmres_total / max(self.newton_total, 1)

    def to_csv(self) -> str:
        return (
            f"{self.label},{self.steps},{self.newton_total},{self.gmres_total},"
            f"{self.gmres_per_newton:.3f},{self.wall_s:.6f},{self.status}"
        )


BENCH_HEADER = "case,steps,newton_total,gmres_total,gmres_per_newton,wall_s,status"


def default_bench_cases() -> list[dict]:
    """Subdomain-solver sweep plus preconditioner/overlap sweep."""
    from ..linalg import SchwarzVariant, SubdomainSolverSpec

    cases = []
    for solver in ("ilu0", "ilu1", "ilu2", "lu"):
        cases.append(
            dict(
                label=f"asm-d1-{solver}",
                preconditioner=SchwarzVariant.CLASSICAL,
                overlap=1,
                subdomain_solver=SubdomainSolverSpec.from_string(solver),
                reuse=False,
            )
        )
    cases.append(
        dict(
            label="asm-d1-ilu0-reuse",
            preconditioner=SchwarzVariant.CLASSICAL,
            overlap=1,
            subdomain_solver=SubdomainSolverSpec.from_string("ilu0"),
            reuse=True,
        )
    )
    for variant, name in (
        (SchwarzVariant.CLASSICAL, "asm"),
        (SchwarzVariant.LEFT_RAS, "ras-left"),
        (SchwarzVariant.RIGHT_RAS, "ras-right"),
    ):
        overlaps = (0, 1, 2) if variant is SchwarzVariant.CLASSICAL else (1, 2)
        for ov in overlaps:
            label = f"{name}-d{ov}-ilu0-reuse"
            if label == "asm-d1-ilu0-reuse":
                continue
            cases.append(
                dict(
                    label=label,
                    preconditioner=variant,
                    overlap=ov,
                    subdomain_solver=SubdomainSolverSpec.from_string("ilu0"),
                    reuse=True,
                )
            )
    return cases


def bench_precond(
    config: RunConfig,
    cases: list[dict] | None = None,
    steps: int = 10,
    dt: float = 1e-4,
    threads: int = 1,
) -> list[BenchRow]:
    """Time a fixed number of steps for each solver configuration.

    Every case starts from the same seeded initial state.  A failing case is
    recorded with its status and the sweep continues.
    """
    if cases is None:
        cases = default_bench_cases()
    base = config.with_time(mode="fixed", dt=dt, horizon=steps * dt * 2)
    rows = []
    for case in cases:
        case = dict(case)
        label = case.pop("label")
        cfg = base.with_solver(**case)
        start = time.perf_counter()
        try:
            res = simulate(cfg, threads=threads, max_steps=steps)
            status = res.status
            done = len(res.history) - 1
            newton = sum(r.newton for r in res.history)
            gm = sum(r.gmres for r in res.history)
        except Exception as err:  # record and continue
            status = f"error:{type(err).__name__}"
            done, newton, gm = 0, 0, 0
        rows.append(BenchRow(label, done, newton, gm, time.perf_counter() - start, status))
    return rows


def bench_scale(
    config: RunConfig,
    thread_list: list[int],
    steps: int = 10,
    dt: float = 1e-4,
    mode: str = "strong",
) -> list[BenchRow]:
    """Fixed-size (strong) or fixed-work-per-thread (weak) scaling sweep.

    One subdomain per thread, as in the underlying method's one-core-per-
    subdomain setup.  Weak mode doubles the mesh alternately per axis, so
    thread counts must be powers of two.
    """
    if mode not in ("strong", "weak"):
        raise ConfigError("scaling mode must be strong or weak")
    base = config.with_time(mode="fixed", dt=dt, horizon=steps * dt * 2)
    rows = []
    for nt in thread_list:
        cfg = base.with_solver(subdomains=nt)
        if mode == "weak":
            k = int(round(np.log2(nt)))
            if 2**k != nt:
                raise ConfigError("weak scaling needs power-of-two thread counts")
            counts = list(config.grid.counts)
            for axis in range(k):
                counts[axis % len(counts)] *= 2
            cfg = cfg.with_grid(Grid(tuple(counts), config.grid.lengths, config.grid.bc))
        start = time.perf_counter()
        res = simulate(cfg, threads=nt, max_steps=steps)
        wall = time.perf_counter() - start
        rows.append(
            BenchRow(
                f"{mode}-threads{nt}",
                len(res.history) - 1,
                sum(r.newton for r in res.history),
                sum(r.gmres for r in res.history),
                wall,
                res.status,
            )
        )
    return rows
