"""Run configuration: INI-style files parsed into validated dataclasses.

Every key is checked against a whitelist per section and converted with an
informative error; unknown sections or keys are rejected outright, so a typo
cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from ..exceptions import ConfigError
from ..grid import BoundaryCondition, Grid
from ..linalg import SchwarzVariant, SubdomainSolverSpec
from ..newton import NewtonConfig
from ..physics import Params
from ..timestep import StepController

INITIAL_KINDS = ("trigonometric", "random_uniform")


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "random_uniform"
    center_u: float = 0.55
    amplitude: float = 0.05
    seed: int = 1234

    def __post_init__(self):
        if self.kind not in INITIAL_KINDS:
            raise ConfigError(f"unknown initial condition {self.kind!r}")
        if self.kind == "random_uniform":
            lo_u = self.center_u - self.amplitude
            hi_u = self.center_u + self.amplitude
            if not (0.0 < lo_u - self.amplitude and hi_u + self.amplitude < 1.0):
                raise ConfigError(
                    "random initial condition can produce inadmissible states: "
                    f"u in [{lo_u:g}, {hi_u:g}] with |v| <= {self.amplitude:g}"
                )


@dataclass(frozen=True)
class TimeSpec:
    horizon: float
    mode: str = "adaptive"  # "adaptive" | "fixed"
    dt: float = 1e-4
    dt_min: float = 1e-4
    dt_max: float = 10.0
    eta: float | None = None  # None: 1e4 in 2D, 1e2 in 3D

    def __post_init__(self):
        if self.mode not in ("adaptive", "fixed"):
            raise ConfigError(f"time mode must be adaptive or fixed, got {self.mode!r}")
        if not self.horizon > 0.0:
            raise ConfigError("time horizon must be positive")


@dataclass(frozen=True)
class SolverSpec:
    preconditioner: SchwarzVariant = SchwarzVariant.LEFT_RAS
    overlap: int = 1
    subdomain_solver: SubdomainSolverSpec = SubdomainSolverSpec("ilu", 0)
    reuse: bool = True
    subdomains: int = 0  # 0: one subdomain per worker thread
    # refactor subdomain solves every K accepted steps; K=1 is the standard
    # refactor-at-every-step policy, larger K trades a few extra Krylov
    # iterations for far fewer factorizations on slow dynamics
    refreeze_every: int = 1
    rel_tol: float = 1e-6
    abs_tol: float = 1e-13
    lin_rel_tol: float = 1e-8
    lin_abs_tol: float = 1e-14
    max_newton: int = 50
    gmres_restart: int = 30
    max_linear_iterations: int = 500


@dataclass(frozen=True)
class OutputSpec:
    history: str = "history.csv"
    snapshot_times: tuple[float, ...] = ()
    snapshot_every: int = 0


@dataclass(frozen=True)
class RunConfig:
    grid: Grid
    params: Params
    initial: InitialSpec
    time: TimeSpec
    solver: SolverSpec = SolverSpec()
    output: OutputSpec = OutputSpec()

    @property
    def eta(self) -> float:
        if self.time.eta is not None:
            return self.time.eta
        return 1e4 if self.grid.dim == 2 else 1e2

    def make_controller(self) -> StepController:
        if self.time.mode == "fixed":
            return StepController(
                dt_min=self.time.dt, dt_max=self.time.dt, eta=self.eta, fixed_dt=self.time.dt
            )
        return StepController(dt_min=self.time.dt_min, dt_max=self.time.dt_max, eta=self.eta)

    def make_newton_config(self) -> NewtonConfig:
        s = self.solver
        return NewtonConfig(
            rel_tol=s.rel_tol,
            abs_tol=s.abs_tol,
            lin_rel_tol=s.lin_rel_tol,
            lin_abs_tol=s.lin_abs_tol,
            max_iterations=s.max_newton,
            gmres_restart=s.gmres_restart,
            max_linear_iterations=s.max_linear_iterations,
            reuse_factorization=s.reuse,
            refactor_on_entry=s.refreeze_every <= 1,
        )

    def with_grid(self, grid: Grid) -> "RunConfig":
        return replace(self, grid=grid)

    def with_time(self, **kw) -> "RunConfig":
        return replace(self, time=replace(self.time, **kw))

    def with_solver(self, **kw) -> "RunConfig":
        return replace(self, solver=replace(self.solver, **kw))

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, initial=replace(self.initial, seed=int(seed)))


# ---------------------------------------------------------------------------
# INI parsing
# ---------------------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SECTIONS = {
    "grid": {"cells", "lengths", "bc"},
    "physics": {"alpha", "beta", "gamma", "theta", "rho", "series_order"},
    "initial": {"kind", "center_u", "amplitude", "seed"},
    "time": {"horizon", "mode", "dt", "dt_min", "dt_max", "eta"},
    "solver": {
        "preconditioner", "overlap", "subdomain_solver", "reuse", "subdomains",
        "refreeze_every", "rel_tol", "abs_tol", "lin_rel_tol", "lin_abs_tol",
        "max_newton", "gmres_restart", "max_linear_iterations",
    },
    "output": {"history", "snapshot_times", "snapshot_every"},
}


def _get(section, key, conv, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default
    raw = section[key]
    try:
        return conv(raw)
    except (ValueError, KeyError) as err:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({err})") from err


def load_config(path: str) -> RunConfig:
    """Parse and fully validate an INI run configuration."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")

    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        extra = set(parser[name]) - _SECTIONS[name]
        if extra:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")

    if "grid" not in parser:
        raise ConfigError("missing required section [grid]")
    if "time" not in parser:
        raise ConfigError("missing required section [time]")

    g = parser["grid"]
    cells = _get(g, "cells", _ints, required=True)
    lengths = _get(g, "lengths", _floats, default=tuple(1.0 for _ in cells))
    bc_name = _get(g, "bc", str, default="neumann").strip().lower()
    try:
        bc = BoundaryCondition(bc_name)
    except ValueError as err:
        raise ConfigError(f"unknown boundary condition {bc_name!r}") from err
    try:
        grid = Grid(cells, lengths, bc)
    except ValueError as err:
        raise ConfigError(str(err)) from err

    p = parser["physics"] if "physics" in parser else {}
    try:
        params = Params(
            alpha=_get(p, "alpha", float, 4.0),
            beta=_get(p, "beta", float, 2.0),
            gamma=_get(p, "gamma", float, 0.005),
            theta=_get(p, "theta", float, 0.1),
            rho=_get(p, "rho", float, 0.001),
            series_order=_get(p, "series_order", int, 10),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err

    i = parser["initial"] if "initial" in parser else {}
    initial = InitialSpec(
        kind=_get(i, "kind", str, "random_uniform").strip().lower(),
        center_u=_get(i, "center_u", float, 0.55),
        amplitude=_get(i, "amplitude", float, 0.05),
        seed=_get(i, "seed", int, 1234),
    )
    if initial.kind == "trigonometric" and grid.dim != 2:
        raise ConfigError("trigonometric initial condition is 2D only")

    t = parser["time"]
    time_spec = TimeSpec(
        horizon=_get(t, "horizon", float, required=True),
        mode=_get(t, "mode", str, "adaptive").strip().lower(),
        dt=_get(t, "dt", float, 1e-4),
        dt_min=_get(t, "dt_min", float, 1e-4),
        dt_max=_get(t, "dt_max", float, 10.0),
        eta=_get(t, "eta", float, None),
    )

    s = parser["solver"] if "solver" in parser else {}
    try:
        variant = SchwarzVariant(_get(s, "preconditioner", str, "ras-left").strip().lower())
    except ValueError as err:
        raise ConfigError(f"unknown preconditioner ({err})") from err
    try:
        subsolver = SubdomainSolverSpec.from_string(_get(s, "subdomain_solver", str, "ilu0"))
    except ValueError as err:
        raise ConfigError(str(err)) from err
    solver = SolverSpec(
        preconditioner=variant,
        overlap=_get(s, "overlap", int, 1),
        subdomain_solver=subsolver,
        reuse=_get(s, "reuse", _bool, True),
        subdomains=_get(s, "subdomains", int, 0),
        refreeze_every=_get(s, "refreeze_every", int, 1),
        rel_tol=_get(s, "rel_tol", float, 1e-6),
        abs_tol=_get(s, "abs_tol", float, 1e-13),
        lin_rel_tol=_get(s, "lin_rel_tol", float, 1e-8),
        lin_abs_tol=_get(s, "lin_abs_tol", float, 1e-14),
        max_newton=_get(s, "max_newton", int, 50),
        gmres_restart=_get(s, "gmres_restart", int, 30),
        max_linear_iterations=_get(s, "max_linear_iterations", int, 500),
    )

    o = parser["output"] if "output" in parser else {}
    output = OutputSpec(
        history=_get(o, "history", str, "history.csv"),
        snapshot_times=_get(o, "snapshot_times", _floats, ()),
        snapshot_every=_get(o, "snapshot_every", int, 0),
    )

    return RunConfig(grid, params, initial, time_spec, solver, output)
