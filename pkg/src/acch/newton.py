"""Inexact Newton outer loop with line search and admissibility safeguards.

Each iteration assembles the analytic Jacobian, solves the correction system
with right-preconditioned GMRES and backtracks on the residual norm.  Any
trial state that leaves the admissible set is treated as infinite merit and
rejected, which keeps every entropy evaluation inside its domain.  All
failure modes are reported to the caller (the time step controller) instead
of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SchwarzPreconditioner, gmres
from .physics import State, check_admissible, is_admissible
from .scheme import (
    StepProblem,
    assemble_jacobian,
    residual_vector,
    trial_state,
    unpack_vector,
    vector_from_state,
)


@dataclass(frozen=True)
class NewtonConfig:
    """Nonlinear and linear tolerances plus line-search constants."""

    rel_tol: float = 1e-6
    abs_tol: float = 1e-13
    lin_rel_tol: float = 1e-8
    lin_abs_tol: float = 1e-14
    max_iterations: int = 50
    backtrack_factor: float = 0.5
    min_step: float = 1e-8
    sufficient_decrease: float = 1e-4
    gmres_restart: int = 30
    max_linear_iterations: int = 500
    reuse_factorization: bool = True
    # refactor at the first iteration of every solve (the standard policy);
    # False lets a still-valid factorization carry across time steps, with
    # the caller deciding when to invalidate the preconditioner
    refactor_on_entry: bool = True

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "lin_rel_tol", "lin_abs_tol", "min_step"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")


@dataclass
class SolveReport:
    converged: bool
    newton_iterations: int
    gmres_iterations: int
    residual_norm: float
    reason: str | None = None
    factorizations: int = 0


def should_refactor(newton_iteration: int, reuse_enabled: bool = True) -> bool:
    """Factorization policy: refactor on the first iteration of every step,
    reuse the frozen subdomain factors afterwards (when reuse is enabled)."""
    return newton_iteration == 0 or not reuse_enabled


def _feasible_step_cap(u, v, su, sv, margin: float, fraction: float = 0.9) -> float:
    """Largest step fraction keeping (u, v) + lam (su, sv) admissible.

    All admissibility bounds are affine in lam, so the cap is a minimum of
    per-cell ratios; ``fraction`` backs off from the exact boundary.  Returns
    at most 1.0.  Starting the backtracking inside the admissible set keeps
    Newton directions usable even when they are violently scaled, which
    happens for very large time steps.
    """
    sp, sq = su + sv, su - sv
    p, q = u + v, u - v
    cap = np.inf
    for value, slope, lo, hi in (
        (u, su, margin, 1.0 - margin),
        (p, sp, margin, 1.0 - margin),
        (q, sq, margin, 1.0 - margin),
        (v, sv, -0.5 + margin, 0.5 - margin),
    ):
        with np.errstate(divide="ignore", invalid="ignore"):
            dec = np.where(slope < 0.0, (value - lo) / -slope, np.inf)
            inc = np.where(slope > 0.0, (hi - value) / slope, np.inf)
        cap = min(cap, float(np.min(dec)), float(np.min(inc)))
    if not np.isfinite(cap):
        return 1.0
    return min(1.0, fraction * cap)


def newton_solve(
    prob: StepProblem,
    x0: State,
    config: NewtonConfig,
    precond: SchwarzPreconditioner,
    trace: list | None = None,
) -> tuple[State, SolveReport]:
    """Solve the implicit step F(X) = 0 starting from x0 (the old solution).

    Returns the final state together with a report; ``converged`` is False
    when Newton hits its iteration cap, the line search stalls below its
    minimum step, or GMRES fails, and the reason field says which.  When a
    list is passed as ``trace`` the residual norm of every visited iterate is
    appended to it.
    """
    check_admissible(x0)
    current = x0.copy()
    current.fill_ghosts()
    x_vec = vector_from_state(current)
    f_vec = residual_vector(prob, current)
    f_norm = float(np.linalg.norm(f_vec))
    stop_tol = max(config.rel_tol * f_norm, config.abs_tol)

    gmres_total = 0
    factorizations = 0
    for m in range(config.max_iterations + 1):
        if trace is not None:
            trace.append(f_norm)
        if f_norm <= stop_tol:
            return current, SolveReport(
                True, m, gmres_total, f_norm, None, factorizations
            )
        if m == config.max_iterations:
            break

        jac = assemble_jacobian(prob, current)
        if m == 0:
            reuse_now = not config.refactor_on_entry
        else:
            reuse_now = config.reuse_factorization
        refactored = precond.update(jac, reuse=reuse_now)
        factorizations += int(refactored)
        lin = gmres(
            jac.matvec,
            -f_vec,
            precond=precond,
            rel_tol=config.lin_rel_tol,
            abs_tol=config.lin_abs_tol,
            restart=config.gmres_restart,
            max_iterations=config.max_linear_iterations,
        )
        gmres_total += lin.iterations
        if not lin.converged:
            return current, SolveReport(
                False, m, gmres_total, f_norm, "linear_solve_failed", factorizations
            )

        step = lin.x
        su, sv = unpack_vector(prob.grid, step)
        lam = _feasible_step_cap(
            current.u.interior, current.v.interior, su, sv, margin=1e-12
        )
        accepted = False
        while lam >= config.min_step:
            candidate = trial_state(prob.grid, x_vec, step, lam)
            if is_admissible(candidate):
                f_trial = residual_vector(prob, candidate)
                f_trial_norm = float(np.linalg.norm(f_trial))
                if f_trial_norm <= (1.0 - config.sufficient_decrease * lam) * f_norm:
                    accepted = True
                    break
            lam *= config.backtrack_factor
        if not accepted:
            return current, SolveReport(
                False, m, gmres_total, f_norm, "line_search_stalled", factorizations
            )

        current = candidate
        x_vec = x_vec + lam * step
        f_vec = f_trial
        f_norm = f_trial_norm

    return current, SolveReport(
        False, config.max_iterations, gmres_total, f_norm, "max_newton_iterations", factorizations
    )
