"""Adaptive time step control driven by the solution change rate.

The predictor shrinks the step toward dt_min when the solution moves fast
and relaxes it toward dt_max as the dynamics slow:

    dt = max(dt_min, dt_max / sqrt(1 + eta * rate^2)),

with rate the root-mean-square change per unit time over the previous step.
On a nonlinear-solver divergence the pending step shrinks by sqrt(2) and the
gain eta doubles, permanently; eta never resets, so repeated trouble makes
the controller more cautious for the rest of the run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SolverStallError


@dataclass
class StepController:
    """Time step selection state.

    ``fixed_dt`` switches the controller to fixed-step mode, in which a
    solver divergence is immediately fatal (there is no smaller step to try).
    """

    dt_min: float
    dt_max: float
    eta: float
    fixed_dt: float | None = None
    max_retries_at_min: int = 5

    def __post_init__(self):
        if not (0.0 < self.dt_min <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_max")
        if not self.eta > 0.0:
            raise ValueError("eta must be positive")
        if self.fixed_dt is not None and not self.fixed_dt > 0.0:
            raise ValueError("fixed_dt must be positive")
        self._stalled_retries = 0
        self.divergence_count = 0

    @property
    def adaptive(self) -> bool:
        return self.fixed_dt is None

    def initial_dt(self) -> float:
        """First step size: dt_min in adaptive mode, else the fixed step."""
        return self.dt_min if self.adaptive else self.fixed_dt

    def predict_dt(self, x_now: np.ndarray, x_prev: np.ndarray, dt_prev: float) -> float:
        """Step size proposal from the two most recent accepted states."""
        if not self.adaptive:
            return self.fixed_dt
        diff = x_now - x_prev
        rate = float(np.sqrt(np.mean(diff * diff))) / dt_prev
        dt = max(self.dt_min, self.dt_max / np.sqrt(1.0 + self.eta * rate * rate))
        return min(dt, self.dt_max)

    def on_divergence(self, dt: float) -> float:
        """Shrink the pending step by sqrt(2), double eta, and count stalls.

        Raises SolverStallError after ``max_retries_at_min`` consecutive
        divergences that already ran at dt_min, or on any divergence in
        fixed-step mode.
        """
        if not self.adaptive:
            raise SolverStallError(
                f"nonlinear solve diverged at fixed step {self.fixed_dt:g}"
            )
        self.divergence_count += 1
        self.eta *= 2.0
        at_min = dt <= self.dt_min * (1.0 + 1e-12)
        if at_min:
            self._stalled_retries += 1
            if self._stalled_retries >= self.max_retries_at_min:
                raise SolverStallError(
                    f"nonlinear solve diverged {self._stalled_retries} times at dt_min"
                )
        else:
            self._stalled_retries = 0
        return max(self.dt_min, dt / np.sqrt(2.0))

    def note_success(self) -> None:
        self._stalled_retries = 0
