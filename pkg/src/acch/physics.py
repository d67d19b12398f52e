"""Constitutive functions for the coupled phase separation / ordering model.

The free energy density splits into a polynomial bulk part, a logarithmic
mixing entropy theta * (Phi(u+v) + Phi(u-v)) with Phi(z) = z ln z +
(1-z) ln(1-z), and a gradient part.  The entropy restricts admissible states
to open intervals: u in (0,1), |v| < 1/2, and u +- v in (0,1).

The key numerical kernel here is :func:`entropy_chord`, the divided
difference (Phi(a) - Phi(b)) / (a - b).  Evaluated naively it is
catastrophically inaccurate for a ~ b, so near-coincident arguments are
rerouted through a truncated Taylor expansion of the symmetric chord of
z ln z about the midpoint (see :func:`xlnx_chord_series`).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import DomainError, InadmissibleStateError
from .grid import Field, FaceField, Grid, face_average, fill_ghosts, grad_sq_avg, integrate, laplacian

#: States are rejected when any admissibility quantity falls below this.
ADMISSIBILITY_MARGIN = 1e-12

#: The chord switches from the direct quotient to the midpoint series when
#: |sigma| <= CHORD_BRANCH_FACTOR * min(zeta, 1 - zeta).  With series order
#: 10 the factor 0.4 keeps the truncation error of each half below 1e-11,
#: while the direct quotient stays well conditioned outside that region.
CHORD_BRANCH_FACTOR = 0.4


@dataclass(frozen=True)
class Params:
    """Physical coefficients and the entropy series order.

    alpha, beta : nearest / next-nearest neighbor interaction coefficients
    gamma : gradient energy coefficient
    theta : entropy coefficient
    rho : density constant in the order parameter equation
    series_order : truncation order of the entropy chord expansion
    """

    alpha: float
    beta: float
    gamma: float
    theta: float
    rho: float
    series_order: int = 10

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "theta", "rho"):
            if not (float(getattr(self, name)) > 0.0):
                raise ValueError(f"{name} must be strictly positive")
        if int(self.series_order) < 1:
            raise ValueError("series_order must be >= 1")


@dataclass
class State:
    """Pair of a conserved concentration u and a non-conserved order parameter v."""

    u: Field
    v: Field

    def __post_init__(self):
        if self.u.grid is not self.v.grid and self.u.grid != self.v.grid:
            raise ValueError("u and v must live on the same grid")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def from_interior(cls, grid: Grid, u: np.ndarray, v: np.ndarray) -> "State":
        return cls(Field.from_interior(grid, u), Field.from_interior(grid, v))

    def copy(self) -> "State":
        return State(self.u.copy(), self.v.copy())

    def fill_ghosts(self) -> "State":
        fill_ghosts(self.u)
        fill_ghosts(self.v)
        return self


def admissibility_gap(u: np.ndarray, v: np.ndarray) -> float:
    """Smallest distance of (u, v) from the admissible-set boundary.

    Returns min over cells of u, 1-u, u+v, 1-(u+v), u-v, 1-(u-v), 1/2-v,
    1/2+v; the state is admissible when this is positive.
    """
    p = u + v
    q = u - v
    gap = min(
        float(np.min(u)),
        float(np.min(1.0 - u)),
        float(np.min(p)),
        float(np.min(1.0 - p)),
        float(np.min(q)),
        float(np.min(1.0 - q)),
        float(np.min(0.5 - v)),
        float(np.min(0.5 + v)),
    )
    if np.isnan(gap):
        return -np.inf
    return gap


def is_admissible(state: State, margin: float = ADMISSIBILITY_MARGIN) -> bool:
    return admissibility_gap(state.u.interior, state.v.interior) >= margin


def check_admissible(state: State, margin: float = ADMISSIBILITY_MARGIN) -> None:
    gap = admissibility_gap(state.u.interior, state.v.interior)
    if not gap >= margin:
        raise InadmissibleStateError(
            f"state violates admissibility bounds (gap {gap:.3e} < margin {margin:.1e})"
        )


def mobility(u, v):
    """Degenerate mobility c(u, v) = u (1 - u) (1/4 - v^2).

    Vanishes at the pure phases u in {0, 1} and at |v| = 1/2 and is
    nonnegative on the admissible set.
    """
    return u * (1.0 - u) * (0.25 - v * v)


def mobility_derivs(u, v):
    """Partial derivatives (dc/du, dc/dv) of the mobility."""
    return (1.0 - 2.0 * u) * (0.25 - v * v), -2.0 * v * u * (1.0 - u)


def mobility_faces(u: Field, v: Field) -> list[FaceField]:
    """Face mobilities: arithmetic mean of the two adjacent cell mobilities.

    Ghosts of u and v are (re)filled first, so boundary faces see mirrored or
    wrapped neighbor cells consistent with the grid's boundary condition.
    """
    fill_ghosts(u)
    fill_ghosts(v)
    c = Field(u.grid, mobility(u.values, v.values))
    return face_average(c)


def _as_array(z) -> np.ndarray:
    return np.asarray(z, dtype=float)


def _maybe_scalar(out: np.ndarray, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(out)
    return out


def entropy(z):
    """Mixing entropy Phi(z) = z ln z + (1 - z) ln(1 - z), for z in (0, 1)."""
    z = _as_array(z)
    if np.any(z <= 0.0) or np.any(z >= 1.0):
        raise DomainError("entropy argument must lie strictly inside (0, 1)")
    out = z * np.log(z) + (1.0 - z) * np.log1p(-z)
    return _maybe_scalar(out, z)


def entropy_prime(z):
    """Phi'(z) = ln(z / (1 - z)), for z in (0, 1)."""
    z = _as_array(z)
    if np.any(z <= 0.0) or np.any(z >= 1.0):
        raise DomainError("entropy argument must lie strictly inside (0, 1)")
    out = np.log(z) - np.log1p(-z)
    return _maybe_scalar(out, z)


@lru_cache(maxsize=32)
def _chord_coeffs(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Series coefficients: 1/((2s+1) 2s) for the chord, 1/(2s+1) for derivatives."""
    s = np.arange(1, order + 1, dtype=float)
    return 1.0 / ((2.0 * s + 1.0) * 2.0 * s), 1.0 / (2.0 * s + 1.0)


def _poly_eval(coeffs: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Horner evaluation of sum_s coeffs[s-1] * t^s (no constant term)."""
    acc = np.zeros_like(t)
    for c in coeffs[::-1]:
        acc = (acc + c) * t
    return acc


def xlnx_chord_series(x, sigma, order: int):
    """Series value of the symmetric chord of z ln z through x +- sigma.

    Approximates ((x+sigma) ln(x+sigma) - (x-sigma) ln(x-sigma)) / (2 sigma)
    by ln x + 1 - sum_{s=1}^{order} (sigma/x)^(2s) / ((2s+1) 2s), which is the
    Taylor expansion about the midpoint and is even in sigma.  The leading
    "+1" makes the series converge to d/dx (x ln x) as sigma -> 0.
    """
    x = _as_array(x)
    sigma = _as_array(sigma)
    if np.any(x <= 0.0):
        raise DomainError("chord midpoint must be positive")
    r = sigma / x
    if np.any(np.abs(r) > 0.5):
        raise DomainError("chord series requires |sigma/x| <= 1/2")
    coeffs, _ = _chord_coeffs(int(order))
    out = np.log(x) + 1.0 - _poly_eval(coeffs, r * r)
    return _maybe_scalar(out, x, sigma)


def _chord_masks(zeta, sigma, force_exact: bool):
    exact = sigma == 0.0
    if force_exact:
        near = np.zeros_like(exact)
    else:
        near = (np.abs(sigma) <= CHORD_BRANCH_FACTOR * np.minimum(zeta, 1.0 - zeta)) & ~exact
    far = ~(exact | near)
    return exact, near, far


def entropy_chord(a, b, order: int = 10, force_exact: bool = False):
    """Divided difference (Phi(a) - Phi(b)) / (a - b) for a, b in (0, 1).

    Coincident arguments return Phi'(a) exactly.  Near-coincident arguments
    (relative to the midpoint's distance from the interval ends) are computed
    from the midpoint series, which by the identity for zeta = (a+b)/2 and
    sigma = (a-b)/2 equals f(zeta, sigma) - f(1-zeta, sigma) with f the
    symmetric chord of z ln z.  Everything else uses the direct quotient.

    force_exact disables the series branch (used to probe the exact-quotient
    identity in tests); coincident arguments still return Phi'(a).
    """
    a = _as_array(a)
    b = _as_array(b)
    if np.any(a <= 0.0) or np.any(a >= 1.0) or np.any(b <= 0.0) or np.any(b >= 1.0):
        raise DomainError("entropy chord arguments must lie strictly inside (0, 1)")
    a, b = np.broadcast_arrays(a, b)
    zeta = 0.5 * (a + b)
    sigma = 0.5 * (a - b)
    exact, near, far = _chord_masks(zeta, sigma, force_exact)

    out = np.empty_like(zeta)
    if np.any(exact):
        z = zeta[exact]
        out[exact] = np.log(z) - np.log1p(-z)
    if np.any(near):
        z, s = zeta[near], sigma[near]
        coeffs, _ = _chord_coeffs(int(order))
        rz = s / z
        rw = s / (1.0 - z)
        out[near] = (
            np.log(z)
            - np.log1p(-z)
            - _poly_eval(coeffs, rz * rz)
            + _poly_eval(coeffs, rw * rw)
        )
    if np.any(far):
        af, bf = a[far], b[far]
        out[far] = (entropy(af) - entropy(bf)) / (af - bf)
    return _maybe_scalar(out, a, b)


def entropy_chord_with_deriv(a, b, order: int = 10, force_exact: bool = False):
    """Chord value together with its partial derivative in the first argument.

    The derivative follows each branch analytically: term-wise in the series
    region, quotient rule in the direct region, and Phi''(a)/2 in the
    coincident limit.
    """
    a = _as_array(a)
    b = _as_array(b)
    if np.any(a <= 0.0) or np.any(a >= 1.0) or np.any(b <= 0.0) or np.any(b >= 1.0):
        raise DomainError("entropy chord arguments must lie strictly inside (0, 1)")
    a, b = np.broadcast_arrays(a, b)
    zeta = 0.5 * (a + b)
    sigma = 0.5 * (a - b)
    exact, near, far = _chord_masks(zeta, sigma, force_exact)

    val = np.empty_like(zeta)
    der = np.empty_like(zeta)
    if np.any(exact):
        z = zeta[exact]
        val[exact] = np.log(z) - np.log1p(-z)
        der[exact] = 0.5 * (1.0 / z + 1.0 / (1.0 - z))
    if np.any(near):
        z, s = zeta[near], sigma[near]
        w = 1.0 - z
        coeffs, dcoeffs = _chord_coeffs(int(order))
        rz, rw = s / z, s / w
        tz, tw = rz * rz, rw * rw
        val[near] = np.log(z) - np.log1p(-z) - _poly_eval(coeffs, tz) + _poly_eval(coeffs, tw)
        # f_x(x, s) = (1 + sum_s t^s/(2s+1)) / x ; f_sigma(x, s) = -(r/x) sum_s t^(s-1)/(2s+1)
        qz = _poly_eval(dcoeffs, tz)
        qw = _poly_eval(dcoeffs, tw)
        fx_z = (1.0 + qz) / z
        fx_w = (1.0 + qw) / w
        # sigma is nonzero here; coincident pairs took the exact branch above
        fs_z = -qz / s
        fs_w = -qw / s
        der[near] = 0.5 * (fx_z + fs_z + fx_w - fs_w)
    if np.any(far):
        af, bf = a[far], b[far]
        chord = (entropy(af) - entropy(bf)) / (af - bf)
        val[far] = chord
        der[far] = (entropy_prime(af) - chord) / (af - bf)
    if np.ndim(a) == 0:
        return float(val), float(der)
    return val, der


def local_energy(u, v, grad_sq_u, grad_sq_v, params: Params):
    """Pointwise free energy density.

    e1 = (alpha/2) u (1 - u) - (beta/2) v^2, e2 = theta (Phi(u+v) + Phi(u-v)),
    plus (gamma/2) (|grad u|^2 + |grad v|^2) with the supplied discrete
    gradient squares.
    """
    e1 = 0.5 * params.alpha * u * (1.0 - u) - 0.5 * params.beta * v * v
    e2 = params.theta * (entropy(u + v) + entropy(u - v))
    return e1 + e2 + 0.5 * params.gamma * (grad_sq_u + grad_sq_v)


def total_energy(state: State, params: Params) -> float:
    """Discrete total free energy: <e> over all cells."""
    state.fill_ghosts()
    gsu = grad_sq_avg(state.u)
    gsv = grad_sq_avg(state.v)
    e = local_energy(state.u.interior, state.v.interior, gsu, gsv, params)
    return integrate(state.grid, e)


def var_deriv(state: State, params: Params) -> tuple[Field, Field]:
    """Variational derivative of the free energy, discrete Laplacian inside.

    G_u = -alpha (u - 1/2) + theta (Phi'(u+v) + Phi'(u-v)) - gamma lap(u)
    G_v = -beta v + theta (Phi'(u+v) - Phi'(u-v)) - gamma lap(v)

    Used for diagnostics and as the coincident-argument limit of the discrete
    variational derivative.
    """
    state.fill_ghosts()
    grid = state.grid
    u = state.u.interior
    v = state.v.interior
    pp = entropy_prime(u + v)
    pq = entropy_prime(u - v)
    gu = -params.alpha * (u - 0.5) + params.theta * (pp + pq) - params.gamma * laplacian(state.u)
    gv = -params.beta * v + params.theta * (pp - pq) - params.gamma * laplacian(state.v)
    return Field.from_interior(grid, gu), Field.from_interior(grid, gv)
