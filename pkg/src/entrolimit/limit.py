"""Reference solver for the two-phase limit system.

Pressureless Euler with drag and self-consistent field for the particle
phase, isentropic compressible Navier-Stokes for the fluid phase:

    d_t rho_f + div(rho_f u_f) = 0
    d_t omega + div(rho_f u_f x u_f) = rho_f (u - u_f) - rho_f grad(K * (rho_f - 1))
    d_t rho   + div(rho u) = 0
    d_t m     + div(rho u x u) + grad(rho^gamma) - lap(u) = rho_f (u_f - u)

Spatial derivatives are centered second-order differences; time stepping is
classical RK4.  The drag source is evaluated once and added with opposite
signs to the two momentum equations, so the discrete two-phase momentum
changes only by the electric-field impulse.  Accuracy over shock robustness:
runs are short-time smooth, and a gradient sentinel aborts integration once
the pressureless phase steepens beyond trust.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import PhaseGrid, centered_diff, laplacian
from .poisson import solve_poisson


class SmoothnessLostError(RuntimeError):
    pass


VACUUM_FLOOR_REL = 1e-12


@dataclass
class LimitState:
    rho_f: np.ndarray        # spatial_shape, >= 0
    omega: np.ndarray        # spatial_shape + (dim,), rho_f * u_f
    rho: np.ndarray          # spatial_shape, > 0
    m: np.ndarray            # spatial_shape + (dim,), rho * u
    gamma: float

    def u_f(self) -> np.ndarray:
        floor = VACUUM_FLOOR_REL * max(float(self.rho_f.mean()), 0.0)
        vac = self.rho_f <= floor
        safe = np.where(vac, 1.0, self.rho_f)
        u = self.omega / safe[..., None]
        u[vac] = 0.0
        return u

    def u(self) -> np.ndarray:
        return self.m / self.rho[..., None]

    def copy(self) -> "LimitState":
        return LimitState(
            rho_f=self.rho_f.copy(),
            omega=self.omega.copy(),
            rho=self.rho.copy(),
            m=self.m.copy(),
            gamma=self.gamma,
        )


def _div_vector(q: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    out = np.zeros(q.shape[:-1])
    for a in range(grid.dim):
        out += centered_diff(q[..., a], a, grid.hx)
    return out


def _div_outer(q: np.ndarray, u: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """div of the tensor flux q_b u_a over a, for each component b."""
    out = np.zeros_like(q)
    for b in range(grid.dim):
        for a in range(grid.dim):
            out[..., b] += centered_diff(q[..., b] * u[..., a], a, grid.hx)
    return out


def _grad_scalar(q: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    out = np.empty(q.shape + (grid.dim,))
    for a in range(grid.dim):
        out[..., a] = centered_diff(q, a, grid.hx)
    return out


def limit_rhs(U: LimitState, grid: PhaseGrid, hyperviscosity: float = 0.0) -> LimitState:
    """Time derivative of the limit system in conservative variables."""
    if np.any(U.rho <= 0.0):
        raise ValueError("limit fluid density must stay positive")
    uf = U.u_f()
    u = U.u()
    pot = solve_poisson(U.rho_f, grid)
    drag = U.rho_f[..., None] * (u - uf)   # shared evaluation, used with both signs
    d_rho_f = -_div_vector(U.omega, grid)
    d_omega = -_div_outer(U.omega, uf, grid) + drag - U.rho_f[..., None] * pot.grad
    d_rho = -_div_vector(U.m, grid)
    d_m = -_div_outer(U.m, u, grid) - _grad_scalar(U.rho**U.gamma, grid) - drag
    for b in range(grid.dim):
        d_m[..., b] += laplacian(u[..., b], grid)
    if hyperviscosity > 0.0:
        for q, dq in (
            (U.rho_f, d_rho_f),
            (U.rho, d_rho),
        ):
            dq -= hyperviscosity * laplacian(laplacian(q, grid), grid)
        for b in range(grid.dim):
            d_omega[..., b] -= hyperviscosity * laplacian(
                laplacian(U.omega[..., b], grid), grid
            )
            d_m[..., b] -= hyperviscosity * laplacian(laplacian(U.m[..., b], grid), grid)
    return LimitState(rho_f=d_rho_f, omega=d_omega, rho=d_rho, m=d_m, gamma=U.gamma)


def _axpy(U: LimitState, c: float, K: LimitState) -> LimitState:
    return LimitState(
        rho_f=U.rho_f + c * K.rho_f,
        omega=U.omega + c * K.omega,
        rho=U.rho + c * K.rho,
        m=U.m + c * K.m,
        gamma=U.gamma,
    )


def max_grad_uf(U: LimitState, grid: PhaseGrid) -> float:
    uf = U.u_f()
    worst = 0.0
    for b in range(grid.dim):
        for a in range(grid.dim):
            worst = max(worst, float(np.abs(centered_diff(uf[..., b], a, grid.hx)).max()))
    return worst


def limit_step(
    U: LimitState, dt: float, grid: PhaseGrid, hyperviscosity: float = 0.0
) -> LimitState:
    """Classical RK4 step with a smoothness sentinel on the particle velocity."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0.0:
        return U.copy()
    if max_grad_uf(U, grid) * dt > 1.0:
        raise SmoothnessLostError(
            "particle-phase velocity gradient too steep for the step: smoothness lost"
        )
    k1 = limit_rhs(U, grid, hyperviscosity)
    k2 = limit_rhs(_axpy(U, 0.5 * dt, k1), grid, hyperviscosity)
    k3 = limit_rhs(_axpy(U, 0.5 * dt, k2), grid, hyperviscosity)
    k4 = limit_rhs(_axpy(U, dt, k3), grid, hyperviscosity)
    out = U.copy()
    for c, K in ((dt / 6.0, k1), (dt / 3.0, k2), (dt / 3.0, k3), (dt / 6.0, k4)):
        out = _axpy(out, c, K)
    return out


def limit_energy(U: LimitState, grid: PhaseGrid) -> float:
    """Kinetic + internal + field energy of the limit state."""
    from .poisson import coulomb_energy

    uf = U.u_f()
    u = U.u()
    dens = (
        0.5 * U.rho_f * (uf**2).sum(axis=-1)
        + 0.5 * U.rho * (u**2).sum(axis=-1)
        + U.rho**U.gamma / (U.gamma - 1.0)
    )
    return float(dens.sum() * grid.cell_volume) + coulomb_energy(U.rho_f, grid)
