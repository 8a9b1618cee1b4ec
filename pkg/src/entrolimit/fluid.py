"""Isentropic compressible Navier-Stokes solver with particle drag source.

Conservative finite-volume update for (rho, m): Rusanov (local Lax-Friedrichs)
fluxes with minmod-limited reconstruction for convection and pressure,
a unit-coefficient Laplacian viscosity on the momentum equation (explicit or
backward-Euler implicit), and the particle drag exchange.  The pressure law is
p(rho) = rho^gamma with unit constant, fixed by the internal-energy term
rho^gamma / (gamma - 1) of the total energy functional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import PhaseGrid, laplacian
from .kinetic import CFLError, DistF, Moments, momentum as particle_momentum


class PositivityError(RuntimeError):
    pass


@dataclass
class FluidState:
    rho: np.ndarray          # spatial_shape, > 0
    m: np.ndarray            # spatial_shape + (dim,)
    gamma: float

    def velocity(self) -> np.ndarray:
        return self.m / self.rho[..., None]


def pressure(rho, gamma: float):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("negative density passed to pressure law")
    return rho**gamma


def sound_speed(rho, gamma: float):
    rho = np.asarray(rho, dtype=float)
    return np.sqrt(gamma * rho ** (gamma - 1.0))


def max_signal_speed(state: FluidState) -> float:
    u = state.velocity()
    c = sound_speed(state.rho, state.gamma)
    return float((np.abs(u).max(axis=-1) + c).max())


def _slopes(q: np.ndarray, axis: int) -> np.ndarray:
    qp = np.roll(q, -1, axis=axis)
    qm = np.roll(q, 1, axis=axis)
    a = qp - q
    b = q - qm
    return np.where(a * b > 0.0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _hyperbolic_update(state: FluidState, dt: float, grid: PhaseGrid):
    """Second-order MUSCL/Rusanov update of convection and pressure."""
    rho, m, gamma = state.rho, state.m, state.gamma
    d = grid.dim
    drho = np.zeros_like(rho)
    dm = np.zeros_like(m)
    for a in range(d):
        srho = _slopes(rho, a)
        sm = _slopes(m, a)
        # left/right states at the i+1/2 face
        rhoL = rho + 0.5 * srho
        rhoR = np.roll(rho - 0.5 * srho, -1, axis=a)
        mL = m + 0.5 * sm
        mR = np.roll(m - 0.5 * sm, -1, axis=a)
        rhoL = np.maximum(rhoL, 1e-300)
        rhoR = np.maximum(rhoR, 1e-300)
        uL = mL / rhoL[..., None]
        uR = mR / rhoR[..., None]
        pL = rhoL**gamma
        pR = rhoR**gamma
        sL = np.abs(uL[..., a]) + sound_speed(rhoL, gamma)
        sR = np.abs(uR[..., a]) + sound_speed(rhoR, gamma)
        smax = np.maximum(sL, sR)
        # physical fluxes along axis a
        frhoL = mL[..., a]
        frhoR = mR[..., a]
        fmL = mL * uL[..., a, None]
        fmR = mR * uR[..., a, None]
        fmL[..., a] += pL
        fmR[..., a] += pR
        Frho = 0.5 * (frhoL + frhoR) - 0.5 * smax * (rhoR - rhoL)
        Fm = 0.5 * (fmL + fmR) - 0.5 * smax[..., None] * (mR - mL)
        drho -= (dt / grid.hx) * (Frho - np.roll(Frho, 1, axis=a))
        dm -= (dt / grid.hx) * (Fm - np.roll(Fm, 1, axis=a))
    return rho + drho, m + dm


_LAP_CACHE: dict = {}


def _sparse_laplacian(grid: PhaseGrid):
    key = (grid.dim, grid.Nx, grid.hx)
    if key not in _LAP_CACHE:
        n = grid.Nx
        e = np.ones(n)
        lap1 = sp.diags([e, -2.0 * e, e], [-1, 0, 1], shape=(n, n), format="lil")
        lap1[0, -1] = 1.0
        lap1[-1, 0] = 1.0
        lap1 = (lap1 / grid.hx**2).tocsr()
        ident = sp.identity(n, format="csr")
        lap = lap1
        for _ in range(grid.dim - 1):
            lap = sp.kron(lap, ident, format="csr") + sp.kron(
                sp.identity(lap.shape[0], format="csr"), lap1, format="csr"
            )
        _LAP_CACHE[key] = lap.tocsc()
    return _LAP_CACHE[key]


def _viscous_update(rho_new, m, dt: float, grid: PhaseGrid, method: str):
    if method == "explicit":
        bound = grid.hx**2 / (2.0 * grid.dim)
        if dt > bound * (1.0 + 1e-12):
            raise CFLError(
                f"explicit viscous step unstable: dt = {dt:.4g} > hx^2/(2d) = {bound:.4g}"
            )
        u = m / rho_new[..., None]
        out = m.copy()
        for b in range(grid.dim):
            out[..., b] += dt * laplacian(u[..., b], grid)
        return out
    if method == "implicit":
        lap = _sparse_laplacian(grid)
        n = lap.shape[0]
        A = sp.diags(rho_new.reshape(-1), format="csc") - dt * lap
        solve = spla.factorized(A)
        out = np.empty_like(m)
        for b in range(grid.dim):
            w = solve(m[..., b].reshape(-1))
            out[..., b] = (rho_new.reshape(-1) * w).reshape(rho_new.shape)
        return out
    raise ValueError(f"unknown viscous method {method!r}")


def fluid_step(
    state: FluidState,
    mom: Moments | None,
    dt: float,
    grid: PhaseGrid,
    viscous: str = "implicit",
    drag: str = "exp",
    drag_impulse: np.ndarray | None = None,
    cfl_limit: float = 1.0,
) -> FluidState:
    """One conservative step: hyperbolic fluxes, viscosity, then drag.

    The standalone drag mode ``"exp"`` applies the pointwise exact relaxation
    u -> u_f + (u - u_f) exp(-dt rho_f / rho), unconditionally stable in the
    drag coefficient.  The coupled stepper instead passes the momentum
    actually exchanged with the particles via ``drag_impulse`` (added to m)
    so the two-phase momentum budget cancels exactly; use ``drag="none"``
    with it.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0.0:
        return FluidState(rho=state.rho.copy(), m=state.m.copy(), gamma=state.gamma)
    speed = max_signal_speed(state)
    if speed * dt / grid.hx > cfl_limit * (1.0 + 1e-12):
        raise CFLError(
            f"fluid CFL violated: (|u|+c)*dt/hx = {speed * dt / grid.hx:.4g} > {cfl_limit}"
        )
    rho_new, m_new = _hyperbolic_update(state, dt, grid)
    if np.any(rho_new <= 0.0):
        idx = np.unravel_index(int(np.argmin(rho_new)), rho_new.shape)
        raise PositivityError(
            f"density nonpositive after flux update at cell {idx}: rho = {rho_new[idx]:.4g}"
        )
    m_new = _viscous_update(rho_new, m_new, dt, grid, viscous)
    if drag == "exp":
        if mom is None:
            raise ValueError("drag='exp' requires particle moments")
        u = m_new / rho_new[..., None]
        decay = np.exp(-dt * mom.rho / rho_new)
        u_new = mom.u + (u - mom.u) * decay[..., None]
        m_new = rho_new[..., None] * u_new
    elif drag == "none":
        pass
    else:
        raise ValueError(f"unknown drag mode {drag!r}")
    if drag_impulse is not None:
        m_new = m_new + drag_impulse
    return FluidState(rho=rho_new, m=m_new, gamma=state.gamma)


def total_mass(state: FluidState, grid: PhaseGrid) -> float:
    return float(state.rho.sum() * grid.cell_volume)


def total_momentum(state: FluidState, grid: PhaseGrid) -> np.ndarray:
    return state.m.sum(axis=tuple(range(grid.dim))) * grid.cell_volume


def coupled_momentum_budget(state: FluidState, f: DistF) -> np.ndarray:
    """Total momentum of fluid plus particles, sum(m + j_f) dx."""
    grid = f.grid
    return total_momentum(state, grid) + particle_momentum(f)
