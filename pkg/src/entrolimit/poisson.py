"""Spectral Poisson solver on the torus and the Coulomb-energy metrics.

Solves -lap(phi) = s with the zero-mean gauge by diagonal inversion in
Fourier space.  Convolution with the periodic interaction kernel is exactly
this zero-mean inverse Laplacian, so the kernel itself is never tabulated.
The mean of the source is removed before inversion (discrete stand-in for
the neutrality condition) and reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import PhaseGrid, spatial_integral


@dataclass(frozen=True)
class Potential:
    phi: np.ndarray
    grad: np.ndarray          # shape spatial_shape + (dim,)
    removed_mean: float       # mean subtracted from the source
    mean_zero: bool = True


def _wavenumbers(grid: PhaseGrid):
    k1 = 2.0 * np.pi * np.fft.fftfreq(grid.Nx, d=grid.hx)
    ks = []
    for a in range(grid.dim):
        shape = [1] * grid.dim
        shape[a] = grid.Nx
        ks.append(k1.reshape(shape))
    return ks


def solve_poisson(rho: np.ndarray, grid: PhaseGrid) -> Potential:
    """Zero-mean potential of the mean-removed source ``rho - mean(rho)``."""
    rho = np.asarray(rho, dtype=float)
    if not np.all(np.isfinite(rho)):
        raise ValueError("poisson source contains NaN or Inf")
    mean = float(rho.mean())
    s_hat = np.fft.fftn(rho - mean)
    ks = _wavenumbers(grid)
    k2 = sum(k * k for k in ks)
    k2_safe = np.where(k2 == 0.0, 1.0, k2)
    phi_hat = s_hat / k2_safe
    phi_hat.flat[0] = 0.0
    phi = np.fft.ifftn(phi_hat).real
    grad = np.empty(grid.spatial_shape + (grid.dim,))
    for a in range(grid.dim):
        grad[..., a] = np.fft.ifftn(1j * ks[a] * phi_hat).real
    return Potential(phi=phi, grad=grad, removed_mean=mean)


def spectral_laplacian(q: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Apply the same spectral Laplacian the solver inverts (for identity checks)."""
    q_hat = np.fft.fftn(np.asarray(q, dtype=float))
    k2 = sum(k * k for k in _wavenumbers(grid))
    return np.fft.ifftn(-k2 * q_hat).real


def field_energy(pot: Potential, grid: PhaseGrid) -> float:
    return 0.5 * float(spatial_integral(grid, (pot.grad**2).sum(axis=-1)))


def coulomb_energy(rho: np.ndarray, grid: PhaseGrid) -> float:
    """(1/2) integral of |grad phi|^2 for the potential sourced by rho."""
    return field_energy(solve_poisson(rho, grid), grid)


def coulomb_distance(rho_a: np.ndarray, rho_b: np.ndarray, grid: PhaseGrid) -> float:
    """Squared dual-norm distance: integral of |grad phi_diff|^2.

    phi_diff solves -lap(phi_diff) = (rho_a - rho_b) with means removed, so
    the value is symmetric, gauge-invariant under adding constants, and zero
    iff rho_a - rho_b is constant.
    """
    pot = solve_poisson(np.asarray(rho_a) - np.asarray(rho_b), grid)
    return float(spatial_integral(grid, (pot.grad**2).sum(axis=-1)))
