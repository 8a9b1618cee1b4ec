"""Phase-space discretization: periodic spatial mesh times truncated velocity box.

The spatial domain is the d-torus [0, L)^d with cell-centered coordinates.
The velocity domain is the box [-Vmax, Vmax]^d with midpoint nodes and
uniform quadrature weights hv^d.  Midpoint nodes keep the node set exactly
symmetric under v -> -v, so discrete moments of odd integrands vanish to
roundoff.  All solvers share this object; it is immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseGrid:
    dim: int
    L: float
    Nx: int
    Vmax: float
    Nv: int
    hx: float = field(init=False)
    hv: float = field(init=False)
    xc: np.ndarray = field(init=False, repr=False)
    vc: np.ndarray = field(init=False, repr=False)
    w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "hx", self.L / self.Nx)
        object.__setattr__(self, "hv", 2.0 * self.Vmax / self.Nv)
        object.__setattr__(self, "xc", (np.arange(self.Nx) + 0.5) * self.hx)
        # symmetric construction: vc[j] + vc[Nv-1-j] == 0 exactly in floats
        object.__setattr__(
            self, "vc", (np.arange(self.Nv) - (self.Nv - 1) / 2.0) * self.hv
        )
        object.__setattr__(self, "w", np.full(self.Nv, self.hv))

    # -- shapes and measures -------------------------------------------------

    @property
    def spatial_shape(self):
        return (self.Nx,) * self.dim

    @property
    def velocity_shape(self):
        return (self.Nv,) * self.dim

    @property
    def phase_shape(self):
        return self.spatial_shape + self.velocity_shape

    @property
    def cell_volume(self) -> float:
        return self.hx**self.dim

    @property
    def vnode_volume(self) -> float:
        return self.hv**self.dim

    def spatial_axes(self):
        return tuple(range(self.dim))

    def velocity_axes(self):
        """Velocity axes of a full phase-space array."""
        return tuple(range(self.dim, 2 * self.dim))

    # -- broadcastable coordinate arrays --------------------------------------

    def spatial_coords(self):
        """One array per spatial axis, broadcastable over spatial_shape."""
        out = []
        for a in range(self.dim):
            shape = [1] * self.dim
            shape[a] = self.Nx
            out.append(self.xc.reshape(shape))
        return out

    def velocity_coords(self):
        """One array per velocity axis, broadcastable over velocity_shape."""
        out = []
        for a in range(self.dim):
            shape = [1] * self.dim
            shape[a] = self.Nv
            out.append(self.vc.reshape(shape))
        return out

    def phase_velocity_coords(self):
        """Velocity coordinates broadcastable over the full phase shape."""
        out = []
        for a in range(self.dim):
            shape = [1] * (2 * self.dim)
            shape[self.dim + a] = self.Nv
            out.append(self.vc.reshape(shape))
        return out


def make_grid(dim: int, L: float, Nx: int, Vmax: float, Nv: int) -> PhaseGrid:
    """Build a PhaseGrid, rejecting shapes that break the quadrature contracts."""
    if dim not in (1, 2, 3):
        raise GridError(f"dim must be 1, 2 or 3, got {dim}")
    if not (L > 0 and Vmax > 0):
        raise GridError(f"L and Vmax must be positive, got L={L}, Vmax={Vmax}")
    if Nx < 4 or Nv < 4:
        raise GridError(f"need Nx >= 4 and Nv >= 4, got Nx={Nx}, Nv={Nv}")
    if Nv % 2 != 0:
        raise GridError(f"Nv must be even to keep the velocity nodes symmetric, got {Nv}")
    return PhaseGrid(dim=dim, L=float(L), Nx=int(Nx), Vmax=float(Vmax), Nv=int(Nv))


def velocity_integral(grid: PhaseGrid, g: np.ndarray):
    """Midpoint quadrature over the velocity box.

    ``g`` may be velocity-only (its last ``dim`` axes are the velocity axes)
    or carry any leading axes; the reduction always runs over the trailing
    ``dim`` axes.  Exact for per-axis polynomials of degree <= 1.
    """
    g = np.asarray(g)
    axes = tuple(range(g.ndim - grid.dim, g.ndim))
    return g.sum(axis=axes) * grid.vnode_volume


def spatial_integral(grid: PhaseGrid, q: np.ndarray):
    """Sum over the leading ``dim`` spatial axes times the cell volume."""
    q = np.asarray(q)
    axes = tuple(range(grid.dim))
    return q.sum(axis=axes) * grid.cell_volume


# -- periodic finite-difference operators (shared by fluid/limit/entropy) ----


def centered_diff(q: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(q, -1, axis=axis) - np.roll(q, 1, axis=axis)) / (2.0 * h)


def forward_diff(q: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(q, -1, axis=axis) - q) / h


def laplacian(q: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    out = np.zeros_like(q)
    for a in range(grid.dim):
        out += (np.roll(q, -1, axis=a) - 2.0 * q + np.roll(q, 1, axis=a)) / grid.hx**2
    return out


def grad_norm_sq(u: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """Pointwise |grad u|^2 with one-sided differences.

    Forward differences pair with the 3-point Laplacian through the discrete
    identity sum(u * lap(u)) = -sum(|D+ u|^2) on the torus, which keeps the
    energy bookkeeping of the viscous term exact.  ``u`` may be scalar or
    carry a trailing component axis.
    """
    u = np.asarray(u)
    ncomp = 1 if u.ndim == grid.dim else u.shape[-1]
    out = np.zeros(u.shape[: grid.dim])
    for a in range(grid.dim):
        if ncomp == 1 and u.ndim == grid.dim:
            out += forward_diff(u, a, grid.hx) ** 2
        else:
            for b in range(ncomp):
                out += forward_diff(u[..., b], a, grid.hx) ** 2
    return out
