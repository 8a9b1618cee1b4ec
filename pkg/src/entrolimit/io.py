"""Bit-stable output emission: CSV, JSON summaries, binary snapshots.

Floats are written with Python's shortest round-trip repr so identical runs
diff byte-identically.
"""

from __future__ import annotations

import json
import struct

import numpy as np


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_entropy_csv(reports, path: str) -> None:
    from .entropy import EntropyReport

    lines = [",".join(EntropyReport.csv_columns())]
    for r in reports:
        lines.append(",".join(fmt(v) for v in r.csv_row()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_sweep_json(sweep, path: str) -> None:
    payload = {
        "epsilons": sweep.epsilons,
        "H_final": sweep.H_final,
        "stress_int": sweep.stress_int,
        "stress_final": sweep.stress_final,
        "slope_H": sweep.slope_H,
        "slope_stress": sweep.slope_stress,
        "fitted_C": sweep.fitted_C,
        "r2_H": sweep.r2_H,
        "r2_stress": sweep.r2_stress,
        "inequality_passed": sweep.inequality_passed,
        "certificates": sweep.certificates,
        "metrics": sweep.metrics,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_distf_bin(f, path: str) -> None:
    """Flat binary snapshot: int64 header (dim, Nx, Nv), float64 (L, Vmax), data."""
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qqq", g.dim, g.Nx, g.Nv))
        fh.write(struct.pack("<dd", g.L, g.Vmax))
        fh.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())


def read_distf_bin(path: str):
    from .grid import make_grid
    from .kinetic import DistF

    with open(path, "rb") as fh:
        dim, Nx, Nv = struct.unpack("<qqq", fh.read(24))
        L, Vmax = struct.unpack("<dd", fh.read(16))
        grid = make_grid(dim, L, Nx, Vmax, Nv)
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(grid.phase_shape).copy()
    return DistF(grid=grid, data=data)


def write_moments_csv(f, path: str) -> None:
    from .kinetic import moments

    g = f.grid
    mom = moments(f)
    cols = (
        [f"x{a}" for a in range(g.dim)]
        + ["rho_f"]
        + [f"j{a}" for a in range(g.dim)]
        + [f"u_f{a}" for a in range(g.dim)]
    )
    lines = [",".join(cols)]
    coords = np.meshgrid(*([g.xc] * g.dim), indexing="ij") if g.dim > 1 else [g.xc]
    flat_rho = mom.rho.reshape(-1)
    flat_j = mom.j.reshape(-1, g.dim)
    flat_u = mom.u.reshape(-1, g.dim)
    flat_x = [c.reshape(-1) for c in coords]
    for i in range(flat_rho.size):
        row = [fmt(flat_x[a][i]) for a in range(g.dim)]
        row.append(fmt(flat_rho[i]))
        row += [fmt(flat_j[i, a]) for a in range(g.dim)]
        row += [fmt(flat_u[i, a]) for a in range(g.dim)]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_fluid_csv(state, grid, path: str) -> None:
    from .fluid import pressure

    u = state.velocity()
    p = pressure(state.rho, state.gamma)
    cols = [f"x{a}" for a in range(grid.dim)] + ["rho"] + [
        f"u{a}" for a in range(grid.dim)
    ] + ["p"]
    lines = [",".join(cols)]
    coords = np.meshgrid(*([grid.xc] * grid.dim), indexing="ij") if grid.dim > 1 else [grid.xc]
    flat_x = [c.reshape(-1) for c in coords]
    flat_rho = state.rho.reshape(-1)
    flat_u = u.reshape(-1, grid.dim)
    flat_p = p.reshape(-1)
    for i in range(flat_rho.size):
        row = [fmt(flat_x[a][i]) for a in range(grid.dim)]
        row.append(fmt(flat_rho[i]))
        row += [fmt(flat_u[i, a]) for a in range(grid.dim)]
        row.append(fmt(flat_p[i]))
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_limit_csv(U, grid, path: str) -> None:
    """Fluid columns plus particle-phase columns appended."""
    u = U.u()
    uf = U.u_f()
    p = U.rho**U.gamma
    cols = (
        [f"x{a}" for a in range(grid.dim)]
        + ["rho"]
        + [f"u{a}" for a in range(grid.dim)]
        + ["p", "rho_f"]
        + [f"u_f{a}" for a in range(grid.dim)]
    )
    lines = [",".join(cols)]
    coords = np.meshgrid(*([grid.xc] * grid.dim), indexing="ij") if grid.dim > 1 else [grid.xc]
    flat_x = [c.reshape(-1) for c in coords]
    flat = {
        "rho": U.rho.reshape(-1),
        "u": u.reshape(-1, grid.dim),
        "p": p.reshape(-1),
        "rho_f": U.rho_f.reshape(-1),
        "uf": uf.reshape(-1, grid.dim),
    }
    for i in range(flat["rho"].size):
        row = [fmt(flat_x[a][i]) for a in range(grid.dim)]
        row.append(fmt(flat["rho"][i]))
        row += [fmt(flat["u"][i, a]) for a in range(grid.dim)]
        row.append(fmt(flat["p"][i]))
        row.append(fmt(flat["rho_f"][i]))
        row += [fmt(flat["uf"][i, a]) for a in range(grid.dim)]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
