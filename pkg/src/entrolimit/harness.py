"""Run orchestration: prepared initial data, coupled stepping, rate sweeps.

The coupled stepper composes, per full step dt:

    1/2 fluid -> 1/2 transport -> field solve + 1/2 drag/field ->
    alignment (full dt) -> 1/2 drag/field -> 1/2 transport -> 1/2 fluid

The particle density is untouched by the velocity-space substeps, so one
field solve per step serves both drag/field halves.  The momentum the
particles gain from the drag part of each drag/field substep is handed to
the fluid with the opposite sign, which makes the two-phase momentum budget
close exactly up to the electric-field impulse; that impulse is accumulated
and reported.

The reference solution of the limit system is integrated once on a grid
refined 2x in space and restricted to the run grid by cell averaging, so
reference error enters the comparison at higher order.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import io as elio
from .entropy import (
    EntropyReport,
    check_energy_inequality,
    dissipation_D1,
    dissipation_D2,
    energy_functional,
    raw_stress_l1,
    relative_entropy,
    velocity_spread,
)
from .fluid import FluidState, fluid_step, max_signal_speed, total_mass, total_momentum
from .grid import PhaseGrid, grad_norm_sq, make_grid, spatial_integral
from .kinetic import (
    DistF,
    alignment_substep,
    drag_field_substep,
    mass as particle_mass,
    momentum as particle_momentum,
    moments,
    transport_substep,
)
from .limit import LimitState, limit_step
from .poisson import solve_poisson


class InitialDataError(ValueError):
    pass


class SweepError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# base profiles
# --------------------------------------------------------------------------


@dataclass
class BaseProfiles:
    """Smooth base fields (rho_f0, u_f0, rho0, u0) as callables on coords."""

    rho_f0: callable
    u_f0: callable
    rho0: callable
    u0: callable


def canonical_profile(
    amp_rho_f: float = 0.1,
    amp_u_f: float = 0.1,
    amp_rho: float = 0.1,
    amp_u: float = 0.1,
    L: float = 1.0,
) -> BaseProfiles:
    """Single-mode smooth profiles with distinct phases, neutral mean rho_f."""
    two_pi = 2.0 * np.pi / L

    def rho_f0(coords):
        out = 1.0 + amp_rho_f * sum(np.sin(two_pi * x) for x in coords) / len(coords)
        return out + np.zeros(np.broadcast_shapes(*(np.shape(x) for x in coords)))

    def u_f0(coords):
        return [amp_u_f * np.cos(two_pi * x) for x in coords]

    def rho0(coords):
        out = 1.0 + amp_rho * sum(np.sin(two_pi * x + 0.7) for x in coords) / len(coords)
        return out + np.zeros(np.broadcast_shapes(*(np.shape(x) for x in coords)))

    def u0(coords):
        return [amp_u * np.sin(two_pi * x + 1.3) for x in coords]

    return BaseProfiles(rho_f0=rho_f0, u_f0=u_f0, rho0=rho0, u0=u0)


def uniform_profile(rho_f: float = 1.0, u_f: float = 0.0, rho: float = 1.0, u: float = 0.0):
    def const_scalar(val):
        def fn(coords):
            shape = np.broadcast_shapes(*(np.shape(x) for x in coords))
            return np.full(shape, val)

        return fn

    def const_vector(val):
        def fn(coords):
            shape = np.broadcast_shapes(*(np.shape(x) for x in coords))
            return [np.full(shape, val) for _ in coords]

        return fn

    return BaseProfiles(
        rho_f0=const_scalar(rho_f), u_f0=const_vector(u_f),
        rho0=const_scalar(rho), u0=const_vector(u),
    )


PROFILES = {"canonical": canonical_profile, "uniform": uniform_profile}


# --------------------------------------------------------------------------
# prepared initial data
# --------------------------------------------------------------------------


def _eval_base(base: BaseProfiles, grid: PhaseGrid):
    coords = grid.spatial_coords()
    rho_f0 = np.broadcast_to(base.rho_f0(coords), grid.spatial_shape).astype(float)
    rho0 = np.broadcast_to(base.rho0(coords), grid.spatial_shape).astype(float)
    u_f0 = np.stack(
        [np.broadcast_to(c, grid.spatial_shape) for c in base.u_f0(coords)], axis=-1
    ).astype(float)
    u0 = np.stack(
        [np.broadcast_to(c, grid.spatial_shape) for c in base.u0(coords)], axis=-1
    ).astype(float)
    return rho_f0, u_f0, rho0, u0


def theta_of_eps(epsilon: float, rule: str) -> float:
    if rule == "sqrt":
        return math.sqrt(epsilon)
    if rule == "linear":
        return epsilon
    raise ValueError(f"unknown theta rule {rule!r}")


def limit_initial_state(base: BaseProfiles, grid: PhaseGrid, gamma: float) -> LimitState:
    rho_f0, u_f0, rho0, u0 = _eval_base(base, grid)
    return LimitState(
        rho_f=rho_f0,
        omega=rho_f0[..., None] * u_f0,
        rho=rho0,
        m=rho0[..., None] * u0,
        gamma=gamma,
    )


def well_prepared_ic(
    base: BaseProfiles,
    epsilon: float,
    grid: PhaseGrid,
    gamma: float,
    theta_rule: str = "sqrt",
):
    """Maxwellian particle data at temperature theta(eps) over the base fields.

    f0(x, xi) = rho_f0(x) prod_a N(xi_a; u_f0_a(x), theta); the discrete cell
    masses are renormalized to rho_f0 exactly, so neutrality is inherited from
    the base profile.  The fluid starts exactly on (rho0, rho0 u0).  Returns
    the state pair plus the three preparation certificates: total energy,
    initial relative entropy against the limit data, and the kinetic energy
    excess over the limit energy (which equals (d/2) theta int rho_f0).
    """
    rho_f0, u_f0, rho0, u0 = _eval_base(base, grid)
    mean_rho_f = float(spatial_integral(grid, rho_f0)) / grid.L**grid.dim
    if abs(mean_rho_f - 1.0) > 1e-10:
        raise InitialDataError(
            f"particle density must have unit mean for neutrality, got {mean_rho_f!r}"
        )
    if np.any(rho0 <= 0.0):
        raise InitialDataError("fluid density profile must be positive")
    theta = theta_of_eps(epsilon, theta_rule)
    vcoords = grid.phase_velocity_coords()
    log_norm = -0.5 * grid.dim * math.log(2.0 * math.pi * theta)
    expo = np.zeros(grid.phase_shape)
    for a in range(grid.dim):
        mean_a = u_f0[..., a].reshape(grid.spatial_shape + (1,) * grid.dim)
        expo = expo - (vcoords[a] - mean_a) ** 2 / (2.0 * theta)
    data = rho_f0.reshape(grid.spatial_shape + (1,) * grid.dim) * np.exp(expo + log_norm)
    # support margin: mass outside the half box must be negligible
    vax = tuple(range(grid.dim, 2 * grid.dim))
    inside = np.ones(grid.velocity_shape, dtype=bool)
    vonly = grid.velocity_coords()
    for a in range(grid.dim):
        inside = inside & (np.abs(vonly[a]) <= grid.Vmax / 2.0)
    total = float(data.sum())
    outside_frac = float(data[..., ~inside].sum()) / total if total > 0 else 0.0
    if outside_frac > 1e-12:
        raise InitialDataError(
            f"initial data has mass fraction {outside_frac:.3e} beyond |xi| > Vmax/2; "
            "enlarge Vmax or cool the preparation"
        )
    # renormalize cell masses to the base density exactly
    cell = data.sum(axis=vax) * grid.vnode_volume
    scale = np.where(cell > 0.0, rho_f0 / np.where(cell == 0.0, 1.0, cell), 1.0)
    data = data * scale.reshape(grid.spatial_shape + (1,) * grid.dim)
    f0 = DistF(grid=grid, data=data)
    fluid0 = FluidState(rho=rho0.copy(), m=rho0[..., None] * u0, gamma=gamma)
    U0 = limit_initial_state(base, grid, gamma)
    mom0 = moments(f0)
    cert_energy = energy_functional(f0, fluid0, grid, mom=mom0)
    rel0 = relative_entropy(mom0, fluid0, U0, grid)
    from .poisson import coulomb_energy

    uf = U0.u_f()
    u = U0.u()
    H_dens = (
        0.5 * U0.rho_f * (uf**2).sum(axis=-1)
        + 0.5 * U0.rho * (u**2).sum(axis=-1)
        + U0.rho**gamma / (gamma - 1.0)
    )
    cert_excess = (
        cert_energy
        - coulomb_energy(mom0.rho, grid)
        - float(spatial_integral(grid, H_dens))
    )
    certificates = {
        "energy": cert_energy,
        "initial_relative_entropy": rel0.H_rel,
        "kinetic_excess": cert_excess,
        "theta": theta,
    }
    return f0, fluid0, certificates


# --------------------------------------------------------------------------
# coupled run
# --------------------------------------------------------------------------


@dataclass
class CoupledOptions:
    cfl: float = 0.5
    transport_scheme: str = "fv"
    viscous: str = "implicit"
    theta_rule: str = "sqrt"
    dt_eps_factor: float = 0.25   # cap dt at this multiple of eps, 0 disables
    n_reports: int = 50
    hyperviscosity: float = 0.0
    limit_refine: int = 2


@dataclass
class RunResult:
    reports: list
    f: DistF
    state: FluidState
    inequality: object
    dt: float


def _choose_dt(grid: PhaseGrid, state: FluidState, epsilon: float, opts: CoupledOptions, T: float):
    dt = opts.cfl * grid.hx / grid.Vmax
    fluid_dt = opts.cfl * grid.hx / max(max_signal_speed(state), 1e-12)
    dt = min(dt, fluid_dt)
    if opts.dt_eps_factor > 0:
        dt = min(dt, opts.dt_eps_factor * epsilon)
    if opts.viscous == "explicit":
        dt = min(dt, grid.hx**2 / (2.0 * grid.dim))
    return dt


def _report_times(T: float, n_reports: int):
    if T == 0.0:
        return np.array([0.0])
    n = max(1, int(n_reports))
    return np.linspace(0.0, T, n + 1)


def restrict_limit(U: LimitState, factor: int) -> LimitState:
    """Cell-average restriction from a factor-refined grid to the coarse grid."""

    def avg_scalar(q):
        for a in range(q.ndim):
            n = q.shape[a]
            q = q.reshape(q.shape[:a] + (n // factor, factor) + q.shape[a + 1 :]).mean(
                axis=a + 1
            )
        return q

    def avg_vector(q):
        d = q.shape[-1]
        return np.stack([avg_scalar(q[..., b]) for b in range(d)], axis=-1)

    return LimitState(
        rho_f=avg_scalar(U.rho_f),
        omega=avg_vector(U.omega),
        rho=avg_scalar(U.rho),
        m=avg_vector(U.m),
        gamma=U.gamma,
    )


def run_limit_trajectory(
    base: BaseProfiles,
    grid: PhaseGrid,
    T: float,
    report_times: np.ndarray,
    gamma: float,
    opts: CoupledOptions,
):
    """Integrate the limit system on a refined grid; return restricted states."""
    factor = max(1, int(opts.limit_refine))
    fine = make_grid(grid.dim, grid.L, grid.Nx * factor, grid.Vmax, grid.Nv)
    U = limit_initial_state(base, fine, gamma)
    from .fluid import sound_speed

    out = [restrict_limit(U, factor)]
    t = 0.0
    for t_next in report_times[1:]:
        span = t_next - t
        speed = float(
            (np.abs(U.u()).max() if U.m.size else 0.0)
            + sound_speed(U.rho, gamma).max()
        )
        speed = max(speed, float(np.abs(U.u_f()).max()), 1e-12)
        dt_target = opts.cfl * fine.hx / speed
        n = max(1, int(math.ceil(span / dt_target)))
        dt = span / n
        for _ in range(n):
            U = limit_step(U, dt, fine, hyperviscosity=opts.hyperviscosity)
        t = t_next
        out.append(restrict_limit(U, factor))
    return out


def _make_report(
    t, f, state, grid, U_ref, mom, F0_masses, field_impulse_vec
):
    mom_local = mom if mom is not None else moments(f)
    F = energy_functional(f, state, grid, mom=mom_local)
    D1 = dissipation_D1(f, mom=mom_local)
    u = state.velocity()
    D2 = dissipation_D2(f, u, grid, mom=mom_local)
    rel = relative_entropy(mom_local, state, U_ref, grid)
    stress = raw_stress_l1(f, mom=mom_local)
    pm0, fm0, mom0_total = F0_masses
    pmass = particle_mass(f)
    fmass = total_mass(state, grid)
    mass_drift = max(
        abs(pmass - pm0) / max(abs(pm0), 1e-300),
        abs(fmass - fm0) / max(abs(fm0), 1e-300),
    )
    total_now = total_momentum(state, grid) + particle_momentum(f)
    momentum_drift = float(np.abs(total_now - mom0_total - field_impulse_vec).max())
    drag_own = float(
        spatial_integral(grid, mom_local.rho * ((mom_local.u - u) ** 2).sum(axis=-1))
    )
    gradu_sq = float(spatial_integral(grid, grad_norm_sq(u, grid)))
    return EntropyReport(
        t=float(t),
        F=F,
        D1=D1,
        D2=D2,
        H_rel=rel.H_rel,
        P_rel=rel.P_rel,
        coulomb_rel=rel.coulomb_rel,
        drag_rel=rel.drag_rel,
        visc_rel=rel.visc_rel,
        stress_l1=stress,
        mass_drift=float(mass_drift),
        momentum_drift=momentum_drift,
        drag_own=drag_own,
        gradu_sq=gradu_sq,
        field_impulse=float(np.abs(field_impulse_vec).max()),
    )


def run_coupled(
    epsilon: float,
    ic,
    T_final: float,
    opts: CoupledOptions,
    grid: PhaseGrid,
    limit_traj: list,
    check_tol: float = 1e-3,
) -> RunResult:
    """Advance the coupled system to T_final, reporting on a fixed cadence.

    ``limit_traj`` must hold the reference LimitState at every report time.
    Raises on solver errors; the energy-inequality result is attached to the
    returned RunResult (callers decide whether a failure flags the run).
    """
    if T_final < 0:
        raise ValueError("T_final must be nonnegative")
    f, state = ic
    report_times = _report_times(T_final, opts.n_reports)
    if len(limit_traj) != len(report_times):
        raise ValueError(
            f"limit trajectory has {len(limit_traj)} states but {len(report_times)} are needed"
        )
    field_impulse = np.zeros(grid.dim)
    F0_masses = (
        particle_mass(f),
        total_mass(state, grid),
        total_momentum(state, grid) + particle_momentum(f),
    )
    reports = [
        _make_report(0.0, f, state, grid, limit_traj[0], None, F0_masses, field_impulse)
    ]
    if T_final == 0.0:
        ineq = check_energy_inequality(reports, epsilon, tol_growth=check_tol)
        return RunResult(reports=reports, f=f, state=state, inequality=ineq, dt=0.0)
    dt_target = _choose_dt(grid, state, epsilon, opts, T_final)
    t = 0.0
    for k_rep, t_next in enumerate(report_times[1:], start=1):
        span = t_next - t
        n = max(1, int(math.ceil(span / dt_target - 1e-12)))
        dt = span / n
        for _ in range(n):
            half = 0.5 * dt
            state = fluid_step(
                state, None, half, grid, viscous=opts.viscous, drag="none"
            )
            f = transport_substep(f, half, scheme=opts.transport_scheme)
            mom = moments(f)
            pot = solve_poisson(mom.rho, grid)
            g_u = state.velocity()
            f, d_drag, d_field = drag_field_substep(f, g_u, pot.grad, half, mom=mom)
            state = FluidState(rho=state.rho, m=state.m - d_drag, gamma=state.gamma)
            field_impulse = field_impulse + d_field.sum(
                axis=tuple(range(grid.dim))
            ) * grid.cell_volume
            mom = moments(f)
            f = alignment_substep(f, dt, epsilon, mom=mom)
            g_u = state.velocity()
            f, d_drag, d_field = drag_field_substep(f, g_u, pot.grad, half, mom=mom)
            state = FluidState(rho=state.rho, m=state.m - d_drag, gamma=state.gamma)
            field_impulse = field_impulse + d_field.sum(
                axis=tuple(range(grid.dim))
            ) * grid.cell_volume
            f = transport_substep(f, half, scheme=opts.transport_scheme)
            state = fluid_step(
                state, None, half, grid, viscous=opts.viscous, drag="none"
            )
        t = t_next
        reports.append(
            _make_report(
                t, f, state, grid, limit_traj[k_rep], None, F0_masses, field_impulse
            )
        )
    ineq = check_energy_inequality(reports, epsilon, tol_growth=check_tol)
    return RunResult(reports=reports, f=f, state=state, inequality=ineq, dt=dt_target)


# --------------------------------------------------------------------------
# convergence metrics and sweep
# --------------------------------------------------------------------------


def convergence_metrics(f: DistF, state: FluidState, U: LimitState, grid: PhaseGrid):
    """Distance of the final coupled state to the final limit state."""
    mom = moments(f)
    gamma = state.gamma
    d_rho = state.rho - U.rho
    l1_rho = float(spatial_integral(grid, np.abs(d_rho)))
    lgamma_rho = float(spatial_integral(grid, np.abs(d_rho) ** gamma) ** (1.0 / gamma))
    d_m = state.m - U.m
    l1_momentum = float(spatial_integral(grid, np.sqrt((d_m**2).sum(axis=-1))))
    from .poisson import coulomb_distance

    h_minus1 = coulomb_distance(mom.rho, U.rho_f, grid)
    spread_about_limit = float(
        spatial_integral(grid, velocity_spread(f, center=U.u_f(), mom=mom, sharp=True))
    )
    return {
        "l1_rho": l1_rho,
        "lgamma_rho": lgamma_rho,
        "l1_momentum": l1_momentum,
        "coulomb_rho_f": h_minus1,
        "monokinetic_spread": spread_about_limit,
    }


@dataclass
class SweepResult:
    epsilons: list
    H_final: list              # H_rel + coulomb_rel + time-int drag_rel + time-int visc_rel
    stress_int: list           # time integral of D1 (sharp spread about u_f)
    stress_final: list         # raw spread about own mean at T, per eps
    slope_H: float
    slope_stress: float
    fitted_C: float
    r2_H: float
    r2_stress: float
    inequality_passed: list
    certificates: list
    metrics: list


def _loglog_fit(eps, vals):
    x = np.log(np.asarray(eps))
    y = np.log(np.maximum(np.asarray(vals), 1e-300))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    yhat = A @ coef
    ss_res = float(((y - yhat) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


def _single_eps_run(args):
    (epsilon, base_name, base_kwargs, grid_params, gamma, T, opts, limit_traj) = args
    grid = make_grid(*grid_params)
    base = PROFILES[base_name](**base_kwargs)
    f0, state0, certs = well_prepared_ic(base, epsilon, grid, gamma, opts.theta_rule)
    result = run_coupled(epsilon, (f0, state0), T, opts, grid, limit_traj)
    ts = np.array([r.t for r in result.reports])
    drag_int = float(np.trapezoid([r.drag_rel for r in result.reports], ts))
    visc_int = float(np.trapezoid([r.visc_rel for r in result.reports], ts))
    stress_int = float(np.trapezoid([r.D1 for r in result.reports], ts))
    final = result.reports[-1]
    H_final = final.H_rel + final.coulomb_rel + drag_int + visc_int
    metrics = convergence_metrics(result.f, result.state, limit_traj[-1], grid)
    return {
        "epsilon": epsilon,
        "H_final": H_final,
        "stress_int": stress_int,
        "stress_final": final.stress_l1,
        "reports": result.reports,
        "certificates": certs,
        "inequality": result.inequality,
        "metrics": metrics,
    }


def eps_sweep(
    base_name: str,
    epsilons,
    T_final: float,
    grid: PhaseGrid,
    gamma: float,
    opts: CoupledOptions,
    output_dir: str | None = None,
    base_kwargs: dict | None = None,
    workers: int = 0,
) -> SweepResult:
    """Run the coupled system across epsilons against one shared limit run."""
    eps = [float(e) for e in epsilons]
    if len(eps) != len(set(eps)):
        raise SweepError("duplicate epsilon values in sweep")
    if len(eps) < 3:
        raise SweepError("need >= 3 distinct epsilon values")
    if sorted(eps, reverse=True) != eps:
        raise SweepError("epsilons must be strictly decreasing")
    if eps[0] / eps[-1] < 99.999:
        raise SweepError("epsilon sweep must span at least two decades")
    base_kwargs = dict(base_kwargs or {})
    base = PROFILES[base_name](**base_kwargs)
    report_times = _report_times(T_final, opts.n_reports)
    limit_traj = run_limit_trajectory(base, grid, T_final, report_times, gamma, opts)
    grid_params = (grid.dim, grid.L, grid.Nx, grid.Vmax, grid.Nv)
    jobs = [
        (e, base_name, base_kwargs, grid_params, gamma, T_final, opts, limit_traj)
        for e in eps
    ]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_single_eps_run, jobs))
    else:
        results = [_single_eps_run(j) for j in jobs]
    H_final = [r["H_final"] for r in results]
    stress_int = [r["stress_int"] for r in results]
    slope_H, r2_H = _loglog_fit(eps, H_final)
    slope_stress, r2_stress = _loglog_fit(eps, stress_int)
    fitted_C = max(h / math.sqrt(e) for h, e in zip(H_final, eps))
    sweep = SweepResult(
        epsilons=eps,
        H_final=H_final,
        stress_int=stress_int,
        stress_final=[r["stress_final"] for r in results],
        slope_H=slope_H,
        slope_stress=slope_stress,
        fitted_C=fitted_C,
        r2_H=r2_H,
        r2_stress=r2_stress,
        inequality_passed=[bool(r["inequality"].passed) for r in results],
        certificates=[r["certificates"] for r in results],
        metrics=[r["metrics"] for r in results],
    )
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)
        for r in results:
            path = os.path.join(output_dir, f"entropy_{r['epsilon']!r}.csv")
            elio.write_entropy_csv(r["reports"], path)
        elio.write_sweep_json(sweep, os.path.join(output_dir, "sweep_summary.json"))
    return sweep
