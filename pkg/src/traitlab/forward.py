"""Finite-scale integrator for the selection-mutation potential equation.

The density u concentrates like exp(phi/eps), so the solver advances the
log-transformed potential phi = eps*log(u) and only exponentiates to form
the competitive load, the dissipation integrand, and mass diagnostics.
Time stepping is explicit second order (Heun) with a step ceiling scaled
by eps and by the size of the right-hand side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .correction import CorrectionSettings, build_correction
from .diagnostics import (DiagnosticsRecord, Trajectory, dissipation_increment,
                          extract_atoms, field_lipschitz, min_second_difference)
from .environment import Environment
from .errors import NumericsError, SaturationError
from .grid import Grid, TraitField, threshold_mask
from .kernels import CompetitionKernel, MutationKernel, convolve

_EXP_GUARD = 700.0


@dataclass
class SimState:
    """Potential snapshot at one time, with the fields used to produce it."""

    t: float
    grid: Grid
    phi: np.ndarray
    eps: float
    comp_load: np.ndarray
    mortality: np.ndarray

    @property
    def u(self) -> np.ndarray:
        return np.exp(self.phi / self.eps)

    @property
    def mass(self) -> float:
        return float(np.sum(self.u) * self.grid.h)


def initial_potential(grid: Grid, family: str, params: dict) -> np.ndarray:
    """Initial potential profiles.

    flat              -> 0 everywhere (mass normalization sets the level)
    quadratic         -> -curvature*(x-center)^2
    capped_quadratic  -> max(quadratic, -floor_depth)
    table             -> interpolated (x, value) samples
    """
    x = grid.x
    if family == "flat":
        return np.zeros_like(x)
    if family == "quadratic":
        c = float(params.get("center", 0.0))
        a = float(params["curvature"])
        return -a * (x - c) ** 2
    if family == "capped_quadratic":
        c = float(params.get("center", 0.0))
        a = float(params["curvature"])
        floor = float(params["floor_depth"])
        return np.maximum(-a * (x - c) ** 2, -floor)
    if family == "table":
        xs = np.asarray(params["x"], dtype=float)
        vals = np.asarray(params["values"], dtype=float)
        return np.interp(x, xs, vals)
    raise ValueError(f"unknown initial potential family: {family!r}")


def normalize_mass(phi: np.ndarray, grid: Grid, eps: float,
                   target: float) -> np.ndarray:
    """Shift the potential so the induced density has the target mass."""
    if target <= 0.0:
        raise ValueError("target mass must be positive")
    current = float(np.sum(np.exp(phi / eps)) * grid.h)
    if current <= 0.0 or not math.isfinite(current):
        raise ValueError("initial potential produced unusable mass")
    return phi + eps * math.log(target / current)


def _density(phi: np.ndarray, eps: float, t: float, grid: Grid) -> np.ndarray:
    top = float(np.max(phi)) / eps
    if top > _EXP_GUARD:
        i = int(np.argmax(phi))
        raise SaturationError("potential/scale exceeded the exp guard",
                              t=t, x=grid.x[i], index=i)
    return np.exp(phi / eps)


def phi_rhs(phi: np.ndarray, t: float, grid: Grid, env: Environment,
            mutation: MutationKernel | None, competition: CompetitionKernel,
            correction: CorrectionSettings, eps: float):
    """Right-hand side of the potential equation, plus the fields it used.

    rate - load - correction + jump functional, all on the grid. Returns
    (rhs, u, load) so callers can reuse the exponentiation. A None mutation
    kernel drops the jump term (pure selection dynamics).
    """
    u = _density(phi, eps, t, grid)
    load = convolve(competition, TraitField(grid, u, role="density")).values
    phi_field = TraitField(grid, phi, role="potential")
    corr = build_correction(correction, phi_field, eps)
    rhs = env.rate_at(t) - load - corr.values
    if mutation is not None:
        rhs = rhs + mutation.apply_potential(phi_field, eps)
    return rhs, u, load


def stable_dt(env: Environment, competition: CompetitionKernel,
              mutation: MutationKernel | None, correction: CorrectionSettings,
              eps: float, mass_ceiling: float, p_ref: float) -> float:
    """Explicit step ceiling: the rhs is O(size/eps), so dt = O(eps/size)."""
    size = env.max_abs_rate() + competition.peak * mass_ceiling
    if correction.mode != "off":
        size += correction.cap
    if mutation is not None:
        size += max(float(mutation.hamiltonian(p_ref)), 1.0)
    return min(0.2 * eps / size, 0.5 * eps)


def run_forward(env: Environment, mutation: MutationKernel | None,
                competition: CompetitionKernel, correction: CorrectionSettings,
                eps: float, phi0: np.ndarray, t_end: float, sample_dt: float,
                *, mass_target: float | None = 1.0, dt: float | None = None,
                mass_ceiling: float = 10.0, p_ref: float | None = None) -> Trajectory:
    """Integrate the potential equation and sample diagnostics.

    Samples land exactly at multiples of sample_dt (the step divides it),
    so runs at different scales share sample times. Raises NumericsError
    with a time and trait location if the state stops being finite.
    """
    grid = env.grid
    env.validate()
    if correction.mode == "distance_ramp":
        correction.validate_against_rate(env.max_rate_slope(), eps)
        correction.validate_width(eps)
    phi = np.asarray(phi0, dtype=float).copy()
    if phi.shape != (grid.n,):
        raise ValueError("initial potential does not match the grid")
    if mass_target is not None:
        phi = normalize_mass(phi, grid, eps, mass_target)

    if p_ref is None:
        p_ref = 1.5 * field_lipschitz(phi, grid.h) + 1.0
    if dt is None:
        dt = stable_dt(env, competition, mutation, correction, eps,
                       mass_ceiling, p_ref)
    n_sub = max(1, math.ceil(sample_dt / dt - 1e-12))
    dt = sample_dt / n_sub
    n_samples = int(round(t_end / sample_dt))
    if abs(n_samples * sample_dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise ValueError("t_end must be a multiple of sample_dt")

    traj = Trajectory(kind="forward", eps=eps)
    depth = correction.depth(eps)
    dissip = 0.0
    switched = env.switch_time is None

    def record(t: float, u: np.ndarray, load: np.ndarray):
        nonlocal switched
        phi_field = TraitField(grid, phi, role="potential")
        if mutation is not None:
            min_jump = float(np.min(mutation.apply_potential(phi_field, eps)))
        else:
            min_jump = 0.0
        mortality = build_correction(correction, phi_field, eps).values
        mask = threshold_mask(phi_field, -depth)
        flags = ()
        if not switched and t >= env.switch_time - 1e-12:
            flags = ("switched",)
            switched = True
        rec = DiagnosticsRecord(
            t=t,
            mass=float(np.sum(u) * grid.h),
            max_phi=float(np.max(phi)),
            lipschitz=field_lipschitz(phi, grid.h),
            min_second_diff=min_second_difference(phi, grid.h),
            min_jump_functional=min_jump,
            dissipation_cum=dissip,
            level_mask=mask,
            component_count=mask.component_count(),
            atoms=extract_atoms(phi_field, -depth, weights=u),
            flags=flags,
        )
        state = SimState(t=t, grid=grid, phi=phi.copy(), eps=eps,
                         comp_load=load.copy(), mortality=mortality)
        traj.samples.append((state, rec))

    t = 0.0
    try:
        rhs0, u0, load0 = phi_rhs(phi, t, grid, env, mutation, competition,
                                  correction, eps)
        record(0.0, u0, load0)
        for k in range(1, n_samples + 1):
            for j in range(n_sub):
                t = (k - 1) * sample_dt + j * dt
                k1, u1, load1 = phi_rhs(phi, t, grid, env, mutation,
                                        competition, correction, eps)
                mid = phi + dt * k1
                k2, u2, load2 = phi_rhs(mid, t + dt, grid, env, mutation,
                                        competition, correction, eps)
                dissip += 0.5 * (
                    dissipation_increment(env.rate_at(t), load1, u1,
                                          grid.h, dt, eps)
                    + dissipation_increment(env.rate_at(t + dt), load2, u2,
                                            grid.h, dt, eps))
                phi = phi + (0.5 * dt) * (k1 + k2)
                if not np.all(np.isfinite(phi)):
                    bad = int(np.argmin(np.isfinite(phi)))
                    raise NumericsError("potential lost finiteness",
                                        t=t + dt, x=grid.x[bad], index=bad)
            t = k * sample_dt
            _, u, load = phi_rhs(phi, t, grid, env, mutation, competition,
                                 correction, eps)
            record(t, u, load)
    except NumericsError as err:
        traj.failure = str(err)
        traj.events.append({"t": getattr(err, "t", t), "kind": "abort",
                            "detail": str(err)})
        err.trajectory = traj
        raise
    return traj
