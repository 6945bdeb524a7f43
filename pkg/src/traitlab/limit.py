"""Zero-scale limit model: constrained front equation plus a singular measure.

The potential obeys a forced Hamilton-Jacobi equation with the constraint
max phi = 0. The forcing couples to a nonnegative measure supported on the
near-zero band, chosen each step as the complementarity solution of the
competition system there (the same object the static solver produces). The
Hamiltonian is discretized with a local Lax-Friedrichs flux whose
dissipation makes the update monotone under the step restriction
dt <= cfl * h / a, a = max |H'| on [-p_max, p_max].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .correction import CorrectionSettings, limit_correction
from .diagnostics import (DiagnosticsRecord, Trajectory, field_lipschitz,
                          min_second_difference)
from .environment import Environment
from .errors import ConfigError, NumericsError
from .ess import DiscreteMeasure, ess_verify, solve_complementarity
from .grid import Grid, SetMask
from .kernels import CompetitionKernel, MutationKernel


def one_sided_slopes(phi: np.ndarray, h: float):
    """Backward and forward difference quotients with copied end values."""
    d = np.diff(phi) / h
    p_minus = np.concatenate(([d[0]], d))
    p_plus = np.concatenate((d, [d[-1]]))
    return p_minus, p_plus


def numerical_hamiltonian(kernel: MutationKernel | None, phi: np.ndarray,
                          h: float, p_max: float,
                          t: float = 0.0) -> np.ndarray:
    """Local Lax-Friedrichs value H((p-+p+)/2) + (a/2)(p+ - p-).

    The centered evaluation plus slope-proportional dissipation is what
    makes the explicit update monotone; the sign of the dissipation term
    must add when the forward slope exceeds the backward one. Slopes beyond
    p_max abort the run with a located error since the dissipation constant
    a only covers [-p_max, p_max]. A missing kernel means no mutations at
    all, so the transport term is identically zero.

    The two wall nodes have only one difference quotient, so no viscosity
    pair exists there; the centered value alone is not monotone in the
    inward neighbor when the profile descends toward the interior. They get
    the one-sided flux H(p) restricted to slopes pointing up and away from
    the wall, which is nondecreasing in the neighbor value and agrees with
    the centered flux for profiles ascending away from the wall.
    """
    if kernel is None:
        return np.zeros_like(phi)
    p_minus, p_plus = one_sided_slopes(phi, h)
    worst = max(float(np.max(np.abs(p_minus))), float(np.max(np.abs(p_plus))))
    if worst > p_max:
        i = int(np.argmax(np.maximum(np.abs(p_minus), np.abs(p_plus))))
        raise NumericsError(
            f"slope {worst:.4g} exceeded the declared bound p_max = {p_max:.4g}",
            t=t, index=i)
    a = kernel.max_deriv(p_max)
    out = kernel.hamiltonian(0.5 * (p_minus + p_plus)) \
        + 0.5 * a * (p_plus - p_minus)
    ends = np.array([max(p_plus[0], 0.0), min(p_minus[-1], 0.0)])
    out[[0, -1]] = kernel.hamiltonian(ends)
    return out


def monotone_update(kernel: MutationKernel | None, phi: np.ndarray, h: float,
                    dt: float, p_max: float, forcing: np.ndarray,
                    t: float = 0.0) -> np.ndarray:
    """One explicit step, before the constraint projection."""
    return phi + dt * (forcing + numerical_hamiltonian(kernel, phi, h,
                                                       p_max, t))


def support_speed_bound(kernel: MutationKernel | None, p_max: float,
                        n_xi: int = 512) -> float:
    """Front speed bound 2 * sup of H(xi)/|xi| over 0 < |xi| <= 2*p_max."""
    if kernel is None:
        return 0.0
    xi = np.linspace(-2.0 * p_max, 2.0 * p_max, n_xi)
    xi = xi[np.abs(xi) > 1e-9]
    return 2.0 * float(np.max(kernel.hamiltonian(xi) / np.abs(xi)))


@dataclass
class LimitState:
    """Limit potential, its singular measure, and the induced fields."""

    t: float
    grid: Grid
    phi: np.ndarray
    measure: DiscreteMeasure
    comp_load: np.ndarray
    mortality: np.ndarray


def _warm_positions(cand_idx: np.ndarray, prev: dict) -> list | None:
    """Positions (into the candidate set) active at the previous step."""
    if not prev:
        return None
    pos = [p for p, gi in enumerate(cand_idx) if int(gi) in prev]
    return pos or None


def _band_measure(band: SetMask, env: Environment,
                  competition: CompetitionKernel, t: float,
                  prev: dict) -> tuple[DiscreteMeasure, dict]:
    """Complementarity measure on the near-zero band, warm started.

    Returns the measure and the global-index weight map used to warm start
    the next step.
    """
    idx = band.indices
    if idx.size == 0:
        return DiscreteMeasure.empty(), {}
    g = band.grid
    xs = g.x[idx]
    rate = env.rate_at(t)[idx]
    gram = competition.gram(xs)
    warm = _warm_positions(idx, prev)
    alpha, _ = solve_complementarity(gram, rate, warm_start=warm)
    keep = alpha > 0.0
    carry = {int(i): float(a) for i, a in zip(idx[keep], alpha[keep])}
    if not keep.any():
        return DiscreteMeasure.empty(), carry
    return DiscreteMeasure(xs[keep], alpha[keep]), carry


def run_limit(env: Environment, mutation: MutationKernel | None,
              competition: CompetitionKernel, correction: CorrectionSettings,
              phi0: np.ndarray, t_end: float, sample_dt: float, p_max: float,
              *, dt: float | None = None, cfl: float = 0.45,
              tol_zero: float | None = None,
              certify: bool = True) -> Trajectory:
    """Integrate the constrained limit model and sample diagnostics.

    The initial potential is shifted so its maximum is exactly zero. Each
    step solves the band measure, applies the forced monotone update,
    projects onto {phi <= 0}, and re-anchors (shifts up, logged) only if
    the maximum fell below -tol_zero. Certificates for the sampled
    measures are attached to the records' flags and the event log.
    """
    grid = env.grid
    env.validate()
    if competition.degenerate:
        raise ConfigError(
            "the limit measure solve needs a strictly positive kernel "
            "transform; the constant competition kernel is degenerate",
            hypothesis="competition-positivity")
    if tol_zero is None:
        tol_zero = 10.0 * grid.h * p_max
    phi = np.asarray(phi0, dtype=float).copy()
    if phi.shape != (grid.n,):
        raise ValueError("initial potential does not match the grid")
    phi = np.minimum(phi - float(np.max(phi)), 0.0)

    # a <= 1 never tightens the true restriction cfl*h/a, so the floor only
    # keeps the step finite when mutations are off (a = 0)
    a = mutation.max_deriv(p_max) if mutation is not None else 0.0
    dt_max = cfl * grid.h / max(a, 1.0)
    if dt is not None:
        dt_max = min(dt, dt_max)
    n_sub = max(1, math.ceil(sample_dt / dt_max - 1e-12))
    step = sample_dt / n_sub
    n_samples = int(round(t_end / sample_dt))
    if abs(n_samples * sample_dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise ValueError("t_end must be a multiple of sample_dt")

    traj = Trajectory(kind="limit", eps=None)
    carry: dict = {}
    reanchor_since_sample = 0.0
    switched = env.switch_time is None

    def record(t: float):
        nonlocal carry, reanchor_since_sample, switched
        band = SetMask(grid, phi >= -tol_zero)
        measure, carry = _band_measure(band, env, competition, t, carry)
        load = measure.load(competition, grid.x)
        mortality = limit_correction(correction, band)
        flags = []
        if not measure.n_atoms:
            flags.append("extinction-regime")
        if not switched and t >= env.switch_time - 1e-12:
            flags.append("switched")
            switched = True
        if certify and measure.n_atoms:
            cert = ess_verify(measure, band, env, competition, t=t)
            if not cert.passed:
                flags.append("certificate-failed")
                traj.events.append({"t": t, "kind": "certificate",
                                    **cert.as_dict()})
        rec = DiagnosticsRecord(
            t=t,
            mass=measure.total,
            max_phi=float(np.max(phi)),
            lipschitz=field_lipschitz(phi, grid.h),
            min_second_diff=min_second_difference(phi, grid.h),
            min_jump_functional=0.0,
            dissipation_cum=0.0,
            level_mask=band,
            component_count=band.component_count(),
            atoms=measure,
            reanchor=reanchor_since_sample,
            flags=tuple(flags),
        )
        reanchor_since_sample = 0.0
        state = LimitState(t=t, grid=grid, phi=phi.copy(), measure=measure,
                           comp_load=load, mortality=mortality)
        traj.samples.append((state, rec))

    t = 0.0
    try:
        record(0.0)
        for k in range(1, n_samples + 1):
            for j in range(n_sub):
                t = (k - 1) * sample_dt + j * step
                band = SetMask(grid, phi >= -tol_zero)
                measure, carry = _band_measure(band, env, competition, t,
                                               carry)
                load = measure.load(competition, grid.x)
                mortality = limit_correction(correction, band)
                forcing = env.rate_at(t) - load - mortality
                phi = monotone_update(mutation, phi, grid.h, step, p_max,
                                      forcing, t=t)
                phi = np.minimum(phi, 0.0)
                top = float(np.max(phi))
                if top < -tol_zero:
                    traj.events.append({"t": t + step, "kind": "reanchor",
                                        "magnitude": -top})
                    reanchor_since_sample += -top
                    phi = phi - top
                if not np.all(np.isfinite(phi)):
                    bad = int(np.argmin(np.isfinite(phi)))
                    raise NumericsError("potential lost finiteness",
                                        t=t + step, x=grid.x[bad], index=bad)
            record(k * sample_dt)
    except NumericsError as err:
        traj.failure = str(err)
        traj.events.append({"t": getattr(err, "t", t), "kind": "abort",
                            "detail": str(err)})
        err.trajectory = traj
        raise
    return traj


def _support_gaps(mask: SetMask) -> list:
    """Open x-intervals between consecutive support components."""
    comps = mask.components()
    x = mask.grid.x
    return [(float(x[left[1]]), float(x[right[0]]))
            for left, right in zip(comps[:-1], comps[1:])]


def detect_branching(traj: Trajectory, fit_samples: int = 10) -> list:
    """Support-topology events: component count changes between samples.

    Splits also get a separation-speed estimate: the least-squares slope,
    over the following ``fit_samples`` samples, of the width of the support
    gap opened at the pinch point.
    """
    events = []
    recs = traj.records
    for i in range(1, len(recs)):
        before, after = recs[i - 1], recs[i]
        if after.component_count == before.component_count:
            continue
        kind = "split" if after.component_count > before.component_count \
            else "merge"
        ev = {"t": after.t, "kind": kind,
              "components_before": before.component_count,
              "components_after": after.component_count}
        if kind == "split":
            # the new gap is the one whose midpoint was covered before
            break_x = None
            for lo, hi in _support_gaps(after.level_mask):
                mid = 0.5 * (lo + hi)
                if any(a <= mid <= b for a, b in
                       ((before.level_mask.grid.x[f], before.level_mask.grid.x[l])
                        for f, l in before.level_mask.components())):
                    break_x = mid
                    break
            ts, widths = [], []
            if break_x is not None:
                for rec in recs[i:i + fit_samples]:
                    span = next((hi - lo for lo, hi
                                 in _support_gaps(rec.level_mask)
                                 if lo < break_x < hi), None)
                    if span is None:
                        break
                    ts.append(rec.t)
                    widths.append(span)
            if len(ts) >= 2:
                ev["separation_speed"] = float(np.polyfit(ts, widths, 1)[0])
        events.append(ev)
    return events
