"""Finite-scale integrator: right-hand side, exact solutions, convergence.

Oracles: dense double-loop competitive load, RK4 on the rescaled logistic
mass equation, and closed-form linear-in-time growth when competition is
switched off.
"""

from __future__ import annotations

import numpy as np
import pytest

from traitlab.correction import CorrectionSettings
from traitlab.environment import Environment, rate_from_family
from traitlab.errors import NumericsError
from traitlab.grid import Grid, TraitField
from traitlab.kernels import CompetitionKernel, MutationKernel
from traitlab.forward import (initial_potential, normalize_mass, phi_rhs,
                              run_forward)

OFF = CorrectionSettings()


def plateau_env(g: Grid, value=0.5) -> Environment:
    rate = rate_from_family(g, "plateau",
                            {"plateau_value": value, "plateau_radius": 2.5,
                             "outside_value": -0.6, "ramp_width": 0.75})
    return Environment(rate=rate, r0=0.5, R=3.3, R0=2.0)


def rk4_logistic(m0: float, c: float, a: float, eps: float,
                 times: np.ndarray, n_sub: int = 400) -> np.ndarray:
    """Mass of the rescaled logistic m' = m (c - a m) / eps at the times."""
    out = [m0]
    m = m0
    f = lambda y: y * (c - a * y) / eps
    for t0, t1 in zip(times[:-1], times[1:]):
        dt = (t1 - t0) / n_sub
        for _ in range(n_sub):
            k1 = f(m)
            k2 = f(m + 0.5 * dt * k1)
            k3 = f(m + 0.5 * dt * k2)
            k4 = f(m + dt * k3)
            m += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(m)
    return np.asarray(out)


def test_initial_potential_families():
    g = Grid(-2.0, 2.0, 65)
    assert np.all(initial_potential(g, "flat", {}) == 0.0)
    quad = initial_potential(g, "quadratic", {"center": 0.5, "curvature": 2.0})
    assert np.allclose(quad, -2.0 * (g.x - 0.5) ** 2)
    capped = initial_potential(g, "capped_quadratic",
                               {"curvature": 2.0, "floor_depth": 1.0})
    assert np.allclose(capped, np.maximum(-2.0 * g.x**2, -1.0))
    table = initial_potential(g, "table",
                              {"x": [-2.0, 0.0, 2.0], "values": [-4, 0, -4.0]})
    assert np.allclose(table, -2.0 * np.abs(g.x))
    with pytest.raises(ValueError):
        initial_potential(g, "wiggle", {})


def test_normalize_mass_hits_target():
    g = Grid(-2.0, 2.0, 129)
    eps = 0.05
    phi = -3.0 * g.x**2
    for target in (0.25, 1.0, 4.0):
        out = normalize_mass(phi, g, eps, target)
        assert float(np.sum(np.exp(out / eps)) * g.h) == pytest.approx(target)
    with pytest.raises(ValueError):
        normalize_mass(phi, g, eps, -1.0)


def test_rhs_matches_direct_assembly(rng):
    g = Grid(-4.0, 4.0, 96)
    env = plateau_env(g)
    kern = CompetitionKernel.build("gaussian", amplitude=0.7, sigma=0.9)
    mut = MutationKernel.build("uniform", 1.0)
    eps = 0.05
    phi = -0.8 * g.x**2 + 0.05 * rng.standard_normal(g.n)
    rhs, u, load = phi_rhs(phi, 0.0, g, env, mut, kern, OFF, eps)
    assert np.allclose(u, np.exp(phi / eps))
    load_direct = np.array([g.h * np.sum(kern.eval(xi - g.x) * u)
                            for xi in g.x])
    assert np.max(np.abs(load - load_direct)) < 1e-12
    jump = mut.apply_potential(TraitField(g, phi, role="potential"), eps)
    assert np.allclose(rhs, env.rate_at(0.0) - load_direct + jump, atol=1e-12)
    # without mutations the rhs is pure selection
    rhs0, _, _ = phi_rhs(phi, 0.0, g, env, None, kern, OFF, eps)
    assert np.allclose(rhs0, env.rate_at(0.0) - load_direct, atol=1e-14)


def test_mass_follows_rescaled_logistic():
    g = Grid(-4.0, 4.0, 256)
    env = plateau_env(g, value=0.5)
    kern = CompetitionKernel.build("constant", amplitude=1.0)
    eps = 0.02
    phi0 = initial_potential(g, "quadratic", {"center": 0.0, "curvature": 0.1})
    traj = run_forward(env, None, kern, OFF, eps, phi0, t_end=0.2,
                       sample_dt=0.01, mass_target=0.6)
    times = traj.times
    masses = np.array([r.mass for r in traj.records])
    oracle = rk4_logistic(0.6, 0.5, 1.0, eps, times)
    assert np.max(np.abs(masses - oracle)) < 2e-6
    assert abs(masses[-1] - 0.5) < 1e-3


def test_zero_competition_gives_exact_linear_growth():
    g = Grid(-4.0, 4.0, 128)
    env = plateau_env(g)
    kern = CompetitionKernel.build("constant", amplitude=0.0)
    eps = 0.05
    phi0 = initial_potential(g, "quadratic", {"center": 0.0, "curvature": 0.5})
    traj = run_forward(env, None, kern, OFF, eps, phi0, t_end=0.1,
                       sample_dt=0.05, mass_target=None)
    final = traj.states[-1].phi
    assert np.max(np.abs(final - (phi0 + 0.1 * env.rate_at(0.0)))) < 1e-12


def test_heun_second_order_self_convergence():
    g = Grid(-4.0, 4.0, 96)
    env = plateau_env(g)
    kern = CompetitionKernel.build("gaussian", amplitude=1.0, sigma=1.0)
    mut = MutationKernel.build("uniform", 1.0)
    eps = 0.1
    phi0 = initial_potential(g, "quadratic", {"center": 0.3, "curvature": 0.4})
    t_end = 0.02

    def final_phi(dt):
        traj = run_forward(env, mut, kern, OFF, eps, phi0, t_end=t_end,
                           sample_dt=t_end, dt=dt, mass_target=1.0)
        return traj.states[-1].phi

    base = t_end / 8
    p0, p1, p2 = final_phi(base), final_phi(base / 2), final_phi(base / 4)
    e1 = np.max(np.abs(p0 - p1))
    e2 = np.max(np.abs(p1 - p2))
    assert 3.0 < e1 / e2 < 5.0


def test_determinism_bitwise(base_plan):
    p = base_plan
    runs = [run_forward(p.env, p.mutation, p.competition, p.correction,
                        p.eps, p.phi0, p.t_end, p.sample_dt,
                        mass_target=p.mass_target)
            for _ in range(2)]
    a, b = runs
    assert all(np.array_equal(sa.phi, sb.phi)
               for (sa, _), (sb, _) in zip(a.samples, b.samples))
    assert [r.dissipation_cum for r in a.records] == \
           [r.dissipation_cum for r in b.records]


def test_zero_horizon_records_single_sample(base_plan):
    p = base_plan
    traj = run_forward(p.env, p.mutation, p.competition, p.correction,
                       p.eps, p.phi0, t_end=0.0, sample_dt=0.02,
                       mass_target=1.0)
    assert len(traj.samples) == 1
    assert traj.records[0].t == 0.0
    assert traj.records[0].mass == pytest.approx(1.0)


def test_sample_cadence_and_mass_positive(base_plan):
    p = base_plan
    traj = run_forward(p.env, p.mutation, p.competition, p.correction,
                       p.eps, p.phi0, p.t_end, p.sample_dt,
                       mass_target=p.mass_target)
    assert np.allclose(traj.times, np.arange(11) * 0.02, atol=1e-12)
    assert all(r.mass > 0 for r in traj.records)


def test_dissipation_cumulative_nondecreasing(base_plan):
    p = base_plan
    traj = run_forward(p.env, p.mutation, p.competition, p.correction,
                       p.eps, p.phi0, p.t_end, p.sample_dt,
                       mass_target=p.mass_target)
    d = np.array([r.dissipation_cum for r in traj.records])
    assert d[0] == 0.0
    assert np.all(np.diff(d) >= 0.0)


def test_switch_flag_recorded_once():
    g = Grid(-4.0, 4.0, 64)
    pre = rate_from_family(g, "plateau",
                           {"plateau_value": 0.4, "plateau_radius": 2.5,
                            "outside_value": -0.6, "ramp_width": 0.75})
    post = rate_from_family(g, "plateau",
                            {"plateau_value": 0.2, "plateau_radius": 2.5,
                             "outside_value": -0.6, "ramp_width": 0.75})
    env = Environment(rate=pre, r0=0.5, R=3.3, R0=2.0, switch_time=0.05,
                      rate_post=post)
    kern = CompetitionKernel.build("constant", amplitude=1.0)
    phi0 = initial_potential(g, "quadratic", {"curvature": 0.3})
    traj = run_forward(env, None, kern, OFF, 0.05, phi0, t_end=0.1,
                       sample_dt=0.025, mass_target=1.0)
    flagged = [r.t for r in traj.records if "switched" in r.flags]
    assert flagged == [0.05]


@pytest.mark.filterwarnings("ignore:overflow")
def test_explosive_step_aborts_with_location_and_partial_trajectory():
    g = Grid(-4.0, 4.0, 64)
    env = plateau_env(g)
    kern = CompetitionKernel.build("gaussian")
    mut = MutationKernel.build("uniform", 1.0)
    phi0 = initial_potential(g, "quadratic", {"curvature": 0.5})
    with pytest.raises(NumericsError) as err:
        # dt pinned at the sample interval is far beyond the stable step
        run_forward(env, mut, kern, OFF, 0.05, phi0, t_end=5.0,
                    sample_dt=5.0, dt=5.0, mass_target=1.0)
    traj = err.value.trajectory
    assert traj.failure is not None
    assert traj.events and traj.events[-1]["kind"] == "abort"
