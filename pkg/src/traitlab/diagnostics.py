"""Per-sample diagnostics, uniform-bound checking, and run comparison.

The quantities recorded here are exactly the ones the theory bounds
uniformly in the scale parameter: total mass, potential maximum, Lipschitz
constant, one-sided curvature, the jump functional minimum, cumulative
selection dissipation, and the geometry of the near-zero level set. Bound
constants are calibrated once on a reference run (largest scale parameter)
and then frozen; smaller scales must pass with the same constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ess import DiscreteMeasure
from .grid import SetMask, TraitField, semi_distance


@dataclass
class DiagnosticsRecord:
    """Scalar diagnostics for one sampled state, plus the level mask."""

    t: float
    mass: float
    max_phi: float
    lipschitz: float
    min_second_diff: float
    min_jump_functional: float
    dissipation_cum: float
    level_mask: SetMask
    component_count: int
    atoms: DiscreteMeasure
    reanchor: float = 0.0
    flags: tuple = ()

    def finite(self) -> bool:
        vals = (self.mass, self.max_phi, self.lipschitz, self.min_second_diff,
                self.min_jump_functional, self.dissipation_cum, self.reanchor)
        return all(math.isfinite(v) for v in vals)


@dataclass
class Trajectory:
    """Sampled run output: (state, record) pairs plus run-level events."""

    kind: str                       # "forward" | "limit"
    eps: float | None
    samples: list = field(default_factory=list)
    events: list = field(default_factory=list)
    failure: str | None = None

    @property
    def records(self) -> list:
        return [rec for _, rec in self.samples]

    @property
    def states(self) -> list:
        return [st for st, _ in self.samples]

    @property
    def times(self) -> np.ndarray:
        return np.array([rec.t for _, rec in self.samples])


def field_lipschitz(values: np.ndarray, h: float) -> float:
    if values.size < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(values)))) / h


def min_second_difference(values: np.ndarray, h: float) -> float:
    if values.size < 3:
        return 0.0
    return float(np.min(values[2:] - 2.0 * values[1:-1] + values[:-2])) / h**2


def extract_atoms(phi: TraitField, level: float,
                  weights: np.ndarray | None = None) -> DiscreteMeasure:
    """Near-peak components of the potential collapsed to weighted atoms.

    Each connected component of {phi >= level} becomes one atom located at
    the weight centroid (density weights for finite-scale runs, potential
    offsets when no weights are given) carrying the component's mass.
    """
    g = phi.grid
    mask = SetMask(g, phi.values >= level)
    comps = mask.components()
    if not comps:
        return DiscreteMeasure.empty()
    if weights is None:
        weights = np.exp(phi.values - float(np.max(phi.values)))
    xs, ws = [], []
    for i0, i1 in comps:
        w = weights[i0:i1 + 1]
        total = float(w.sum()) * g.h
        if total <= 0.0:
            continue
        xs.append(float((g.x[i0:i1 + 1] * w).sum() / w.sum()))
        ws.append(total)
    if not xs:
        return DiscreteMeasure.empty()
    order = np.argsort(xs)
    return DiscreteMeasure(np.asarray(xs)[order], np.asarray(ws)[order])


def dissipation_increment(rate: np.ndarray, load: np.ndarray, u: np.ndarray,
                          h: float, dt: float, eps: float) -> float:
    """(dt/e) * h * sum (r - I*u)^2 u, one explicit-step quadrature cell."""
    gap = rate - load
    return float(dt / eps * h * np.sum(gap * gap * u))


# -- uniform a priori bounds --------------------------------------------------

CHECK_NAMES = ("mass-window", "max-potential", "lipschitz", "semiconvexity",
               "jump-functional", "compact-support")


@dataclass
class BoundConstants:
    """Frozen constants entering the six uniform bound checks."""

    c_mass: float
    c_phi: float
    c_lip: float
    c_curv: float
    c_jump: float
    edge_fraction: float = 0.05

    def as_dict(self) -> dict:
        return {"c_mass": self.c_mass, "c_phi": self.c_phi,
                "c_lip": self.c_lip, "c_curv": self.c_curv,
                "c_jump": self.c_jump, "edge_fraction": self.edge_fraction}


@dataclass
class BoundCheck:
    name: str
    passed: bool
    observed: float
    bound: float


@dataclass
class BoundReport:
    eps: float
    checks: list
    all_passed: bool = field(init=False)

    def __post_init__(self):
        self.all_passed = all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {"eps": self.eps, "all_passed": self.all_passed,
                "checks": [{"name": c.name, "passed": c.passed,
                            "observed": c.observed, "bound": c.bound}
                           for c in self.checks]}


def calibrate_bound_constants(records: list, eps: float, depth: float,
                              margin: float = 1.5) -> BoundConstants:
    """Constants from observed extrema of a reference run, with margin.

    Floors keep degenerate observations (exactly zero curvature deficit,
    say) from producing constants no later run could satisfy.
    """
    masses = np.array([r.mass for r in records])
    c_mass = margin * max(float(masses.max()), 1.0 / float(masses.min()))
    phi_excess = max((r.max_phi - eps * math.log(1.0 / eps)) / eps
                     for r in records)
    c_phi = margin * max(phi_excess, 1.0)
    c_lip = margin * max(max(r.lipschitz for r in records), 0.1)
    curv_deficit = max(max(-r.min_second_diff for r in records), 0.0)
    c_curv = margin * max(curv_deficit * depth, 0.1)
    jump_deficit = max(max(-r.min_jump_functional for r in records), 0.0)
    c_jump = margin * max(jump_deficit * depth / eps, 0.1)
    return BoundConstants(c_mass, c_phi, c_lip, c_curv, c_jump)


def check_apriori(records: list, eps: float, depth: float,
                  constants: BoundConstants) -> BoundReport:
    """Six uniform-bound checks against frozen constants.

    Requires at least one sampled record with finite diagnostics; the level
    mask must stay clear of the outer ``edge_fraction`` of nodes so the
    compact-support check is meaningful on this grid.
    """
    if not records:
        raise ValueError("no records to check")
    if not all(r.finite() for r in records):
        raise ValueError("diagnostics contain non-finite values; run aborted?")
    masses = np.array([r.mass for r in records])
    checks = [
        BoundCheck("mass-window",
                   bool(masses.min() >= 1.0 / constants.c_mass
                        and masses.max() <= constants.c_mass),
                   float(max(masses.max(), 1.0 / masses.min())),
                   constants.c_mass),
        BoundCheck("max-potential",
                   all(r.max_phi <= eps * math.log(1.0 / eps)
                       + constants.c_phi * eps for r in records),
                   max(r.max_phi for r in records),
                   eps * math.log(1.0 / eps) + constants.c_phi * eps),
        BoundCheck("lipschitz",
                   all(r.lipschitz <= constants.c_lip for r in records),
                   max(r.lipschitz for r in records), constants.c_lip),
        BoundCheck("semiconvexity",
                   all(r.min_second_diff >= -constants.c_curv / depth
                       for r in records),
                   min(r.min_second_diff for r in records),
                   -constants.c_curv / depth),
        BoundCheck("jump-functional",
                   all(r.min_jump_functional >= -constants.c_jump * eps / depth
                       for r in records),
                   min(r.min_jump_functional for r in records),
                   -constants.c_jump * eps / depth),
    ]
    # compact support: the near-zero set must stay inside the inner nodes
    n = records[0].level_mask.grid.n
    edge = max(1, int(constants.edge_fraction * n))
    inside = True
    worst = 0.0
    for r in records:
        idx = r.level_mask.indices
        if idx.size:
            lo, hi = int(idx[0]), int(idx[-1])
            inside = inside and lo >= edge and hi < n - edge
            worst = max(worst, float(edge - lo), float(hi - (n - 1 - edge)))
    checks.append(BoundCheck("compact-support", bool(inside), worst, 0.0))
    return BoundReport(eps, checks)


# -- probes and cross-scale comparison ----------------------------------------


def probe_mass_series(trajectory: Trajectory, lo: float, hi: float) -> np.ndarray:
    """Population mass inside the probe window [lo, hi] at each sample."""
    out = []
    for state, _ in trajectory.samples:
        g = state.grid
        sel = (g.x >= lo) & (g.x <= hi)
        out.append(float(np.sum(state.u[sel]) * g.h))
    return np.asarray(out)


def ghost_population_probe(trajectories: dict, lo: float, hi: float,
                           switch_time: float, threshold: float,
                           subunit_bound: float) -> dict:
    """Re-emergence report for a suppressed trait window across runs.

    For each named run: the probe-mass series, whether it ever exceeded
    ``threshold`` after the landscape switch (re-emergence), whether it
    stayed below ``subunit_bound`` at every sample (sub-unit regime), the
    first re-emergence time if any, and the final total mass (exposes
    whole-population extinction under too-aggressive corrections).
    """
    report = {"probe": [lo, hi], "switch_time": switch_time,
              "threshold": threshold, "subunit_bound": subunit_bound,
              "runs": {}}
    for name, traj in trajectories.items():
        times = traj.times
        series = probe_mass_series(traj, lo, hi)
        after = times >= switch_time
        emerged = bool(np.any(series[after] > threshold)) if after.any() else False
        t_emerge = None
        if emerged:
            t_emerge = float(times[after][np.argmax(series[after] > threshold)])
        report["runs"][name] = {
            "times": times.tolist(),
            "probe_mass": series.tolist(),
            "re_emerged": emerged,
            "ghost_extinct": not emerged,
            "re_emergence_time": t_emerge,
            "max_after_switch": float(series[after].max()) if after.any() else 0.0,
            "always_subunit": bool(np.all(series < subunit_bound)),
            "final_total_mass": traj.records[-1].mass if traj.samples else 0.0,
        }
    return report


def _aligned_records(forward: Trajectory, limit: Trajectory):
    tf = forward.times
    tl = limit.times
    if len(tf) != len(tl) or np.max(np.abs(tf - tl)) > 1e-9:
        raise ValueError("trajectories must be sampled at matching times")
    return zip(forward.samples, limit.samples)


def eps_limit_comparison(forward_runs: list, limit_traj: Trajectory,
                         set_probe: float = 0.25) -> dict:
    """Distance report between finite-scale runs and the limit run.

    Per run: sup over time of the sup-norm gap in competitive load, the
    L2-in-time version, the sup-norm potential gap, and the fraction of
    samples where the level-set semi-distances exceed ``set_probe``. The
    load gap is the convergence metric the sweep gate checks for
    monotonicity.
    """
    out = {"set_probe": set_probe, "runs": []}
    for traj in forward_runs:
        sup_load = 0.0
        l2_load = 0.0
        sup_phi = 0.0
        exceed = 0
        count = 0
        prev_t = None
        for (fstate, frec), (lstate, lrec) in _aligned_records(traj, limit_traj):
            gap = float(np.max(np.abs(fstate.comp_load - lstate.comp_load)))
            sup_load = max(sup_load, gap)
            if prev_t is not None:
                l2_load += gap * gap * (fstate.t - prev_t)
            prev_t = fstate.t
            sup_phi = max(sup_phi, float(np.max(np.abs(fstate.phi - lstate.phi))))
            d1 = semi_distance(frec.level_mask, lrec.level_mask)
            d2 = semi_distance(lrec.level_mask, frec.level_mask)
            exceed += int(max(d1, d2) > set_probe)
            count += 1
        out["runs"].append({
            "eps": traj.eps,
            "sup_load_gap": sup_load,
            "l2_load_gap": math.sqrt(l2_load),
            "sup_phi_gap": sup_phi,
            "set_distance_exceed_fraction": exceed / max(count, 1),
        })
    gaps = [r["sup_load_gap"] for r in out["runs"]]
    out["monotone_load_gap"] = all(b < a for a, b in zip(gaps, gaps[1:]))
    phi_gaps = [r["sup_phi_gap"] for r in out["runs"]]
    out["monotone_phi_gap"] = all(b < a for a, b in zip(phi_gaps, phi_gaps[1:]))
    return out
