"""Evolutionarily stable population measures on a candidate trait set.

A stable measure mu on a closed candidate set Omega satisfies

    mu >= 0,   r - I*mu <= 0 on Omega,   r - I*mu = 0 on supp mu,

a linear complementarity system in the atom weights. Two independent
solvers are provided: a pivoting active-set method on the competition Gram
matrix (fast, used inside the limit stepper), and a replicator-mutator flow
whose long-time limits are the same measures (slow, used as a cross-check
and for uniqueness probing). When the competition kernel is strictly
positive definite the measure is unique; the constant kernel is degenerate
and only the competitive load I*mu is pinned down, which the uniqueness
probe compares instead.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment
from .errors import ConfigError, NumericsError
from .grid import SetMask
from .kernels import CompetitionKernel, MutationKernel, convolve_measure

ATOM_TOL = 1e-8  # relative mass below which a candidate node is pruned


@dataclass
class DiscreteMeasure:
    """Finite nonnegative atomic measure: positions (increasing) and weights."""

    xs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.xs = np.atleast_1d(np.asarray(self.xs, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.xs.shape != self.weights.shape:
            raise ConfigError("measure positions and weights differ in length")
        if np.any(np.diff(self.xs) <= 0):
            raise ConfigError("measure positions must be strictly increasing")
        if np.any(self.weights <= 0):
            raise ConfigError("measure weights must be positive")

    @classmethod
    def empty(cls) -> "DiscreteMeasure":
        m = cls.__new__(cls)
        m.xs = np.empty(0)
        m.weights = np.empty(0)
        return m

    @property
    def n_atoms(self) -> int:
        return int(self.xs.size)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def load(self, kernel: CompetitionKernel, eval_x: np.ndarray) -> np.ndarray:
        """Competitive load I * mu at the requested traits."""
        return convolve_measure(kernel, self.xs, self.weights, eval_x)

    def as_dict(self) -> dict:
        return {"atoms": [[float(x), float(w)]
                          for x, w in zip(self.xs, self.weights)],
                "total": self.total}


@dataclass
class EssCertificate:
    """Checkable optimality record for a candidate stable measure."""

    residual_support: float   # max |r - I*mu| over atoms
    residual_domain: float    # max positive part of r - I*mu over Omega
    quadratic_gap: float      # smallest eigenvalue of the atom Gram matrix
    tol_eq: float
    tol_ineq: float
    n_atoms: int
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(
            self.residual_support <= self.tol_eq
            and self.residual_domain <= self.tol_ineq
            and (self.n_atoms == 0 or self.quadratic_gap > 0.0))

    def as_dict(self) -> dict:
        return {"residual_support": self.residual_support,
                "residual_domain": self.residual_domain,
                "quadratic_gap": self.quadratic_gap,
                "tol_eq": self.tol_eq, "tol_ineq": self.tol_ineq,
                "n_atoms": self.n_atoms, "passed": self.passed}


# -- active-set solver -------------------------------------------------------


def solve_complementarity(gram: np.ndarray, r: np.ndarray, tol: float | None = None,
                          warm_start: list[int] | None = None
                          ) -> tuple[np.ndarray, list[int]]:
    """Weights a >= 0 with r - G a <= tol everywhere, = 0 where a > 0.

    Pivots on the most-violated candidate (leftmost on ties); inside each
    pivot, infeasible equality solutions are pulled back along the segment
    from the last feasible point and the nodes that hit zero are dropped.
    A singular Gram submatrix means the competition form is degenerate on
    the active candidates and is reported as such.
    """
    r = np.asarray(r, dtype=float)
    m = r.size
    scale = max(1.0, float(np.max(np.abs(r))) if m else 1.0)
    if tol is None:
        tol = 1e-11 * scale
    alpha = np.zeros(m)
    active: list[int] = []

    def equality_solve(idx: list[int]) -> np.ndarray:
        sub = gram[np.ix_(idx, idx)]
        try:
            np.linalg.cholesky(sub)
        except np.linalg.LinAlgError:
            raise ConfigError(
                "competition Gram matrix is numerically singular on the "
                "active candidate set", hypothesis="competition-positivity") from None
        return np.linalg.solve(sub, r[idx])

    if warm_start:
        active = sorted({int(i) for i in warm_start if 0 <= i < m})
        while active:
            beta = equality_solve(active)
            if np.all(beta > 0.0):
                alpha[active] = beta
                break
            del active[int(np.argmin(beta))]

    for _ in range(5 * m + 20):
        grad = r - gram @ alpha
        if active:
            grad[active] = -np.inf
        j = int(np.argmax(grad))
        if grad[j] <= tol:
            return alpha, active
        active.append(j)
        active.sort()
        # restore feasibility on the enlarged active set: pull the equality
        # solution back toward the last feasible point, drop nodes at zero
        while True:
            beta = equality_solve(active)
            if np.all(beta > 0.0):
                alpha[np.asarray(active)] = beta
                break
            cur = alpha[np.asarray(active)]
            neg = beta <= 0.0
            denom = cur[neg] - beta[neg]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(denom > 0.0, cur[neg] / denom, 0.0)
            theta = float(np.min(ratios))
            cur = np.maximum(cur + theta * (beta - cur), 0.0)
            keep_tol = 1e-14 * max(1.0, float(cur.max()))
            removed = False
            for pos in range(len(active) - 1, -1, -1):
                if neg[pos] and cur[pos] <= keep_tol:
                    alpha[active[pos]] = 0.0
                    del active[pos]
                    removed = True
                else:
                    alpha[active[pos]] = cur[pos]
            if not removed:
                pos = int(np.argmin(beta))
                alpha[active[pos]] = 0.0
                del active[pos]
    raise NumericsError("active-set pivoting failed to converge")


def ess_active_set(omega: SetMask, env: Environment, kernel: CompetitionKernel,
                   t: float = 0.0, tol: float | None = None,
                   warm_start: list[int] | None = None,
                   max_candidates: int = 2000) -> DiscreteMeasure:
    """Stable measure on the candidate nodes of ``omega`` via pivoting."""
    idx = omega.indices
    if idx.size > max_candidates:
        raise ConfigError(
            f"candidate set has {idx.size} nodes, above the active-set "
            f"budget of {max_candidates}")
    if idx.size == 0:
        return DiscreteMeasure.empty()
    xs = omega.grid.x[idx]
    r = env.rate_at(t)[idx]
    if float(np.max(r)) <= 0.0:
        return DiscreteMeasure.empty()
    gram = kernel.gram(xs)
    alpha, _ = solve_complementarity(gram, r, tol=tol, warm_start=warm_start)
    keep = alpha > ATOM_TOL * max(alpha.sum(), 1e-300)
    return DiscreteMeasure(xs[keep], alpha[keep]) if keep.any() else DiscreteMeasure.empty()


def ess_verify(measure: DiscreteMeasure, omega: SetMask, env: Environment,
               kernel: CompetitionKernel, t: float = 0.0,
               tol_eq: float = 1e-7, tol_ineq: float = 1e-7) -> EssCertificate:
    """Residuals and positivity margin for a candidate measure."""
    g = omega.grid
    r_grid = env.rate_at(t)
    if measure.n_atoms:
        r_atoms = g.interp(r_grid, measure.xs)
        load_atoms = measure.load(kernel, measure.xs)
        residual_support = float(np.max(np.abs(r_atoms - load_atoms)))
        quadratic_gap = float(np.min(np.linalg.eigvalsh(kernel.gram(measure.xs))))
    else:
        residual_support = 0.0
        quadratic_gap = float("inf")
    idx = omega.indices
    if idx.size:
        load_omega = measure.load(kernel, g.x[idx])
        residual_domain = float(np.max(np.maximum(r_grid[idx] - load_omega, 0.0)))
    else:
        residual_domain = 0.0
    return EssCertificate(residual_support, residual_domain, quadratic_gap,
                          tol_eq, tol_ineq, measure.n_atoms)


# -- replicator-mutator flow -------------------------------------------------


def _spread_matrix(xs: np.ndarray, kernel: MutationKernel,
                   scale: float) -> np.ndarray:
    """Column-stochastic redistribution of mass by jumps of size scale * z.

    Off-candidate targets are clamped to the nearest candidate, so every
    column still sums to one and the flow conserves mass.
    """
    m = xs.size
    S = np.zeros((m, m))
    for k in range(m):
        for zj, wkj in zip(kernel.z, kernel.wk):
            pos = xs[k] + scale * zj
            if pos <= xs[0]:
                S[0, k] += wkj
            elif pos >= xs[-1]:
                S[m - 1, k] += wkj
            else:
                j = int(np.searchsorted(xs, pos))
                frac = (pos - xs[j - 1]) / (xs[j] - xs[j - 1])
                S[j - 1, k] += wkj * (1.0 - frac)
                S[j, k] += wkj * frac
    return S


def _prune_to_atoms(idx: np.ndarray, xs: np.ndarray, weights: np.ndarray
                    ) -> DiscreteMeasure:
    """Cluster surviving nodes by grid contiguity, collapse to centroids."""
    total = float(weights.sum())
    if total <= 0.0:
        return DiscreteMeasure.empty()
    keep = weights > ATOM_TOL * total
    if not keep.any():
        return DiscreteMeasure.empty()
    kept_idx = idx[keep]
    kept_x = xs[keep]
    kept_w = weights[keep]
    breaks = np.flatnonzero(np.diff(kept_idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks + 1, [kept_idx.size]))
    atom_x, atom_w = [], []
    for s, e in zip(starts, ends):
        w = kept_w[s:e]
        atom_w.append(float(w.sum()))
        atom_x.append(float((kept_x[s:e] * w).sum() / w.sum()))
    order = np.argsort(atom_x)
    return DiscreteMeasure(np.asarray(atom_x)[order], np.asarray(atom_w)[order])


def ess_replicator(omega: SetMask, env: Environment, kernel: CompetitionKernel,
                   mutation_kernel: MutationKernel, mutation_scale: float,
                   mutation_weight: float = 1e-2, n_stages: int = 10,
                   t: float = 0.0, init_weights: np.ndarray | None = None,
                   stall_tol: float = 1e-9, domain_tol: float = 1e-7,
                   max_iter_stage: int = 4000) -> DiscreteMeasure:
    """Stable measure as the settled state of a replicator-mutator flow.

    Weights follow dw/dt = (r - I*mu) w plus a small mutation exchange
    between nearby candidates; the exchange weight is annealed through
    ``n_stages`` halvings and then switched off so the support sharpens to
    the exact complementarity solution. Each stage runs until the selection
    residual max |(r - I*mu) w| stalls below tolerance.
    """
    idx = omega.indices
    if idx.size == 0:
        return DiscreteMeasure.empty()
    g = omega.grid
    xs = g.x[idx]
    r = env.rate_at(t)[idx]
    if float(np.max(r)) <= 0.0:
        return DiscreteMeasure.empty()
    gram = kernel.gram(xs)
    peak = max(kernel.peak, 1e-12)
    total0 = max(float(np.max(r)) / peak, 1e-3)
    if init_weights is None:
        w = np.full(idx.size, total0 / idx.size)
    else:
        w = np.asarray(init_weights, dtype=float).copy()
        if w.shape != xs.shape or np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("replicator initial weights must be nonnegative "
                              "with positive total, one per candidate")
        w *= total0 / w.sum()
    spread = _spread_matrix(xs, mutation_kernel, mutation_scale)
    scale = max(1.0, float(np.max(np.abs(r))))
    stages = [mutation_weight * 0.5**k for k in range(n_stages)] + [0.0]
    for stage_w in stages:
        iters = max_iter_stage if stage_w == 0.0 else max_iter_stage // 2
        for it in range(iters):
            fitness = r - gram @ w
            dt = 0.5 / max(1.0, float(np.max(np.abs(fitness))))
            w = w * np.exp(dt * fitness)
            if stage_w > 0.0:
                mix = stage_w * dt
                w = (1.0 - mix) * w + mix * (spread @ w)
            if it % 16 == 15:
                total = float(w.sum())
                residual = float(np.max(np.abs(fitness) * w)) / max(total, 1e-12)
                settled = residual <= stall_tol * scale
                if stage_w == 0.0:
                    settled = settled and float(np.max(fitness)) <= domain_tol * scale
                if settled:
                    break
    return _prune_to_atoms(idx, xs, w)


# -- uniqueness probing -------------------------------------------------------


def matched_atom_tv(a: DiscreteMeasure, b: DiscreteMeasure,
                    match_tol: float) -> float:
    """Total-variation-style distance after pairing atoms within match_tol."""
    i = j = 0
    dist = 0.0
    while i < a.n_atoms and j < b.n_atoms:
        dx = a.xs[i] - b.xs[j]
        if abs(dx) <= match_tol:
            dist += abs(a.weights[i] - b.weights[j])
            i += 1
            j += 1
        elif dx < 0:
            dist += a.weights[i]
            i += 1
        else:
            dist += b.weights[j]
            j += 1
    dist += float(a.weights[i:].sum()) + float(b.weights[j:].sum())
    return float(dist)


@dataclass
class UniquenessReport:
    degenerate: bool
    metric: str
    max_pairwise: float
    pairwise: list
    totals: list
    measures: list

    def as_dict(self) -> dict:
        return {"degenerate": self.degenerate, "metric": self.metric,
                "max_pairwise": self.max_pairwise,
                "pairwise": self.pairwise, "totals": self.totals,
                "measures": [m.as_dict() for m in self.measures]}


def _worker_count(n_tasks: int) -> int:
    cap = os.environ.get("SIMCTL_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n_tasks, limit))


def ess_uniqueness_probe(omega: SetMask, env: Environment,
                         kernel: CompetitionKernel,
                         mutation_kernel: MutationKernel, mutation_scale: float,
                         n_inits: int = 8, seed: int = 0, t: float = 0.0,
                         match_tol: float | None = None,
                         **replicator_kwargs) -> UniquenessReport:
    """Replicator runs from randomized starts, compared pairwise.

    Strictly positive-definite competition: measures are compared by
    matched-atom total variation. Degenerate (constant) competition: only
    the competitive load I*mu is determined, so loads are compared instead.
    """
    idx = omega.indices
    if match_tol is None:
        match_tol = 2.0 * omega.grid.h

    def one(i: int) -> DiscreteMeasure:
        rng = np.random.default_rng(seed + 1000 * i)
        init = rng.uniform(0.1, 1.0, idx.size)
        return ess_replicator(omega, env, kernel, mutation_kernel,
                              mutation_scale, t=t, init_weights=init,
                              **replicator_kwargs)

    with ThreadPoolExecutor(max_workers=_worker_count(n_inits)) as pool:
        measures = list(pool.map(one, range(n_inits)))

    pairwise = []
    if kernel.degenerate:
        metric = "competitive_load_sup"
        loads = [m.load(kernel, omega.grid.x) for m in measures]
        for i in range(n_inits):
            for j in range(i + 1, n_inits):
                pairwise.append(float(np.max(np.abs(loads[i] - loads[j]))))
    else:
        metric = "matched_atom_tv"
        for i in range(n_inits):
            for j in range(i + 1, n_inits):
                pairwise.append(matched_atom_tv(measures[i], measures[j], match_tol))
    max_pairwise = max(pairwise) if pairwise else 0.0
    return UniquenessReport(kernel.degenerate, metric, max_pairwise, pairwise,
                            [m.total for m in measures], measures)


def near_root_measure(env: Environment, kernel: CompetitionKernel,
                      measure: DiscreteMeasure, nu_values,
                      t: float = 0.0) -> dict:
    """Lebesgue measure of {x : |r - I*mu| <= nu} for each probe level nu.

    Diagnostic only: the model assumes this stays controlled as nu -> 0 but
    offers no constructive check, so the sweep is reported, not asserted.
    """
    g = env.grid
    gap = np.abs(env.rate_at(t) - measure.load(kernel, g.x))
    return {float(nu): float(g.h * np.count_nonzero(gap <= nu))
            for nu in nu_values}
