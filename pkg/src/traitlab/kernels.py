"""Mutation and competition kernels and the operators they induce.

The mutation kernel K is a nonnegative, compactly supported jump density
with vanishing first moment. It induces three operators used throughout:

- density form      (M_e f)(x) = (1/e) * int K(z) (f(x+e z) - f(x)) dz
- potential form    (G_e p)(x) = int K(z) (exp((p(x+e z)-p(x))/e) - 1) dz
- scale-free symbol H(q)       = int K(z) (exp(q z) - 1) dz

``H`` is convex, vanishes at 0, and is nonnegative because the first moment
of K is zero. All integrals are evaluated with a fixed Gauss-Legendre rule
whose nodes are recentered once so the discrete first moment is exactly 0,
and whose weights are normalized so the discrete mass is exactly 1.

The competition kernel I is an even, positive interaction profile; its
convolution against a density gives the competitive load felt at each trait.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SaturationError
from .grid import Grid, TraitField

_EXP_GUARD = 700.0  # exp overflow threshold; exceeding it is a hard error

_QUAD_NODES = 32


def _bump(z: np.ndarray, s: float) -> np.ndarray:
    """Smooth compactly supported profile exp(-1/(1-(z/s)^2)) on (-s, s)."""
    out = np.zeros_like(z)
    inside = np.abs(z) < s
    t = (z[inside] / s) ** 2
    out[inside] = np.exp(-1.0 / (1.0 - t))
    return out


_MUTATION_FAMILIES = {
    "uniform": lambda z, s: np.where(np.abs(z) <= s, 0.5 / s, 0.0),
    "cosine": lambda z, s: np.where(
        np.abs(z) <= s, (np.pi / (4.0 * s)) * np.cos(np.pi * z / (2.0 * s)), 0.0),
    "bump": _bump,
}


@dataclass
class MutationKernel:
    """Quadrature view of a jump kernel: nodes ``z``, combined weights ``wk``.

    ``wk[j]`` already folds the quadrature weight and the kernel value, so a
    kernel integral int K(z) g(z) dz is evaluated as ``wk @ g(z)``.
    """

    family: str
    support_radius: float
    z: np.ndarray
    wk: np.ndarray
    moment2: float = field(init=False)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.wk = np.asarray(self.wk, dtype=float)
        self.moment2 = float(self.wk @ self.z**2)

    @classmethod
    def build(cls, family: str, support_radius: float,
              profile=None, n_nodes: int = _QUAD_NODES) -> "MutationKernel":
        if support_radius <= 0:
            raise ConfigError("mutation kernel needs support_radius > 0")
        if family == "custom":
            if profile is None:
                raise ConfigError("custom mutation kernel needs a profile callable")
            func = profile
        else:
            try:
                func = _MUTATION_FAMILIES[family]
            except KeyError:
                raise ConfigError(f"unknown mutation kernel family {family!r}") from None
            profile = None
        nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
        z = nodes * support_radius
        w = weights * support_radius
        k = func(z, support_radius) if profile is None else np.asarray(func(z), dtype=float)
        if np.any(k < 0):
            raise ConfigError("mutation kernel values must be nonnegative")
        wk = w * k
        mass = float(wk.sum())
        if mass <= 0:
            raise ConfigError("mutation kernel has zero mass on its support")
        wk = wk / mass
        # recenter nodes so the discrete first moment vanishes exactly
        z = z - float(wk @ z)
        return cls(family=family, support_radius=support_radius, z=z, wk=wk)

    # -- scale-free symbol -------------------------------------------------

    def hamiltonian(self, p):
        """H(p) = sum wk * (exp(p z) - 1); exact 0 at p = 0, convex, >= 0."""
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        worst = np.max(np.abs(p_arr)) * np.max(np.abs(self.z))
        if worst > _EXP_GUARD:
            j = int(np.argmax(np.abs(p_arr)))
            raise SaturationError(
                f"hamiltonian exponent {worst:.3g} exceeds overflow guard "
                f"for slope {p_arr[j]:.6g}")
        out = np.expm1(np.outer(p_arr, self.z)) @ self.wk
        return float(out[0]) if np.isscalar(p) else out

    def hamiltonian_deriv(self, p):
        """H'(p) = sum wk * z * exp(p z)."""
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        out = np.exp(np.outer(p_arr, self.z)) @ (self.wk * self.z)
        return float(out[0]) if np.isscalar(p) else out

    def max_deriv(self, p_max: float) -> float:
        """max |H'| over [-p_max, p_max]; H' is increasing, so check the ends."""
        return float(max(abs(self.hamiltonian_deriv(-p_max)),
                         abs(self.hamiltonian_deriv(p_max))))

    # -- grid operators ----------------------------------------------------

    def shifted_values(self, field: TraitField, eps: float) -> np.ndarray:
        """Matrix f(x_i + eps * z_j), interpolated, shape (n, n_nodes)."""
        g = field.grid
        out = np.empty((g.n, self.z.size))
        for j, zj in enumerate(self.z):
            out[:, j] = g.interp(field.values, g.x + eps * zj)
        return out

    def apply_density(self, field: TraitField, eps: float) -> TraitField:
        """(1/e) int K(z)(f(x+e z) - f(x)) dz on the grid."""
        shifted = self.shifted_values(field, eps)
        vals = (shifted - field.values[:, None]) @ self.wk / eps
        return TraitField(field.grid, vals, "rate")

    def apply_potential(self, field: TraitField, eps: float) -> np.ndarray:
        """int K(z)(exp((p(x+e z) - p(x))/e) - 1) dz on the grid.

        Exponents are (p(x+e z) - p(x))/e, which stay of order slope * z for
        Lipschitz potentials; exceeding the overflow guard is a hard error
        reported at the offending node.
        """
        g = field.grid
        shifted = self.shifted_values(field, eps)
        expo = (shifted - field.values[:, None]) / eps
        worst = float(expo.max())
        if worst > _EXP_GUARD:
            i = int(np.unravel_index(np.argmax(expo), expo.shape)[0])
            raise SaturationError(
                f"potential-jump exponent {worst:.3g} exceeds overflow guard",
                x=float(g.x[i]), index=i)
        return np.expm1(expo) @ self.wk


def hamiltonian_eval(kernel: MutationKernel, p):
    return kernel.hamiltonian(p)


def mutation_apply(kernel: MutationKernel, field: TraitField, eps: float) -> TraitField:
    return kernel.apply_density(field, eps)


def heps_apply(kernel: MutationKernel, field: TraitField, eps: float) -> np.ndarray:
    return kernel.apply_potential(field, eps)


# ---------------------------------------------------------------------------


@dataclass
class CompetitionKernel:
    """Even interaction profile with a positivity certificate.

    ``certificate`` is "analytic" for the closed-form families (gaussian is
    strictly positive definite; constant is positive semidefinite and flagged
    ``degenerate``), or "spot-checked" for custom samples, where random
    coefficient vectors are tested against the induced quadratic form.
    """

    family: str
    params: dict
    certificate: str
    degenerate: bool
    _eval: callable

    @classmethod
    def build(cls, family: str, *, amplitude: float = 1.0, sigma: float = 1.0,
              sample_x: np.ndarray | None = None,
              sample_values: np.ndarray | None = None,
              rng_seed: int = 0) -> "CompetitionKernel":
        if family == "gaussian":
            if amplitude <= 0 or sigma <= 0:
                raise ConfigError(
                    "gaussian competition needs amplitude > 0 and sigma > 0",
                    hypothesis="competition-positivity")
            fn = lambda dx: amplitude * np.exp(-np.asarray(dx, dtype=float) ** 2
                                               / (2.0 * sigma**2))
            return cls(family, {"amplitude": amplitude, "sigma": sigma},
                       "analytic", False, fn)
        if family == "constant":
            if amplitude < 0:
                raise ConfigError("constant competition needs amplitude >= 0",
                                  hypothesis="competition-positivity")
            fn = lambda dx: np.full_like(np.asarray(dx, dtype=float), amplitude)
            return cls(family, {"amplitude": amplitude}, "analytic", True, fn)
        if family == "custom":
            if sample_x is None or sample_values is None:
                raise ConfigError("custom competition needs sample_x and sample_values")
            sx = np.asarray(sample_x, dtype=float)
            sv = np.asarray(sample_values, dtype=float)
            fn = lambda dx: np.interp(np.abs(np.asarray(dx, dtype=float)), sx, sv)
            kern = cls(family, {"n_samples": len(sx)}, "spot-checked", False, fn)
            kern._spot_check(rng_seed)
            return kern
        raise ConfigError(f"unknown competition kernel family {family!r}")

    def _spot_check(self, seed: int, n_vectors: int = 32, n_points: int = 24):
        rng = np.random.default_rng(seed)
        xs = np.sort(rng.uniform(-3.0, 3.0, n_points))
        gram = self.gram(xs)
        for _ in range(n_vectors):
            c = rng.standard_normal(n_points)
            if c @ gram @ c <= 0:
                raise ConfigError(
                    "custom competition kernel fails the positivity spot check",
                    hypothesis="competition-positivity")

    def eval(self, dx):
        return self._eval(dx)

    @property
    def peak(self) -> float:
        return float(self._eval(np.zeros(1))[0])

    def gram(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return self._eval(xs[:, None] - xs[None, :])


def convolve(kernel: CompetitionKernel, density: TraitField) -> TraitField:
    """(I * u)(x_i) = h * sum_k I(x_i - x_k) u(x_k), via discrete convolution.

    On a uniform grid the offsets x_i - x_k only take 2n-1 values, so the
    double sum collapses to one np.convolve call against the kernel sampled
    on the offset grid.
    """
    g = density.grid
    offsets = g.h * np.arange(-(g.n - 1), g.n)
    profile = kernel.eval(offsets)
    full = np.convolve(density.values, profile)
    vals = full[g.n - 1:2 * g.n - 1] * g.h
    return TraitField(g, vals, "rate")


def convolve_measure(kernel: CompetitionKernel, atom_x: np.ndarray,
                     atom_w: np.ndarray, eval_x: np.ndarray) -> np.ndarray:
    """(I * mu)(x) = sum_j I(x - x_j) a_j for an atomic measure."""
    atom_x = np.asarray(atom_x, dtype=float)
    atom_w = np.asarray(atom_w, dtype=float)
    eval_x = np.asarray(eval_x, dtype=float)
    if atom_x.size == 0:
        return np.zeros_like(eval_x)
    return kernel.eval(eval_x[:, None] - atom_x[None, :]) @ atom_w
