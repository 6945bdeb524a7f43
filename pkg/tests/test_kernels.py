"""Mutation/competition kernels: quadrature, symbol, convolution.

Oracles: dense double-loop convolution, high-resolution trapezoid
quadrature for the jump symbol, and the closed form sinh(p)/p - 1 for the
uniform kernel on [-1, 1].
"""

from __future__ import annotations

import numpy as np
import pytest

from traitlab.errors import ConfigError, SaturationError
from traitlab.grid import Grid, TraitField
from traitlab.kernels import (CompetitionKernel, MutationKernel, convolve,
                              convolve_measure)

# frozen closed-form value: sinh(2)/2 - 1 for the uniform kernel on [-1, 1]
UNIFORM_H_AT_2 = 0.8134302039235093


def dense_symbol(kernel: MutationKernel, p: float, m: int = 200_001) -> float:
    """Trapezoid quadrature of int K(z)(exp(p z) - 1) dz, independent rule."""
    s = kernel.support_radius
    z = np.linspace(-s, s, m)
    if kernel.family == "uniform":
        k = np.full(m, 0.5 / s)
    elif kernel.family == "cosine":
        k = (np.pi / (4 * s)) * np.cos(np.pi * z / (2 * s))
    else:
        raise ValueError(kernel.family)
    return float(np.trapezoid(k * np.expm1(p * z), z))


def test_uniform_symbol_matches_closed_form():
    k = MutationKernel.build("uniform", 1.0)
    ps = np.array([-3.0, -1.0, -0.25, 0.5, 1.0, 2.0, 3.4])
    exact = np.sinh(ps) / ps - 1.0
    assert np.max(np.abs(k.hamiltonian(ps) - exact)) < 1e-10
    assert k.hamiltonian(2.0) == pytest.approx(UNIFORM_H_AT_2, abs=1e-12)


def test_symbol_zero_at_origin_nonnegative_convex():
    for family in ("uniform", "cosine", "bump"):
        k = MutationKernel.build(family, 0.7)
        assert k.hamiltonian(0.0) == 0.0
        ps = np.linspace(-4, 4, 41)
        vals = k.hamiltonian(ps)
        assert np.all(vals >= 0.0)
        # convexity along the sampled second differences
        assert np.all(np.diff(vals, 2) >= -1e-12)
        # even kernel: even symbol
        assert np.allclose(vals, k.hamiltonian(-ps))


def test_symbol_matches_dense_quadrature():
    for family in ("uniform", "cosine"):
        k = MutationKernel.build(family, 1.3)
        for p in (0.3, 1.0, 2.5):
            assert k.hamiltonian(p) == pytest.approx(dense_symbol(k, p), abs=1e-8)


def test_quadrature_moments():
    for family in ("uniform", "cosine", "bump"):
        k = MutationKernel.build(family, 0.9)
        assert k.wk.sum() == pytest.approx(1.0, abs=1e-14)
        assert abs(k.wk @ k.z) < 1e-15
        assert np.all(k.wk >= 0)


def test_symbol_derivative_and_max():
    k = MutationKernel.build("uniform", 1.0)
    dp = 1e-6
    for p in (-2.0, 0.0, 1.5):
        fd = (k.hamiltonian(p + dp) - k.hamiltonian(p - dp)) / (2 * dp)
        assert k.hamiltonian_deriv(p) == pytest.approx(fd, abs=1e-6)
    grid_p = np.linspace(-3.0, 3.0, 601)
    assert k.max_deriv(3.0) == pytest.approx(
        np.max(np.abs(k.hamiltonian_deriv(grid_p))), abs=1e-12)


def test_symbol_overflow_guard():
    k = MutationKernel.build("uniform", 1.0)
    with pytest.raises(SaturationError):
        k.hamiltonian(800.0)


def test_mutation_kernel_rejects_bad_input():
    with pytest.raises(ConfigError):
        MutationKernel.build("uniform", -1.0)
    with pytest.raises(ConfigError):
        MutationKernel.build("no-such-family", 1.0)
    with pytest.raises(ConfigError):
        MutationKernel.build("custom", 1.0, profile=lambda z: -np.ones_like(z))


def test_apply_density_linear_field_is_exact():
    # f(x) = c + m x: int K(z)(f(x+ez) - f(x)) dz / e = m * int z K = 0
    g = Grid(-2.0, 2.0, 64)
    k = MutationKernel.build("uniform", 0.5)
    f = TraitField(g, 0.3 + 1.7 * g.x, role="rate")
    inner = slice(8, 56)  # clamped extension spoils the outermost nodes
    vals = k.apply_density(f, 0.1).values
    assert np.max(np.abs(vals[inner])) < 1e-12


def test_apply_potential_linear_profile_gives_symbol():
    # p(x) = p0 + q x: exponent is q z exactly, so the operator equals H(q)
    g = Grid(-3.0, 3.0, 128)
    k = MutationKernel.build("uniform", 1.0)
    q = 1.3
    f = TraitField(g, -0.2 + q * g.x, role="potential")
    vals = k.apply_potential(f, 0.05)
    inner = slice(30, 98)
    assert np.max(np.abs(vals[inner] - k.hamiltonian(q))) < 1e-10


def test_apply_potential_overflow_located():
    g = Grid(-1.0, 1.0, 64)
    k = MutationKernel.build("uniform", 1.0)
    steep = TraitField(g, 2000.0 * g.x, role="potential")
    with pytest.raises(SaturationError) as err:
        k.apply_potential(steep, 0.01)
    assert err.value.index is not None


def test_convolution_matches_double_loop(rng):
    g = Grid(-1.5, 2.5, 96)
    kern = CompetitionKernel.build("gaussian", amplitude=0.8, sigma=0.6)
    for _ in range(5):
        u = TraitField(g, rng.uniform(0.0, 2.0, g.n), role="density")
        direct = np.array([
            g.h * np.sum(kern.eval(xi - g.x) * u.values) for xi in g.x])
        assert np.max(np.abs(convolve(kern, u).values - direct)) < 1e-12


def test_convolution_constant_kernel_gives_mass():
    g = Grid(0.0, 1.0, 50)
    kern = CompetitionKernel.build("constant", amplitude=2.0)
    u = TraitField(g, np.linspace(0, 1, 50), role="density")
    mass = float(np.sum(u.values) * g.h)
    assert np.allclose(convolve(kern, u).values, 2.0 * mass, atol=1e-13)


def test_convolve_measure_matches_loop(rng):
    kern = CompetitionKernel.build("gaussian", amplitude=1.2, sigma=0.4)
    xs = np.array([-0.5, 0.1, 0.7])
    ws = np.array([0.3, 1.1, 0.6])
    xq = rng.uniform(-2, 2, 40)
    expect = np.array([np.sum(ws * kern.eval(x - xs)) for x in xq])
    assert np.allclose(convolve_measure(kern, xs, ws, xq), expect, atol=1e-14)
    assert np.all(convolve_measure(kern, np.empty(0), np.empty(0), xq) == 0.0)


def test_competition_positivity_certificates(rng):
    gauss = CompetitionKernel.build("gaussian")
    assert gauss.certificate == "analytic" and not gauss.degenerate
    const = CompetitionKernel.build("constant", amplitude=1.0)
    assert const.degenerate
    # a gaussian profile passed as samples survives the spot check
    sx = np.linspace(0.0, 6.0, 400)
    ok = CompetitionKernel.build("custom", sample_x=sx,
                                 sample_values=np.exp(-sx**2 / 2))
    assert ok.certificate == "spot-checked"
    # cos(3s) looks sign-flipping but cos(3(x-y)) is rank-2 PSD, so the
    # spot check rightly accepts it
    CompetitionKernel.build("custom", sample_x=sx,
                            sample_values=np.cos(3.0 * sx))
    # negative interaction at zero distance can never be positive definite
    with pytest.raises(ConfigError) as err:
        CompetitionKernel.build("custom", sample_x=sx,
                                sample_values=-np.exp(-sx**2 / 2))
    assert err.value.hypothesis == "competition-positivity"


def test_competition_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        CompetitionKernel.build("gaussian", amplitude=-1.0)
    with pytest.raises(ConfigError):
        CompetitionKernel.build("gaussian", sigma=0.0)
    with pytest.raises(ConfigError):
        CompetitionKernel.build("mystery")
