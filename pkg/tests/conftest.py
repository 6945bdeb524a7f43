"""Shared fixtures and config builders for the test suite."""

from __future__ import annotations

import copy

import numpy as np
import pytest

from traitlab.config import build_plan

# A small but fully valid scenario: confined gaussian landscape, uniform
# jumps, gaussian competition, no correction. Tests override pieces.
BASE_RAW = {
    "eps": 0.05,
    "grid": {"x_min": -4.0, "x_max": 4.0, "n": 128},
    "environment": {
        "family": "gaussian_peaks",
        "r0": 0.5,
        "R": 2.5,
        "R0": 0.5,
        "params": {"base": -0.6, "amplitudes": [1.6], "centers": [0.0],
                   "widths": [0.8]},
    },
    "kernels": {
        "mutation": {"family": "uniform", "support_radius": 1.0},
        "competition": {"family": "gaussian", "amplitude": 1.0, "sigma": 1.0},
    },
    "time": {"t_end": 0.2, "sample_dt": 0.02, "mass_ceiling": 5.0},
    "initial": {"family": "quadratic", "mass": 1.0,
                "params": {"center": 0.0, "curvature": 0.5}},
}


def raw_config(**overrides) -> dict:
    """Deep copy of the base scenario with section-level overrides."""
    raw = copy.deepcopy(BASE_RAW)
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(raw.get(key), dict):
            merged = copy.deepcopy(raw[key])
            merged.update(copy.deepcopy(val))
            raw[key] = merged
        else:
            raw[key] = copy.deepcopy(val)
    return raw


def make_plan(**overrides):
    return build_plan(raw_config(**overrides))


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)


@pytest.fixture
def base_plan():
    return make_plan()
