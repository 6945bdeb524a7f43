"""Small-population correction: extra mortality tied to a potential threshold.

The corrected model adds a mortality rate D(x) that vanishes on the active
region A = {phi >= -depth} and grows with the distance to it, capped at
``cap``:

    D(x) = min( slope * ramp(d(x, A)),  cap )

``depth`` scales like c * e * log(1/e): populations whose log-density sits
below that threshold represent less than about one individual and are the
ones the correction removes. The ramp is smoothed near zero so D keeps a
bounded derivative; ``ramp`` is 1-Lipschitz, so |D'| <= slope everywhere,
and ramp'(s) = 1 once s >= 2 * smoothing_width, so the mortality gradient
dominates the growth-rate gradient away from A whenever
slope >= 2 * max|r'|.

An alternative comparison mode, ``sqrt_mortality``, implements the rate
obtained by dividing a square-root mortality term -(1/e) sqrt(u/u_ref) by
the density itself, with u_ref = exp(-depth/e):

    D_sqrt(x) = min( exp((depth - phi(x)) / (2 e)),  cap )

It penalizes any density below exp(depth/e)-scale, including order-one
populations, which is exactly why it is kept as a comparison mode rather
than a default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import Grid, SetMask, TraitField, distances_to_mask, threshold_mask

MODES = ("off", "distance_ramp", "sqrt_mortality")


def threshold_depth(eps: float, c_threshold: float) -> float:
    """Potential depth c * e * log(1/e) separating viable from sub-unit mass."""
    if not (0.0 < eps < 1.0):
        raise ConfigError("scale parameter eps must lie in (0, 1)")
    return c_threshold * eps * math.log(1.0 / eps)


def smoothed_ramp(s: np.ndarray, width: float) -> np.ndarray:
    """1-Lipschitz C^1 ramp: 0 on [0, w], quadratic blend, then s - 3w/2.

    The blend (s-w)^2/(2w) on [w, 2w] matches value and slope at both ends,
    keeps 0 <= ramp' <= 1 with ramp'' <= 1/w, and converges to the plain
    distance as width -> 0.
    """
    s = np.asarray(s, dtype=float)
    if width <= 0:
        return s.copy()
    out = np.zeros_like(s)
    blend = (s > width) & (s < 2.0 * width)
    out[blend] = (s[blend] - width) ** 2 / (2.0 * width)
    linear = s >= 2.0 * width
    out[linear] = s[linear] - 1.5 * width
    return out


@dataclass
class CorrectionSettings:
    """Parameters of the extra-mortality term.

    slope is the ramp gain (trait-gradient of the mortality), cap the
    uniform bound, c_threshold the depth multiplier, smoothing_width the
    ramp blending scale (None selects 2 * depth at build time).
    """

    mode: str = "off"
    c_threshold: float = 1.0
    slope: float = 0.0
    cap: float = 0.0
    smoothing_width: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown correction mode {self.mode!r}")
        if self.mode != "off":
            if self.c_threshold < 1.0:
                raise ConfigError(
                    "correction threshold multiplier must be >= 1",
                    hypothesis="correction-slope")
            if self.cap <= 0:
                raise ConfigError("correction cap must be positive",
                                  hypothesis="correction-slope")
        if self.mode == "distance_ramp" and self.slope <= 0:
            raise ConfigError("distance_ramp needs a positive slope",
                              hypothesis="correction-slope")

    def depth(self, eps: float) -> float:
        return threshold_depth(eps, self.c_threshold)

    def width(self, eps: float) -> float:
        if self.smoothing_width is not None:
            return self.smoothing_width
        return 2.0 * self.depth(eps)

    def validate_against_rate(self, max_rate_slope: float, eps: float) -> None:
        """Slope/cap consistency for the given scale parameter.

        The ramp gain must dominate twice the growth-rate gradient, and must
        not exceed cap / (2 * depth): past that the cap is reached before the
        zone where the gradient requirement applies, making the two
        constraints unsatisfiable.
        """
        if self.mode != "distance_ramp":
            return
        need = 2.0 * max_rate_slope
        if self.slope < need:
            raise ConfigError(
                f"correction slope {self.slope:.4g} is below twice the "
                f"growth-rate gradient bound {need:.4g}",
                hypothesis="correction-slope")
        depth = self.depth(eps)
        limit = self.cap / (2.0 * depth)
        if self.slope > limit:
            raise ConfigError(
                f"correction slope {self.slope:.4g} exceeds cap/(2*depth) = "
                f"{limit:.4g}; the cap is reached before the mandated-gradient "
                f"zone", hypothesis="correction-slope")

    def validate_width(self, eps: float) -> None:
        if self.mode == "distance_ramp" and self.smoothing_width is not None:
            if self.smoothing_width < self.depth(eps):
                raise ConfigError(
                    "smoothing_width must be at least the threshold depth",
                    hypothesis="correction-slope")


def active_region(phi: TraitField, eps: float,
                  settings: CorrectionSettings) -> SetMask:
    """Nodes above the viability threshold, A = {phi >= -depth}."""
    return threshold_mask(phi, -settings.depth(eps))


def build_correction(settings: CorrectionSettings, phi: TraitField,
                     eps: float) -> TraitField:
    """Mortality field for the current potential.

    distance_ramp: min(slope * ramp(d(x, A)), cap); equals cap everywhere
    when A is empty (the caller flags that regime in diagnostics).
    """
    g = phi.grid
    if settings.mode == "off":
        return TraitField(g, np.zeros(g.n), "correction")
    if settings.mode == "distance_ramp":
        mask = active_region(phi, eps, settings)
        if mask.is_empty:
            vals = np.full(g.n, settings.cap)
        else:
            d = distances_to_mask(mask)
            vals = np.minimum(settings.slope * smoothed_ramp(d, settings.width(eps)),
                              settings.cap)
        return TraitField(g, vals, "correction")
    # sqrt_mortality comparison mode
    depth = settings.depth(eps)
    expo = (depth - phi.values) / (2.0 * eps)
    vals = np.where(expo > math.log(settings.cap) + 1.0,
                    settings.cap,
                    np.minimum(np.exp(np.minimum(expo, 700.0)), settings.cap))
    return TraitField(g, vals, "correction")


def limit_correction(settings: CorrectionSettings, zero_set: SetMask) -> np.ndarray:
    """Limit-model mortality min(slope * d(x, zero set), cap); no smoothing."""
    g = zero_set.grid
    if settings.mode == "off":
        return np.zeros(g.n)
    if zero_set.is_empty:
        return np.full(g.n, settings.cap)
    d = distances_to_mask(zero_set)
    return np.minimum(settings.slope * d, settings.cap)
