"""Growth-rate landscapes and the standing hypotheses they must satisfy.

A landscape is admissible when growth is strictly confined (r <= -r0
outside |x| > R) and a viable core exists (r > 0 somewhere in |x| < R0).
A landscape may switch once, at ``switch_time``, to a second rate field;
validation applies to both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grid import Grid, TraitField


def rate_from_family(grid: Grid, family: str, params: dict) -> TraitField:
    """Closed-form growth-rate families sampled on the grid.

    quadratic_peak: peak - curvature * (x - center)^2
    gaussian_peaks: base + sum_i amp_i * exp(-(x - center_i)^2 / (2 width_i^2))
    plateau: plateau_value on |x| <= plateau_radius, cosine shoulder of
        ramp_width, outside_value beyond
    """
    x = grid.x
    if family == "quadratic_peak":
        vals = params["peak"] - params["curvature"] * (x - params["center"]) ** 2
    elif family == "gaussian_peaks":
        vals = np.full(grid.n, float(params["base"]))
        for amp, center, width in zip(params["amplitudes"], params["centers"],
                                      params["widths"]):
            vals = vals + amp * np.exp(-(x - center) ** 2 / (2.0 * width**2))
    elif family == "constant":
        vals = np.full(grid.n, float(params["value"]))
    elif family == "plateau":
        # exactly flat core, cosine shoulder, flat confinement tail
        pv = float(params["plateau_value"])
        a = float(params["plateau_radius"])
        ov = float(params["outside_value"])
        w = float(params["ramp_width"])
        s = np.clip((np.abs(x) - a) / w, 0.0, 1.0)
        vals = pv + (ov - pv) * 0.5 * (1.0 - np.cos(np.pi * s))
    else:
        raise ConfigError(f"unknown growth-rate family {family!r}")
    return TraitField(grid, vals, "rate")


@dataclass
class Environment:
    """Growth rate plus confinement radii, with an optional one-time switch."""

    rate: TraitField
    r0: float
    R: float
    R0: float
    switch_time: float | None = None
    rate_post: TraitField | None = None

    def __post_init__(self):
        if (self.switch_time is None) != (self.rate_post is None):
            raise ConfigError("switching needs both switch_time and a post-switch rate")
        if self.rate_post is not None and not self.rate_post.grid.compatible(self.rate.grid):
            raise ConfigError("post-switch rate lives on a different grid")

    @property
    def grid(self) -> Grid:
        return self.rate.grid

    def rate_at(self, t: float) -> np.ndarray:
        if self.switch_time is not None and t >= self.switch_time:
            return self.rate_post.values
        return self.rate.values

    def phases(self) -> list[TraitField]:
        out = [self.rate]
        if self.rate_post is not None:
            out.append(self.rate_post)
        return out

    def max_abs_rate(self) -> float:
        return max(float(np.max(np.abs(f.values))) for f in self.phases())

    def max_rate(self) -> float:
        return max(float(np.max(f.values)) for f in self.phases())

    def max_rate_slope(self) -> float:
        """max |r'| over the grid (finite differences), across phases."""
        h = self.grid.h
        return max(float(np.max(np.abs(np.diff(f.values)))) / h
                   for f in self.phases())

    def validate(self) -> None:
        x = self.grid.x
        if self.R0 >= self.R:
            raise ConfigError("viable-core radius R0 must be smaller than R",
                              hypothesis="confinement")
        if self.r0 <= 0:
            raise ConfigError("confinement margin r0 must be positive",
                              hypothesis="confinement")
        if self.R >= self.grid.x_max or -self.R <= self.grid.x_min:
            raise ConfigError(
                "grid must extend beyond the confinement radius R on both sides",
                hypothesis="confinement")
        outside = np.abs(x) > self.R
        core = np.abs(x) < self.R0
        if not core.any():
            raise ConfigError("no grid node inside the viable core |x| < R0",
                              hypothesis="viable-core")
        for phase, f in enumerate(self.phases()):
            tag = "post-switch " if phase else ""
            worst = float(np.max(f.values[outside]))
            if worst > -self.r0:
                i = int(np.flatnonzero(outside)[np.argmax(f.values[outside])])
                raise ConfigError(
                    f"{tag}growth rate {worst:.4g} at x={x[i]:.4g} exceeds -r0="
                    f"{-self.r0:.4g} outside the confinement radius",
                    hypothesis="confinement")
            if float(np.max(f.values[core])) <= 0.0:
                raise ConfigError(
                    f"{tag}growth rate is nowhere positive in the viable core",
                    hypothesis="viable-core")
