"""Uniform trait grid, sampled fields, and node-set geometry.

All simulations run on a fixed uniform grid over a bounded trait interval.
Off-grid values are defined by piecewise-linear interpolation with constant
extension beyond the endpoints; every operator in the package shares that
convention through :meth:`Grid.interp`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_ROLES = ("density", "potential", "rate", "correction")


@dataclass(frozen=True)
class Grid:
    """Uniform 1-D grid with n >= 8 nodes on [x_min, x_max]."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if not (self.x_max > self.x_min):
            raise ConfigError("grid needs x_max > x_min")
        if self.n < 8:
            raise ConfigError("grid needs at least 8 nodes")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n)

    @property
    def span(self) -> float:
        return self.x_max - self.x_min

    def interp(self, values: np.ndarray, xq: np.ndarray) -> np.ndarray:
        # np.interp clamps to the end values: constant extension off-grid.
        return np.interp(xq, self.x, values)

    def index_of(self, x: float) -> int:
        """Nearest node index for a trait value (clipped to the grid)."""
        i = int(round((x - self.x_min) / self.h))
        return min(max(i, 0), self.n - 1)

    def compatible(self, other: "Grid") -> bool:
        return (self.n == other.n
                and self.x_min == other.x_min
                and self.x_max == other.x_max)


@dataclass
class TraitField:
    """Values sampled on a grid, tagged by role.

    Roles: ``density`` (nonnegative), ``potential`` (log-density scale,
    nonpositive after limit projection), ``rate``, ``correction``.
    """

    grid: Grid
    values: np.ndarray
    role: str = "rate"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise ConfigError(
                f"field shape {self.values.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(self.values)):
            bad = int(np.flatnonzero(~np.isfinite(self.values))[0])
            raise ConfigError(f"non-finite field value at node {bad}")
        if self.role not in _ROLES:
            raise ConfigError(f"unknown field role {self.role!r}")
        if self.role == "density" and np.any(self.values < 0):
            bad = int(np.flatnonzero(self.values < 0)[0])
            raise ConfigError(f"negative density at node {bad}")

    def copy(self) -> "TraitField":
        return TraitField(self.grid, self.values.copy(), self.role)


@dataclass
class SetMask:
    """Boolean membership over grid nodes, with run-length components."""

    grid: Grid
    member: np.ndarray

    def __post_init__(self):
        self.member = np.asarray(self.member, dtype=bool)
        if self.member.shape != (self.grid.n,):
            raise ConfigError("mask shape does not match grid")

    @property
    def is_empty(self) -> bool:
        return not bool(self.member.any())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.member)

    def components(self) -> list[tuple[int, int]]:
        """Maximal runs of consecutive member nodes, as (first, last) pairs."""
        idx = self.indices
        if idx.size == 0:
            return []
        breaks = np.flatnonzero(np.diff(idx) > 1)
        starts = np.concatenate(([0], breaks + 1))
        ends = np.concatenate((breaks, [idx.size - 1]))
        return [(int(idx[s]), int(idx[e])) for s, e in zip(starts, ends)]

    def component_count(self) -> int:
        return len(self.components())


def threshold_mask(phi: TraitField, level: float) -> SetMask:
    """Nodes where the potential sits at or above ``level``."""
    return SetMask(phi.grid, phi.values >= level)


def distances_to_mask(mask: SetMask) -> np.ndarray:
    """Distance from every node to the nearest member node (two-pass, O(n)).

    Empty mask: +inf everywhere.
    """
    n = mask.grid.n
    h = mask.grid.h
    if mask.is_empty:
        return np.full(n, np.inf)
    dist = np.where(mask.member, 0.0, np.inf)
    for i in range(1, n):
        dist[i] = min(dist[i], dist[i - 1] + h)
    for i in range(n - 2, -1, -1):
        dist[i] = min(dist[i], dist[i + 1] + h)
    return dist


def distance_to_set(x, mask: SetMask):
    """min |x - y| over member nodes; scalar or array query, +inf if empty."""
    xs = mask.grid.x[mask.member]
    scalar = np.isscalar(x)
    xq = np.atleast_1d(np.asarray(x, dtype=float))
    if xs.size == 0:
        out = np.full(xq.shape, np.inf)
    else:
        # member positions are sorted; bracket each query between neighbors
        j = np.searchsorted(xs, xq)
        left = xs[np.clip(j - 1, 0, xs.size - 1)]
        right = xs[np.clip(j, 0, xs.size - 1)]
        out = np.minimum(np.abs(xq - left), np.abs(xq - right))
    return float(out[0]) if scalar else out


def semi_distance(inner: SetMask, outer: SetMask) -> float:
    """sup over ``inner`` members of the distance to ``outer``.

    Zero iff inner is contained in (the closure of) outer; empty inner
    gives 0, empty outer with nonempty inner gives +inf. Not symmetric.
    """
    if inner.is_empty:
        return 0.0
    if outer.is_empty:
        return float("inf")
    d = distances_to_mask(outer)
    return float(np.max(d[inner.member]))
