"""Exception types shared across the package.

Two failure channels matter operationally: a configuration that violates a
standing hypothesis of the model (rejected before any stepping), and a
numeric abort during stepping (reported with time and trait location, never
propagated as silent NaN).
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration. ``hypothesis`` names the violated assumption.

    Hypothesis names used by the validators:

    - ``confinement``: growth rate must be <= -r0 outside |x| > R
    - ``viable-core``: growth rate must be positive somewhere in |x| < R0,
      and the initial population there must carry mass
    - ``competition-positivity``: competition kernel must define a
      nonnegative quadratic form (strictly positive unless degenerate)
    - ``correction-slope``: correction ramp slope vs. cap constraints
    """

    def __init__(self, message: str, hypothesis: str | None = None):
        self.hypothesis = hypothesis
        if hypothesis is not None:
            message = f"[{hypothesis}] {message}"
        super().__init__(message)


class NumericsError(RuntimeError):
    """Numeric abort during stepping, located in time and trait space."""

    def __init__(self, message: str, t: float | None = None,
                 x: float | None = None, index: int | None = None):
        self.t = t
        self.x = x
        self.index = index
        loc = []
        if t is not None:
            loc.append(f"t={t:.6g}")
        if x is not None:
            loc.append(f"x={x:.6g}")
        if index is not None:
            loc.append(f"node={index}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)


class SaturationError(NumericsError):
    """An exponent exceeded the overflow guard (hard error, not clamping)."""
