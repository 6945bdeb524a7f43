"""TOML run configuration: parsing, validation, presets, digests.

A config file describes one experiment: grid, growth-rate landscape,
kernels, small-population correction, time window, initial potential, and
optional sweep / limit-run / probe sections. ``build_plan`` turns the raw
mapping into validated objects, raising ConfigError (exit code 2 at the
CLI) whose message names the violated structural hypothesis when there is
one. Named presets ship with the package and resolve when the --config
argument is not an existing file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                       # Python < 3.11
    import tomli as tomllib

from .correction import CorrectionSettings
from .environment import Environment, rate_from_family
from .errors import ConfigError
from .grid import Grid
from .kernels import CompetitionKernel, MutationKernel

PRESETS = ("logistic", "equilibrium", "disruptive", "ghost", "sweep-benchmark")


def resolve_config(arg: str):
    """Return (raw mapping, source label) for a path or preset name."""
    p = Path(arg)
    if p.is_file():
        with open(p, "rb") as fh:
            return tomllib.load(fh), str(p)
    if arg in PRESETS:
        ref = resources.files("traitlab").joinpath(f"presets/{arg}.toml")
        with ref.open("rb") as fh:
            return tomllib.load(fh), f"preset:{arg}"
    raise ConfigError(f"config {arg!r} is neither a file nor a preset "
                      f"(presets: {', '.join(PRESETS)})")


def config_digest(raw: dict) -> str:
    """sha256 of the canonical JSON form of the raw config mapping."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class RunPlan:
    """Validated, fully-built experiment description."""

    raw: dict
    source: str
    digest: str
    grid: Grid
    env: Environment
    mutation: MutationKernel | None
    competition: CompetitionKernel
    correction: CorrectionSettings
    eps: float | None
    sweep_eps: list = field(default_factory=list)
    phi0: np.ndarray | None = None
    mass_target: float | None = 1.0
    t_end: float = 1.0
    sample_dt: float = 0.05
    dt: float | None = None
    mass_ceiling: float = 10.0
    p_max: float = 3.0
    cfl: float = 0.45
    tol_zero: float | None = None
    probe: dict | None = None
    ess_options: dict = field(default_factory=dict)
    bounds: dict | None = None


def _section(raw: dict, name: str, required: bool = True) -> dict:
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"missing [{name}] section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _need(sec: dict, name: str, key: str):
    if key not in sec:
        raise ConfigError(f"[{name}] is missing required key {key!r}")
    return sec[key]


def _build_env(raw: dict, grid: Grid) -> Environment:
    sec = _section(raw, "environment")
    rate = rate_from_family(grid, _need(sec, "environment", "family"),
                            sec.get("params", {}))
    post = sec.get("post")
    rate_post = None
    switch_time = sec.get("switch_time")
    if post is not None:
        if switch_time is None:
            raise ConfigError("[environment.post] requires switch_time")
        rate_post = rate_from_family(grid, _need(post, "environment.post",
                                                 "family"),
                                     post.get("params", {}))
    env = Environment(rate=rate,
                      r0=float(_need(sec, "environment", "r0")),
                      R=float(_need(sec, "environment", "R")),
                      R0=float(_need(sec, "environment", "R0")),
                      switch_time=switch_time, rate_post=rate_post)
    env.validate()
    return env


def _build_mutation(raw: dict) -> MutationKernel | None:
    sec = _section(_section(raw, "kernels"), "mutation")
    family = _need(sec, "kernels.mutation", "family")
    if family == "off":
        return None
    try:
        return MutationKernel.build(
            family,
            float(_need(sec, "kernels.mutation", "support_radius")),
            n_nodes=int(sec.get("n_nodes", 32)))
    except ValueError as err:
        raise ConfigError(f"bad mutation kernel: {err}") from err


def _build_competition(raw: dict) -> CompetitionKernel:
    sec = _section(_section(raw, "kernels"), "competition")
    family = _need(sec, "kernels.competition", "family")
    try:
        return CompetitionKernel.build(
            family,
            amplitude=float(sec.get("amplitude", 1.0)),
            sigma=float(sec.get("sigma", 1.0)))
    except ValueError as err:
        raise ConfigError(f"bad competition kernel: {err}") from err


def _build_correction(raw: dict) -> CorrectionSettings:
    sec = _section(raw, "correction", required=False)
    if not sec:
        return CorrectionSettings(mode="off")
    return CorrectionSettings(
        mode=sec.get("mode", "off"),
        c_threshold=float(sec.get("c_threshold", 1.0)),
        slope=float(sec.get("slope", 0.0)),
        cap=float(sec.get("cap", 0.0)),
        smoothing_width=sec.get("smoothing_width"))


def build_plan(raw: dict, source: str = "<dict>") -> RunPlan:
    """Validate the raw mapping and build every model object it describes."""
    gsec = _section(raw, "grid")
    try:
        grid = Grid(float(_need(gsec, "grid", "x_min")),
                    float(_need(gsec, "grid", "x_max")),
                    int(_need(gsec, "grid", "n")))
    except ValueError as err:
        raise ConfigError(f"bad grid: {err}") from err

    env = _build_env(raw, grid)
    mutation = _build_mutation(raw)
    competition = _build_competition(raw)
    correction = _build_correction(raw)

    tsec = _section(raw, "time")
    t_end = float(_need(tsec, "time", "t_end"))
    sample_dt = float(_need(tsec, "time", "sample_dt"))
    if t_end <= 0 or sample_dt <= 0:
        raise ConfigError("[time] t_end and sample_dt must be positive")
    if abs(round(t_end / sample_dt) * sample_dt - t_end) > 1e-9 * t_end:
        raise ConfigError("[time] t_end must be a multiple of sample_dt")

    eps = raw.get("eps")
    if eps is not None:
        eps = float(eps)
        if not 0.0 < eps < 1.0:
            raise ConfigError("eps must lie strictly between 0 and 1")
    sweep = raw.get("sweep", {})
    sweep_eps = [float(e) for e in sweep.get("eps", [])]
    if sweep_eps:
        if any(not 0.0 < e < 1.0 for e in sweep_eps):
            raise ConfigError("[sweep] eps values must lie in (0, 1)")
        if sorted(sweep_eps, reverse=True) != sweep_eps:
            raise ConfigError("[sweep] eps values must be decreasing")

    # the slope/cap consistency is scale dependent: check every scale used
    if correction.mode == "distance_ramp":
        for e in ([eps] if eps is not None else []) + sweep_eps:
            correction.validate_against_rate(env.max_rate_slope(), e)
            correction.validate_width(e)

    isec = _section(raw, "initial", required=False)
    phi0 = None
    mass_target = None
    if isec:
        from .forward import initial_potential
        phi0 = initial_potential(grid, _need(isec, "initial", "family"),
                                 isec.get("params", {}))
        mass_target = isec.get("mass")
        mass_target = float(mass_target) if mass_target is not None else 1.0

    lsec = _section(raw, "limit", required=False)
    probe = raw.get("probe")
    if probe is not None:
        window = _need(probe, "probe", "window")
        if len(window) != 2 or window[0] >= window[1]:
            raise ConfigError("[probe] window must be [lo, hi] with lo < hi")

    bounds = _section(raw, "bounds", required=False) or None
    if bounds is not None:
        for key in ("c_mass", "c_phi", "c_lip", "c_curv", "c_jump"):
            if float(_need(bounds, "bounds", key)) <= 0:
                raise ConfigError(f"[bounds] {key} must be positive")

    return RunPlan(
        raw=raw, source=source, digest=config_digest(raw),
        grid=grid, env=env, mutation=mutation, competition=competition,
        correction=correction, eps=eps, sweep_eps=sweep_eps,
        phi0=phi0, mass_target=mass_target,
        t_end=t_end, sample_dt=sample_dt,
        dt=float(tsec["dt"]) if "dt" in tsec else None,
        mass_ceiling=float(tsec.get("mass_ceiling", 10.0)),
        p_max=float(lsec.get("p_max", 3.0)),
        cfl=float(lsec.get("cfl", 0.45)),
        tol_zero=lsec.get("tol_zero"),
        probe=probe,
        ess_options=_section(raw, "ess", required=False),
        bounds=bounds,
    )


def load_plan(arg: str) -> RunPlan:
    raw, source = resolve_config(arg)
    return build_plan(raw, source)
