"""traitlab: a numerical laboratory for selection-mutation trait dynamics.

The package integrates a nonlocal selection-mutation model for a
population density over a one-dimensional trait space, written in
log-density (potential) form at a finite concentration scale, together
with its zero-scale limit: a constrained Hamilton-Jacobi front equation
coupled to an evolutionarily stable singular measure. A configurable
small-population mortality term removes the vanishing "ghost"
populations that the uncorrected model can resurrect.

Entry points: :func:`run_forward` (finite scale), :func:`run_limit`
(zero scale), :func:`ess_active_set` / :func:`ess_replicator` (static
stable measures), and the ``simctl`` command line driver.
"""

from .config import PRESETS, RunPlan, build_plan, config_digest, load_plan
from .correction import (CorrectionSettings, build_correction,
                         limit_correction, smoothed_ramp, threshold_depth)
from .diagnostics import (BoundConstants, BoundReport, DiagnosticsRecord,
                          Trajectory, calibrate_bound_constants,
                          check_apriori, dissipation_increment,
                          eps_limit_comparison, extract_atoms,
                          ghost_population_probe, probe_mass_series)
from .environment import Environment, rate_from_family
from .errors import ConfigError, NumericsError, SaturationError
from .ess import (DiscreteMeasure, EssCertificate, UniquenessReport,
                  ess_active_set, ess_replicator, ess_uniqueness_probe,
                  ess_verify, matched_atom_tv, near_root_measure,
                  solve_complementarity)
from .forward import SimState, initial_potential, normalize_mass, run_forward
from .grid import (Grid, SetMask, TraitField, distance_to_set, semi_distance,
                   threshold_mask)
from .kernels import CompetitionKernel, MutationKernel, convolve
from .limit import LimitState, detect_branching, run_limit, support_speed_bound

__version__ = "0.1.0"

__all__ = [
    "BoundConstants", "BoundReport", "CompetitionKernel", "ConfigError",
    "CorrectionSettings", "DiagnosticsRecord", "DiscreteMeasure",
    "Environment", "EssCertificate", "Grid", "LimitState", "MutationKernel",
    "NumericsError", "PRESETS", "RunPlan", "SaturationError", "SetMask",
    "SimState", "TraitField", "Trajectory", "UniquenessReport", "build_plan",
    "build_correction", "calibrate_bound_constants", "check_apriori",
    "config_digest", "convolve", "detect_branching",
    "dissipation_increment", "distance_to_set", "eps_limit_comparison",
    "ess_active_set", "ess_replicator", "ess_uniqueness_probe", "ess_verify",
    "extract_atoms", "ghost_population_probe", "initial_potential",
    "limit_correction", "load_plan", "matched_atom_tv", "near_root_measure",
    "normalize_mass", "probe_mass_series", "rate_from_family", "run_forward",
    "run_limit", "semi_distance", "smoothed_ramp", "solve_complementarity",
    "support_speed_bound", "threshold_depth", "threshold_mask",
]
