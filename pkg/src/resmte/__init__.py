"""Low-thrust transfers between resonant orbits with missed-thrust
robustness and invariant-manifold proximity metrics."""

__version__ = "0.1.0"

from .dynamics import (AugmentedState, ControlVector, SystemParams, jacobi,
                       libration_points, propagate, vector_field)
from .orbits import (EnergyLookupTable, PeriodicOrbit, build_lookup,
                     correct_orbit, kepler_resonance_seed, monodromy_analysis)
from .sections import SectionPoint, SurfaceOfSection, background_grid, first_return
from .manifolds import PunctureSet, build_puncture_set, globalize, seed_manifold
from .metrics import MetricQuery, bar_d_A, bar_d_T, d_T, hat_d_A, hat_d_T, metric_bundle
from .transcribe import (DecisionVector, MteScenario, NlpInstance, ProblemConfig,
                         build_nlp, eval_constraints, eval_derivatives)
from .solve import SolutionRecord, basin_hop, classify, solve_local

__all__ = [
    "AugmentedState", "ControlVector", "SystemParams", "jacobi",
    "libration_points", "propagate", "vector_field",
    "EnergyLookupTable", "PeriodicOrbit", "build_lookup", "correct_orbit",
    "kepler_resonance_seed", "monodromy_analysis",
    "SectionPoint", "SurfaceOfSection", "background_grid", "first_return",
    "PunctureSet", "build_puncture_set", "globalize", "seed_manifold",
    "MetricQuery", "bar_d_A", "bar_d_T", "d_T", "hat_d_A", "hat_d_T",
    "metric_bundle",
    "DecisionVector", "MteScenario", "NlpInstance", "ProblemConfig",
    "build_nlp", "eval_constraints", "eval_derivatives",
    "SolutionRecord", "basin_hop", "classify", "solve_local",
]
