"""TOML run configuration, one section per subsystem.

``load_config`` fills every field with a documented default so a minimal
file only needs the keys it overrides. CLI flags override file values.
"""

import sys
from dataclasses import dataclass, field, fields

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .dynamics import SystemParams

PAPER_DELTA_TAUS = (0.5, 1.0, 2.5, 5.0, 10.0, 15.0, 30.0)


@dataclass
class PropagationConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    max_step: float = 0.25


@dataclass
class SectionConfig:
    coord: int = 1          # hyperplane coordinate index (q2)
    value: float = 0.0
    direction: int = 1      # sign of d(coord)/dt at the crossing
    proj: tuple = (0, 3)    # projected plot coordinates (q1, v1)
    max_time: float = 400.0


@dataclass
class OrbitsConfig:
    c_min: float = 2.995
    c_max: float = 3.005
    c_step: float = 0.001
    corrector_tol: float = 1e-12
    max_iter: int = 60
    continuation_bound: float = 0.1


@dataclass
class ManifoldsConfig:
    eps_min: float = 1e-6
    eps_max: float = 0.3
    n_seeds: int = 10000
    max_time: float = 400.0


@dataclass
class BackgroundConfig:
    n_points: int = 10000
    n_returns: int = 10
    n_discard: int = 5
    axis_min: float = 0.55
    axis_max: float = 0.95
    vx: float = 0.0
    max_time: float = 2000.0


@dataclass
class ProblemConfigSection:
    n_segments: int = 20
    t_shoot_min: float = 4.0
    t_shoot_max: float = 30.0
    t_coast_min: float = 0.0
    t_coast_max: float = 40.0
    mass_min: float = 0.5
    # leg integration tolerance; the defect-evaluation noise floor scales
    # with it through the flow's error amplification, so feas_tol ~ 1e-8
    # needs ~1e-12 here
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12


@dataclass
class SolverConfig:
    feas_tol: float = 1e-8
    opt_tol: float = 5e-3
    max_outer: int = 25
    max_inner: int = 150
    n_hops: int = 12
    hop_scale: float = 0.05
    pareto_prob: float = 0.05
    fd_step_rel: float = 1e-7
    fd_step_abs: float = 1e-8


@dataclass
class CampaignConfig:
    seeds: tuple = (0, 1, 2)
    delta_taus: tuple = (0.5, 2.5)
    segment_fracs: tuple = (0.25, 0.75)   # mapped to forward/backward arc indices


@dataclass
class AnalysisConfig:
    threshold: float = 1e-6
    samples_per_segment: int = 100
    rng_seed: int = 0


@dataclass
class Config:
    system: SystemParams
    propagation: PropagationConfig
    section: SectionConfig
    orbits: OrbitsConfig
    manifolds: ManifoldsConfig
    background: BackgroundConfig
    problem: ProblemConfigSection
    solver: SolverConfig
    campaign: CampaignConfig
    analysis: AnalysisConfig
    path: str = ""


def _fill(cls, data):
    kwargs = {}
    names = {f.name for f in fields(cls)}
    for key, val in data.items():
        if key not in names:
            raise KeyError(f"unknown config key '{key}' for {cls.__name__}")
        if isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    return cls(**kwargs)


def load_config(path):
    with open(path, "rb") as fh:
        raw = _toml.load(fh)
    sysdata = raw.get("system", {})
    if "mu" in sysdata:
        system = _fill(SystemParams, sysdata)
    else:
        system = SystemParams.jupiter_europa(**sysdata)
    sec = raw.get("section", {})
    if "proj" in sec:
        sec["proj"] = tuple(sec["proj"])
    return Config(
        system=system,
        propagation=_fill(PropagationConfig, raw.get("propagation", {})),
        section=_fill(SectionConfig, sec),
        orbits=_fill(OrbitsConfig, raw.get("orbits", {})),
        manifolds=_fill(ManifoldsConfig, raw.get("manifolds", {})),
        background=_fill(BackgroundConfig, raw.get("background", {})),
        problem=_fill(ProblemConfigSection, raw.get("problem", {})),
        solver=_fill(SolverConfig, raw.get("solver", {})),
        campaign=_fill(CampaignConfig, raw.get("campaign", {})),
        analysis=_fill(AnalysisConfig, raw.get("analysis", {})),
        path=str(path),
    )


def default_config():
    return Config(
        system=SystemParams.jupiter_europa(),
        propagation=PropagationConfig(),
        section=SectionConfig(),
        orbits=OrbitsConfig(),
        manifolds=ManifoldsConfig(),
        background=BackgroundConfig(),
        problem=ProblemConfigSection(),
        solver=SolverConfig(),
        campaign=CampaignConfig(),
        analysis=AnalysisConfig(),
    )
