"""Globalization of stable/unstable manifolds of resonant orbits onto the
section, with arc-length parameterization from the separatrix.

A branch is grown by perturbing the orbit state along the unit
(un)stable eigenvector with a geometric ladder of magnitudes and coasting
each seed to its first section crossing: forward in time for the unstable
manifold, backward for the stable one. The puncture of the zero
perturbation is the separatrix and anchors the arc length at zero. Because
large perturbations leave the energy surface at second order, seeds are
re-projected onto the orbit's Jacobi level by rescaling the velocity
(disable with ``project_energy=False``).
"""

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import effective_potential, jacobi
from .sections import SectionError, SectionPoint, crossings, first_return, write_section_csv

log = logging.getLogger(__name__)

STABILITIES = ("unstable", "stable")
BRANCHES = ("parallel", "antiparallel")


@dataclass(frozen=True, eq=False)
class PunctureSet:
    """Ordered section punctures of one manifold branch.

    ``points`` holds the separatrix first, then the orbit's remaining
    same-direction crossings (all at arc length zero, being points of the
    orbit itself), then one puncture per surviving ladder seed in epsilon
    order. ``arclengths`` is the cumulative projected polyline length from
    the separatrix along the ladder. ``epsilons`` aligns with ``points``
    (zero for the orbit rows).
    """

    resonance_label: str
    jacobi: float
    stability: str
    branch: str
    points: tuple
    arclengths: np.ndarray
    epsilons: np.ndarray
    separatrix: SectionPoint
    n_dropped: int = 0

    def __post_init__(self):
        if self.stability not in STABILITIES:
            raise ValueError(f"stability must be one of {STABILITIES}")
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")

    @property
    def proj_array(self):
        return np.array([p.proj for p in self.points])

    def __len__(self):
        return len(self.points)


def eps_ladder(eps_min=1e-6, eps_max=0.3, n_seeds=10000):
    """Geometric perturbation ladder resolving the exponential departure."""
    if n_seeds == 1:
        return np.array([eps_min])
    return np.geomspace(eps_min, eps_max, n_seeds)


def seed_manifold(orbit, stability, branch, epsilons, params=None,
                  project_energy=True):
    """Perturbed states ``x0 +- eps * v_hat`` along the hyperbolic eigenvector.

    With ``project_energy`` the velocity magnitude of each seed is rescaled
    so its Jacobi value matches the orbit's exactly (the raw perturbation
    drifts off the energy surface at O(eps^2)). Returns an (n, 6) array.
    """
    if stability not in STABILITIES:
        raise ValueError(f"stability must be one of {STABILITIES}")
    vec = orbit.unstable_eigvec if stability == "unstable" else orbit.stable_eigvec
    if vec is None:
        raise ValueError(
            f"orbit {orbit.resonance_label} at C={orbit.jacobi:.6f} has no "
            "real hyperbolic pair to seed from")
    vhat = vec / np.linalg.norm(vec)
    sign = 1.0 if branch == "parallel" else -1.0
    epsilons = np.asarray(epsilons, dtype=float)
    seeds = orbit.x0.pv[None, :] + sign * epsilons[:, None] * vhat[None, :]
    if project_energy:
        if params is None:
            raise ValueError("project_energy requires params")
        for k in range(seeds.shape[0]):
            seeds[k] = _project_jacobi(seeds[k], orbit.jacobi, params)
    return seeds


def _project_jacobi(state6, c_target, params):
    """Rescale the velocity so C(state) == c_target (nearest-speed root)."""
    u = effective_potential(state6[:3], params)
    v2 = -c_target - 2.0 * u
    if v2 <= 0.0:
        return state6
    v = state6[3:6]
    speed = np.linalg.norm(v)
    if speed == 0.0:
        return state6
    out = state6.copy()
    out[3:6] = v * (np.sqrt(v2) / speed)
    return out


def orbit_section_crossings(orbit, section, params, max_crossings=16, **opts):
    """All same-direction crossings of the orbit itself within one period."""
    pts = crossings(orbit.x0.pv, section, params, time_sign=1,
                    max_time=orbit.period * 1.02, n=max_crossings,
                    provenance="orbit", **opts)
    return pts


def globalize(orbit, seeds, epsilons, stability, branch, section, params,
              max_time=400.0, **opts):
    """Coast each seed to its first section crossing and assemble the set.

    Unstable seeds propagate forward, stable ones backward. Per-seed
    failures (no crossing within ``max_time``) are dropped and counted,
    not fatal.
    """
    time_sign = 1 if stability == "unstable" else -1
    sep = first_return(orbit.x0.pv, section, params, time_sign=time_sign,
                       max_time=max_time, **opts)
    sep = SectionPoint(state=sep.state, t=sep.t, proj=sep.proj,
                       jacobi=sep.jacobi, provenance="separatrix")
    anchors = []
    for p in orbit_section_crossings(orbit, section, params, **opts):
        if np.linalg.norm(p.proj - sep.proj) > 1e-9:
            anchors.append(SectionPoint(state=p.state, t=p.t, proj=p.proj,
                                        jacobi=p.jacobi,
                                        provenance="orbit-anchor"))
    pts = []
    eps_kept = []
    n_dropped = 0
    for eps, seed in zip(epsilons, seeds):
        try:
            p = first_return(seed, section, params, time_sign=time_sign,
                             max_time=max_time, **opts)
        except Exception as exc:
            n_dropped += 1
            log.debug("manifold seed eps=%.3e dropped: %s", eps, exc)
            continue
        pts.append(SectionPoint(state=p.state, t=p.t, proj=p.proj,
                                jacobi=p.jacobi, provenance="manifold"))
        eps_kept.append(eps)
    if n_dropped:
        log.info("%s/%s %s %s: dropped %d of %d seeds", orbit.resonance_label,
                 f"C={orbit.jacobi:.6f}", stability, branch, n_dropped, len(seeds))

    # cumulative polyline arc length from the separatrix along the ladder
    arc = np.zeros(1 + len(anchors) + len(pts))
    prev = sep.proj
    acc = 0.0
    for i, p in enumerate(pts):
        acc += float(np.linalg.norm(p.proj - prev))
        arc[1 + len(anchors) + i] = acc
        prev = p.proj
    eps_all = np.concatenate([np.zeros(1 + len(anchors)), np.asarray(eps_kept)])
    return PunctureSet(resonance_label=orbit.resonance_label,
                       jacobi=float(orbit.jacobi), stability=stability,
                       branch=branch, points=tuple([sep] + anchors + pts),
                       arclengths=arc, epsilons=eps_all, separatrix=sep,
                       n_dropped=n_dropped)


def build_puncture_set(orbit, stability, branch, section, params,
                       eps_min=1e-6, eps_max=0.3, n_seeds=10000,
                       max_time=400.0, project_energy=True, **opts):
    """Seed and globalize one manifold branch in one call."""
    eps = eps_ladder(eps_min, eps_max, n_seeds)
    seeds = seed_manifold(orbit, stability, branch, eps, params=params,
                          project_energy=project_energy)
    return globalize(orbit, seeds, eps, stability, branch, section, params,
                     max_time=max_time, **opts)


MANIFOLD_EXTRA_FIELDS = ("stability", "branch", "epsilon", "arclength")


def write_puncture_csv(path, pset):
    extras = [(pset.stability, pset.branch, pset.epsilons[i], pset.arclengths[i])
              for i in range(len(pset))]
    write_section_csv(path, list(pset.points), MANIFOLD_EXTRA_FIELDS, extras)


def read_puncture_csv(path, section, params, resonance_label="", jacobi_level=None):
    from .sections import read_section_csv

    pts, extras = read_section_csv(path, section, params)
    if not pts:
        raise ValueError(f"empty puncture file {path}")
    sep = next(p for p in pts if p.provenance == "separatrix")
    arc = np.array([float(v) for v in extras["arclength"]])
    eps = np.array([float(v) for v in extras["epsilon"]])
    return PunctureSet(resonance_label=resonance_label,
                       jacobi=jacobi_level if jacobi_level is not None else sep.jacobi,
                       stability=extras["stability"][0], branch=extras["branch"][0],
                       points=tuple(pts), arclengths=arc, epsilons=eps,
                       separatrix=sep)


class ManifoldLibrary:
    """All puncture sets of a look-up table, indexed by energy level."""

    def __init__(self, levels, sets_by_level):
        self.levels = np.asarray(levels, dtype=float)
        self._sets = {int(k): tuple(v) for k, v in sets_by_level.items()}

    def sets_at(self, level_index):
        return self._sets.get(int(level_index), ())

    def __len__(self):
        return len(self._sets)


def _build_level_sets(args):
    k, orbits, section, params, kw = args
    sets = []
    for orbit in orbits:
        for stability in STABILITIES:
            for branch in BRANCHES:
                sets.append(build_puncture_set(orbit, stability, branch,
                                               section, params, **kw))
    return k, sets


def build_manifold_library(table, section, params, eps_min=1e-6, eps_max=0.3,
                           n_seeds=10000, max_time=400.0, jobs=1, **opts):
    """Both manifolds, both branches, for every orbit at every table level.

    ``jobs > 1`` distributes levels over worker processes.
    """
    kw = dict(eps_min=eps_min, eps_max=eps_max, n_seeds=n_seeds,
              max_time=max_time, **opts)
    tasks = []
    for k in range(len(table.levels)):
        orbits = []
        for label in table.labels:
            orbit = table.orbit(label, k)
            if orbit is None or not orbit.is_hyperbolic:
                log.warning("level %d: no hyperbolic %s orbit, skipping", k, label)
                continue
            orbits.append(orbit)
        tasks.append((k, orbits, section, params, kw))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_build_level_sets, tasks))
    else:
        results = [_build_level_sets(t) for t in tasks]
    return ManifoldLibrary(table.levels, dict(results))


def save_manifold_library(dirpath, library):
    import csv
    import os

    os.makedirs(dirpath, exist_ok=True)
    index_rows = []
    for k in sorted(library._sets):
        for ps in library.sets_at(k):
            tag = "u" if ps.stability == "unstable" else "s"
            br = "p" if ps.branch == "parallel" else "a"
            name = f"level{k:02d}_{ps.resonance_label.replace(':', '')}_{tag}{br}.csv"
            write_puncture_csv(os.path.join(dirpath, name), ps)
            index_rows.append([k, repr(float(ps.jacobi)), ps.resonance_label,
                               ps.stability, ps.branch, name, len(ps), ps.n_dropped])
    with open(os.path.join(dirpath, "index.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level_index", "jacobi", "resonance_label", "stability",
                    "branch", "file", "n_points", "n_dropped"])
        w.writerows(index_rows)


def load_manifold_library(dirpath, section, params):
    import csv
    import os

    with open(os.path.join(dirpath, "index.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    sets_by_level = {}
    levels = {}
    for row in rows:
        k = int(row["level_index"])
        ps = read_puncture_csv(os.path.join(dirpath, row["file"]), section, params,
                               resonance_label=row["resonance_label"],
                               jacobi_level=float(row["jacobi"]))
        sets_by_level.setdefault(k, []).append(ps)
        levels[k] = float(row["jacobi"])
    level_arr = [levels[k] for k in sorted(levels)]
    return ManifoldLibrary(level_arr, sets_by_level)
