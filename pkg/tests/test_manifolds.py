import numpy as np
import pytest

from resmte.dynamics import jacobi
from resmte.manifolds import (PunctureSet, build_puncture_set, eps_ladder,
                              globalize, read_puncture_csv, seed_manifold,
                              write_puncture_csv)
from resmte.sections import first_return


def test_eps_ladder_bounds():
    eps = eps_ladder(1e-6, 0.3, 50)
    assert eps[0] == 1e-6 and abs(eps[-1] - 0.3) < 1e-15
    assert np.all(np.diff(np.log(eps)) > 0)


def test_seed_zero_perturbation(orbit34, params):
    seeds = seed_manifold(orbit34, "unstable", "parallel", np.array([0.0]),
                          params=params, project_energy=False)
    assert np.array_equal(seeds[0], orbit34.x0.pv)


def test_seed_exact_offset(orbit34, params):
    vhat = orbit34.unstable_eigvec / np.linalg.norm(orbit34.unstable_eigvec)
    seeds = seed_manifold(orbit34, "unstable", "parallel", np.array([1e-6]),
                          params=params, project_energy=False)
    assert np.allclose(seeds[0], orbit34.x0.pv + 1e-6 * vhat, atol=1e-18)
    anti = seed_manifold(orbit34, "unstable", "antiparallel", np.array([1e-6]),
                         params=params, project_energy=False)
    assert np.allclose(anti[0], orbit34.x0.pv - 1e-6 * vhat, atol=1e-18)


def test_raw_seed_energy_deviation_quadratic(orbit34, params):
    """dC = O(eps^2): the hyperbolic eigenvector is energy-surface tangent."""
    eps = np.array([1e-5, 1e-4, 1e-3])
    seeds = seed_manifold(orbit34, "unstable", "parallel", eps, params=params,
                          project_energy=False)
    dev = np.array([abs(jacobi(s, params) - orbit34.jacobi) for s in seeds])
    assert np.all(dev < 1e-6)
    # quadratic scaling across two decades
    ratio = dev[2] / max(dev[0], 1e-18)
    assert 1e3 < ratio < 1e5


def test_projected_seeds_on_energy_surface(orbit34, params):
    eps = eps_ladder(1e-6, 0.3, 40)
    seeds = seed_manifold(orbit34, "stable", "parallel", eps, params=params)
    for s in seeds:
        assert abs(jacobi(s, params) - orbit34.jacobi) < 1e-12


def test_seed_requires_hyperbolic_pair(orbit34, params):
    from dataclasses import replace

    blind = replace(orbit34, unstable_eigvec=None, unstable_eigval=None)
    with pytest.raises(ValueError):
        seed_manifold(blind, "unstable", "parallel", np.array([1e-6]), params=params)


def test_zero_eps_puncture_is_separatrix(orbit34, section, params):
    ps = globalize(orbit34, np.array([orbit34.x0.pv]), np.array([0.0]),
                   "unstable", "parallel", section, params, max_time=300.0)
    sep_own = first_return(orbit34.x0.pv, section, params, time_sign=1)
    assert np.linalg.norm(ps.separatrix.state - sep_own.state) < 1e-8
    lad = [p for p in ps.points if p.provenance == "manifold"]
    assert len(lad) == 1
    assert np.linalg.norm(lad[0].state - sep_own.state) < 1e-8


def test_puncture_set_structure(manifold_sets):
    ps = manifold_sets[("3:4", "unstable", "parallel")]
    assert ps.points[0].provenance == "separatrix"
    assert ps.arclengths[0] == 0.0
    assert np.all(np.diff(ps.arclengths) >= 0)
    cs = [p.jacobi for p in ps.points]
    assert max(cs) - min(cs) < 1e-8
    n_manifold = sum(1 for p in ps.points if p.provenance == "manifold")
    assert n_manifold <= 80


def test_arclength_is_polyline(manifold_sets):
    ps = manifold_sets[("5:6", "stable", "parallel")]
    pts = [p for p in ps.points if p.provenance != "orbit-anchor"]
    arcs = [a for p, a in zip(ps.points, ps.arclengths)
            if p.provenance != "orbit-anchor"]
    acc = 0.0
    for i in range(1, len(pts)):
        acc += np.linalg.norm(pts[i].proj - pts[i - 1].proj)
        assert abs(arcs[i] - acc) < 1e-12


def test_small_eps_punctures_approach_separatrix(orbit34, section, params):
    eps = np.array([1e-8, 1e-7, 1e-6, 1e-5])
    seeds = seed_manifold(orbit34, "unstable", "parallel", eps, params=params)
    ps = globalize(orbit34, seeds, eps, "unstable", "parallel", section, params,
                   max_time=300.0)
    lad = [p for p in ps.points if p.provenance == "manifold"]
    d = [np.linalg.norm(p.proj - ps.separatrix.proj) for p in lad]
    assert all(np.diff(d) > 0)
    assert d[0] < 1e-5


def test_stable_branch_goes_backward(orbit56, section, params):
    eps = np.array([1e-4])
    seeds = seed_manifold(orbit56, "stable", "parallel", eps, params=params)
    ps = globalize(orbit56, seeds, eps, "stable", "parallel", section, params,
                   max_time=300.0)
    lad = [p for p in ps.points if p.provenance == "manifold"]
    assert lad[0].t < 0


def test_puncture_csv_roundtrip(manifold_sets, section, params, tmp_path):
    ps = manifold_sets[("3:4", "stable", "antiparallel")]
    path = tmp_path / "set.csv"
    write_puncture_csv(path, ps)
    loaded = read_puncture_csv(path, section, params,
                               resonance_label=ps.resonance_label,
                               jacobi_level=ps.jacobi)
    assert loaded.stability == ps.stability and loaded.branch == ps.branch
    assert len(loaded) == len(ps)
    assert np.array_equal(loaded.arclengths, ps.arclengths)
    assert np.array_equal(loaded.epsilons, ps.epsilons)
    for a, b in zip(ps.points, loaded.points):
        assert np.array_equal(a.state, b.state)
