import csv

import numpy as np
import pytest

from resmte.analysis import (EnergySnapshot, distance_matrix, energy_snapshots,
                             family_stats, fold_change, group_key,
                             reference_leg_samples, tau1_arc,
                             write_matrix_csv, write_snapshots_csv,
                             write_stats_csv)
from resmte.manifolds import ManifoldLibrary
from resmte.metrics import METRIC_CSV_ORDER
from resmte.solve import SolutionRecord
from resmte.transcribe import MteScenario, ProblemConfig, build_nlp


def fake_snapshot(sol_id, level, hat_dT, hat_dA=0.5, category="nonrobust",
                  delta_tau=None, segment_index=None, n_ref=10,
                  status="feasible", fwd=None, bwd=None):
    metrics = {m: 0.1 for m in METRIC_CSV_ORDER}
    metrics.update(hat_dT=hat_dT, hat_dA=hat_dA,
                   hat_dT_forward=fwd if fwd is not None else hat_dT,
                   hat_dT_backward=bwd if bwd is not None else hat_dT,
                   hat_dA_forward=hat_dA, hat_dA_backward=hat_dA)
    return EnergySnapshot(solution_id=sol_id, level_index=level,
                          jacobi_level=2.995 + 0.001 * level, t_star=1.0,
                          p_forward=None, p_backward=None, metrics=metrics,
                          category=category, delta_tau=delta_tau,
                          segment_index=segment_index, n_ref=n_ref,
                          status=status)


def test_group_keys():
    s = fake_snapshot("a", 0, 0.1)
    assert group_key(s, "category") == "nonrobust"
    r = fake_snapshot("b", 0, 0.1, category="robust", delta_tau=2.5,
                      segment_index=8, n_ref=10)
    assert group_key(r, "category") == "robust"
    assert group_key(r, "delta_tau") == "dtau=2.5"
    assert group_key(r, "tau1_arc") == "backward"
    assert tau1_arc(3, 10) == "forward"
    with pytest.raises(ValueError):
        group_key(s, "bogus")


def test_single_snapshot_stats():
    st = family_stats([fake_snapshot("a", 1, 0.3, hat_dA=0.7)], "category")
    cell = st.per_level["nonrobust"][1]["hat_dT"]
    mean, median, q1, q3, n = cell
    assert mean == median == 0.3
    assert q1 == q3 == 0.3 and n == 1


def test_stats_match_external_recomputation():
    g = np.random.default_rng(4)
    snaps = [fake_snapshot(f"s{i}", 2, float(v))
             for i, v in enumerate(g.uniform(0, 1, 17))]
    st = family_stats(snaps, "category")
    vals = np.array([s.metrics["hat_dT"] for s in snaps])
    mean, median, q1, q3, n = st.per_level["nonrobust"][2]["hat_dT"]
    assert mean == pytest.approx(np.mean(vals), abs=1e-15)
    assert median == pytest.approx(np.median(vals), abs=1e-15)
    assert q1 == pytest.approx(np.percentile(vals, 25), abs=1e-15)
    assert q3 == pytest.approx(np.percentile(vals, 75), abs=1e-15)
    assert n == 17


def test_stats_permutation_invariant():
    g = np.random.default_rng(9)
    snaps = [fake_snapshot(f"s{i}", i % 3, float(v))
             for i, v in enumerate(g.uniform(0, 1, 12))]
    st1 = family_stats(snaps, "category")
    order = g.permutation(len(snaps))
    st2 = family_stats([snaps[i] for i in order], "category")
    assert st1.per_level == st2.per_level


def test_summary_covariance_psd():
    g = np.random.default_rng(14)
    snaps = [fake_snapshot(f"s{i}", lvl, float(g.uniform(0, 1)),
                           hat_dA=float(g.uniform(0, 2)))
             for i in range(10) for lvl in (0, 1, 2, 3)]
    st = family_stats(snaps, "category")
    mean, cov, n = st.summary["nonrobust"]
    assert cov.shape == (2, 2)
    assert abs(cov[0, 1] - cov[1, 0]) < 1e-15
    assert np.all(np.linalg.eigvalsh(cov) >= -1e-12)
    # boundary levels excluded from the pooled summary
    assert n == 20


def test_fold_change_identities():
    g = np.random.default_rng(21)
    snaps_r = [fake_snapshot(f"r{i}", 1, float(v), category="robust",
                             delta_tau=0.5, segment_index=2)
               for i, v in enumerate(g.uniform(0.1, 1, 8))]
    snaps_n = [fake_snapshot(f"n{i}", 1, float(v))
               for i, v in enumerate(g.uniform(0.1, 1, 8))]
    st = family_stats(snaps_r + snaps_n, "category")
    same = fold_change(st, st, "robust", "robust")
    assert same[1]["hat_dT"] == 0.0
    fc = fold_change(st, st, "robust", "nonrobust")
    mr = st.mean("robust", 1, "hat_dT")
    mn = st.mean("nonrobust", 1, "hat_dT")
    assert fc[1]["hat_dT"] == pytest.approx(np.log2(mr / mn), abs=1e-12)
    # doubled means give exactly +1
    snaps_double = [fake_snapshot(f"d{i}", 1, 2 * s.metrics["hat_dT"],
                                  category="robust", delta_tau=1.0,
                                  segment_index=2)
                    for i, s in enumerate(snaps_n)]
    st2 = family_stats(snaps_n + snaps_double, "category")
    fc2 = fold_change(st2, st2, "robust", "nonrobust")
    assert fc2[1]["hat_dT"] == pytest.approx(1.0, abs=1e-12)


def test_fold_change_undefined_marker():
    snaps = [fake_snapshot("a", 0, 0.0), fake_snapshot("b", 0, 0.4,
             category="robust", delta_tau=0.5, segment_index=1)]
    st = family_stats(snaps, "category")
    fc = fold_change(st, st, "robust", "nonrobust")
    assert np.isnan(fc[0]["hat_dT"])


def test_distance_matrix_sorting_and_roundtrip(tmp_path):
    snaps = []
    for sid, seg, dt in (("b", 5, 1.0), ("a", 5, 1.0), ("c", 2, 0.5)):
        for lvl in (0, 1):
            snaps.append(fake_snapshot(sid, lvl, 0.1 * lvl, category="robust",
                                       delta_tau=dt, segment_index=seg,
                                       fwd=0.1 * lvl + 0.01, bwd=0.2))
    ids, levels, mat = distance_matrix(snaps, "tau1", "forward")
    assert ids == ["c", "a", "b"]  # sorted by segment, ties by id
    assert levels == [0, 1]
    assert mat.shape == (3, 2)
    assert mat[0, 1] == pytest.approx(0.11)
    path = tmp_path / "m.csv"
    write_matrix_csv(path, ids, levels, mat)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["solution_id", "level_0", "level_1"]
    back = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert np.array_equal(back, mat)


def test_snapshot_csv_matches_values(tmp_path):
    snaps = [fake_snapshot("a", 0, 0.123456789, hat_dA=0.9)]
    path = tmp_path / "snaps.csv"
    write_snapshots_csv(path, snaps)
    with open(path) as fh:
        row = list(csv.DictReader(fh))[0]
    assert float(row["hat_dT"]) == 0.123456789
    assert float(row["hat_dA"]) == 0.9
    assert row["category"] == "nonrobust"


def test_energy_snapshots_deterministic(params, mini_table, manifold_sets,
                                        section, orbit34):
    """Same record and seed give identical snapshot times."""
    cfg = ProblemConfig(params=params, xi0=mini_table.orbit("3:4", 0).x0.pv,
                        xi1=mini_table.orbit("5:6", 2).x0.pv, n_segments=4)
    nlp = build_nlp(cfg)
    x = nlp.initial_guess()
    x[0], x[1], x[2] = 10.0, 5.0, 5.0
    rec = SolutionRecord(x=x, objective=-1.0, max_violation=1e-12,
                         kkt_residual=1e-9, status="optimal", scenario=None,
                         iterations=1, wall_time=0.0, random_seed=0,
                         defects=np.zeros(7))
    sets = [v for k, v in manifold_sets.items() if k[0] == "3:4"]
    lib = ManifoldLibrary(mini_table.levels, {0: sets, 1: [], 2: []})
    s1 = energy_snapshots(rec, nlp, mini_table, lib, section, rng_seed=5,
                          samples_per_segment=25, solution_id="x")
    s2 = energy_snapshots(rec, nlp, mini_table, lib, section, rng_seed=5,
                          samples_per_segment=25, solution_id="x")
    assert len(s1) == len(s2) == 1   # only the departure level has sets
    assert s1[0].t_star == s2[0].t_star
    assert s1[0].metrics == s2[0].metrics
    # a zero-thrust record sits on the departure orbit: separatrix zero
    assert s1[0].level_index == 0
    assert s1[0].metrics["hat_dT"] < 1e-6


def test_reference_leg_samples_cover_tof(params, mini_table):
    cfg = ProblemConfig(params=params, xi0=mini_table.orbit("3:4", 0).x0.pv,
                        xi1=mini_table.orbit("5:6", 2).x0.pv, n_segments=4)
    nlp = build_nlp(cfg)
    x = nlp.initial_guess()
    rec = SolutionRecord(x=x, objective=-1.0, max_violation=0.0,
                         kkt_residual=0.0, status="feasible", scenario=None,
                         iterations=0, wall_time=0.0, random_seed=0,
                         defects=np.zeros(7))
    times, states = reference_leg_samples(rec, nlp, samples_per_segment=10)
    dv = nlp.decision(x)
    tof = sum(dv.ref_times)
    assert times[0] == 0.0 and times[-1] == pytest.approx(tof)
    assert np.all(np.diff(times) >= 0)
    assert states.shape == (len(times), 7)
    # endpoint states anchor at the boundary conditions
    assert np.allclose(states[0][:6], cfg.xi0, atol=1e-12)
    assert np.allclose(states[-1][:6], cfg.xi1, atol=1e-12)
