import csv
import json
import os
import shutil

import numpy as np
import pytest

from resmte.cli import main, read_archive_family

TINY_CONFIG = """
[orbits]
c_min = 2.995
c_max = 3.005
c_step = 0.005

[manifolds]
n_seeds = 30
max_time = 300.0

[problem]
n_segments = 6
t_shoot_min = 6.0
t_shoot_max = 40.0
t_coast_min = 0.0
t_coast_max = 40.0

[solver]
n_hops = 1
opt_tol = 5e-3

[campaign]
seeds = [0]
delta_taus = [1.0]
segment_fracs = [0.5]

[analysis]
samples_per_segment = 60
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.toml").write_text(TINY_CONFIG)
    return d


@pytest.fixture(scope="module")
def orbit_run(workdir):
    out = workdir / "run"
    code = main(["orbits", "--config", str(workdir / "cfg.toml"),
                 "--out", str(out)])
    assert code == 0
    return out


def test_orbits_outputs(orbit_run):
    table = orbit_run / "orbit_table.csv"
    assert table.exists()
    assert (orbit_run / "orbit_report.txt").exists()
    assert (orbit_run / "manifest.json").exists()
    assert (orbit_run / "config.toml").exists()
    report = (orbit_run / "orbit_report.txt").read_text()
    assert report.count("residual") == 6  # 3 levels x 2 families
    assert "FAILED" not in report


def test_orbits_rerun_byte_identical(workdir, orbit_run):
    out2 = workdir / "run2"
    code = main(["orbits", "--config", str(workdir / "cfg.toml"),
                 "--out", str(out2)])
    assert code == 0
    a = (orbit_run / "orbit_table.csv").read_bytes()
    b = (out2 / "orbit_table.csv").read_bytes()
    assert a == b


@pytest.fixture(scope="module")
def manifold_run(workdir, orbit_run):
    code = main(["manifolds", "--config", str(workdir / "cfg.toml"),
                 "--out", str(orbit_run),
                 "--table", str(orbit_run / "orbit_table.csv")])
    assert code == 0
    return orbit_run / "manifolds"


def test_manifold_outputs(manifold_run):
    with open(manifold_run / "index.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * 2 * 2 * 2  # levels x orbits x stabilities x branches
    for row in rows[:4]:
        assert (manifold_run / row["file"]).exists()
        assert int(row["n_points"]) >= 1


def test_manifold_csv_reingests(manifold_run, workdir):
    from resmte.config import load_config
    from resmte.manifolds import load_manifold_library
    from resmte.sections import SurfaceOfSection

    cfg = load_config(str(workdir / "cfg.toml"))
    lib = load_manifold_library(str(manifold_run), SurfaceOfSection(), cfg.system)
    assert len(lib) == 3
    sets = lib.sets_at(0)
    assert len(sets) == 8
    for ps in sets:
        assert abs(ps.jacobi - 2.995) < 1e-9


@pytest.fixture(scope="module")
def family_run(workdir, orbit_run, manifold_run):
    code = main(["family", "--config", str(workdir / "cfg.toml"),
                 "--out", str(orbit_run),
                 "--table", str(orbit_run / "orbit_table.csv"),
                 "--jobs", "2"])
    assert code == 0
    return orbit_run / "archive.jsonl"


def test_family_archive(family_run):
    rows = read_archive_family(str(family_run))
    keys = {k for k, _, _ in rows}
    assert keys == {"nonrobust_seed0", "mte_i3_dt1_seed0"}
    assert len(rows) == 2 * 2  # two keys, initial solve + one hop
    assert any(rec.feasible for _, _, rec in rows)


def test_family_resume_skips_done(workdir, orbit_run, family_run):
    before = family_run.read_text()
    code = main(["family", "--config", str(workdir / "cfg.toml"),
                 "--out", str(orbit_run),
                 "--table", str(orbit_run / "orbit_table.csv")])
    assert code == 0
    after = family_run.read_text()

    def strip_wall(text):
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        for r in rows:
            r["record"].pop("wall_time")
        return rows

    assert strip_wall(before) == strip_wall(after)


def test_analyze_outputs(workdir, orbit_run, family_run, manifold_run):
    out = workdir / "analysis"
    code = main(["analyze", "--config", str(workdir / "cfg.toml"),
                 "--out", str(out),
                 "--table", str(orbit_run / "orbit_table.csv"),
                 "--archive", str(family_run),
                 "--manifolds", str(manifold_run)])
    assert code == 0
    assert (out / "snapshots.csv").exists()
    with open(out / "snapshots.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    # boundary levels touch the separatrices
    for r in rows:
        if r["level_index"] in ("0", "2"):
            assert float(r["hat_dT"]) < 1e-6
    assert (out / "stats_category_feasible.csv").exists()
    assert (out / "matrix_tau1_forward.csv").exists()
    # matrix entries equal the snapshot values
    with open(out / "matrix_tau1_forward.csv") as fh:
        mat_rows = {r[0]: r[1:] for r in csv.reader(fh)}
    header = mat_rows.pop("solution_id")
    for r in rows:
        sid = r["solution_id"]
        col = header.index(f"level_{r['level_index']}")
        assert float(mat_rows[sid][col]) == float(r["hat_dT_forward"])


def test_campaign_scenario_grid():
    from resmte.cli import _campaign_scenarios
    from resmte.config import PAPER_DELTA_TAUS, default_config

    assert PAPER_DELTA_TAUS == (0.5, 1.0, 2.5, 5.0, 10.0, 15.0, 30.0)
    cfg = default_config()
    scen = _campaign_scenarios(cfg, 20, PAPER_DELTA_TAUS)
    assert scen[0] is None
    robust = scen[1:]
    assert len(robust) == 7 * len(cfg.campaign.segment_fracs)
    assert sorted({s.delta_tau for s in robust}) == sorted(PAPER_DELTA_TAUS)
    assert all(1 <= s.segment_index <= 20 for s in robust)


def test_solve_rejects_bad_scenario(workdir, orbit_run):
    out = workdir / "bad_scenario"
    code = main(["solve", "--config", str(workdir / "cfg.toml"),
                 "--out", str(out),
                 "--table", str(orbit_run / "orbit_table.csv"),
                 "--mte-segment", "44", "--mte-duration", "2.5"])
    assert code == 1


def test_solve_exit_codes(workdir, orbit_run):
    out = workdir / "solve_out"
    code = main(["solve", "--config", str(workdir / "cfg.toml"),
                 "--out", str(out),
                 "--table", str(orbit_run / "orbit_table.csv"),
                 "--hops", "0", "--seed", "3"])
    assert code in (0, 2, 3)
    produced = list(out.glob("*_best.json"))
    assert produced
    best = json.loads(produced[0].read_text())
    assert {"optimal": 0, "feasible": 2, "infeasible": 3}[best["status"]] == code
