"""Command-line front end: orbits, manifolds, solve, family, analyze.

Every command writes a run manifest (JSON) plus a copy of the resolved
config into its output directory. Outputs are deterministic for fixed
inputs and seeds, except for timestamps and wall times inside the
manifest/records.
"""

import argparse
import datetime
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .config import PAPER_DELTA_TAUS, load_config
from .orbits import (CorrectionError, build_lookup, kepler_resonance_seed,
                     load_table_csv, read_seed_csv, save_table_csv)
from .sections import SurfaceOfSection
from .manifolds import (build_manifold_library, load_manifold_library,
                        save_manifold_library)
from .transcribe import MteScenario, build_nlp, problem_from_table, zero_outage_vector
from .solve import (HopOptions, SolverOptions, ballistic_guess, basin_hop,
                    read_archive, write_archive)

log = logging.getLogger("resmte")

EXIT_OPTIMAL = 0
EXIT_ERROR = 1
EXIT_FEASIBLE = 2
EXIT_INFEASIBLE = 3


def _section_of(cfg):
    return SurfaceOfSection(coord=cfg.section.coord, value=cfg.section.value,
                            direction=cfg.section.direction,
                            proj=tuple(cfg.section.proj))


def _solver_opts(cfg, jobs=1):
    s = cfg.solver
    return SolverOptions(feas_tol=s.feas_tol, opt_tol=s.opt_tol,
                         max_outer=s.max_outer, max_inner=s.max_inner,
                         fd_step_rel=s.fd_step_rel, fd_step_abs=s.fd_step_abs,
                         jobs=jobs)


def write_manifest(out_dir, cfg, args):
    os.makedirs(out_dir, exist_ok=True)
    manifest = dict(subcommand=args.command,
                    config=os.path.abspath(args.config),
                    out_dir=os.path.abspath(out_dir),
                    seed=getattr(args, "seed", None),
                    version=__version__,
                    argv=sys.argv[1:],
                    timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat())
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    shutil.copyfile(args.config, os.path.join(out_dir, "config.toml"))


def _load_seeds(cfg, seeds_csv):
    """Continuation seeds per family, from a CSV or the two-body fallback."""
    if seeds_csv:
        rows = read_seed_csv(seeds_csv)
        return {r["label"]: (r["state"], r["period"]) for r in rows}
    seeds = {}
    gentle = {"3:4": 3.020, "5:6": 3.0075}
    for label, c_seed in gentle.items():
        p, q = (int(v) for v in label.split(":"))
        state, period = kepler_resonance_seed(p, q, c_seed)
        seeds[label] = (state, period)
    return seeds


def cmd_orbits(args):
    cfg = load_config(args.config)
    out = args.out
    write_manifest(out, cfg, args)
    seeds = _load_seeds(cfg, args.seeds)
    corr = dict(max_iter=cfg.orbits.max_iter)
    try:
        table, failures = build_lookup(
            seeds, cfg.system, c_min=cfg.orbits.c_min, c_max=cfg.orbits.c_max,
            step=cfg.orbits.c_step, continuation_bound=cfg.orbits.continuation_bound,
            tol=cfg.orbits.corrector_tol, allow_partial=args.allow_partial, **corr)
    except CorrectionError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    path = os.path.join(out, "orbit_table.csv")
    save_table_csv(path, table, cfg.system)
    with open(os.path.join(out, "orbit_report.txt"), "w") as fh:
        from .dynamics import AugmentedState, propagate

        for label in table.labels:
            for k, orb in enumerate(table.orbits[label]):
                if orb is None:
                    fh.write(f"{label} level {k}: FAILED\n")
                    continue
                res = propagate(orb.x0, 0.0, orb.period, cfg.system,
                                rel_tol=1e-13, abs_tol=1e-13).pv - orb.x0.pv
                fh.write(f"{label} level {k}: C={orb.jacobi!r} T={orb.period!r} "
                         f"residual={np.linalg.norm(res):.3e} "
                         f"lam_u={orb.unstable_eigval}\n")
    log.info("wrote %s (%d levels, %d failures)", path, len(table.levels),
             len(failures))
    return EXIT_ERROR if failures and not args.allow_partial else EXIT_OPTIMAL


def cmd_manifolds(args):
    cfg = load_config(args.config)
    write_manifest(args.out, cfg, args)
    table = load_table_csv(args.table, cfg.system)
    section = _section_of(cfg)
    library = build_manifold_library(
        table, section, cfg.system, eps_min=cfg.manifolds.eps_min,
        eps_max=cfg.manifolds.eps_max, n_seeds=cfg.manifolds.n_seeds,
        max_time=cfg.manifolds.max_time, jobs=args.jobs,
        rel_tol=cfg.propagation.rel_tol, abs_tol=cfg.propagation.abs_tol,
        max_step=cfg.propagation.max_step)
    mdir = os.path.join(args.out, "manifolds")
    save_manifold_library(mdir, library)
    total = sum(len(ps) for k in range(len(table.levels)) for ps in library.sets_at(k))
    log.info("wrote %s (%d sets, %d punctures)", mdir, len(library), total)
    return EXIT_OPTIMAL


def _campaign_scenarios(cfg, n_segments, delta_taus=None):
    dts = delta_taus if delta_taus is not None else cfg.campaign.delta_taus
    segs = [max(1, min(n_segments, int(round(f * n_segments))))
            for f in cfg.campaign.segment_fracs]
    out = [None]
    for dt in dts:
        for i in segs:
            out.append(MteScenario(i, float(dt)))
    return out


def scenario_key(scenario, seed):
    if scenario is None:
        return f"nonrobust_seed{seed}"
    return f"mte_i{scenario.segment_index}_dt{scenario.delta_tau:g}_seed{seed}"


def _solve_one(task):
    """Worker: one (scenario, seed) basin-hopped solve."""
    (cfg_path, table_path, scenario, seed, n_hops, warm_x) = task
    cfg = load_config(cfg_path)
    table = load_table_csv(table_path, cfg.system)
    problem = problem_from_table(cfg, table)
    nlp = build_nlp(problem, scenario)
    hop = HopOptions(n_hops=n_hops, hop_scale=cfg.solver.hop_scale,
                     pareto_prob=cfg.solver.pareto_prob, seed=seed)
    sopts = _solver_opts(cfg, jobs=1)
    x0 = np.array(warm_x) if warm_x is not None else ballistic_guess(nlp)
    best, archive = basin_hop(nlp, hop, sopts, x0=x0)
    return scenario_key(scenario, seed), best, archive


def cmd_solve(args):
    cfg = load_config(args.config)
    write_manifest(args.out, cfg, args)
    table = load_table_csv(args.table, cfg.system)
    problem = problem_from_table(cfg, table)
    scenario = None
    if args.mte_segment is not None or args.mte_duration is not None:
        if args.mte_segment is None or args.mte_duration is None:
            log.error("--mte-segment and --mte-duration go together")
            return EXIT_ERROR
        scenario = MteScenario(args.mte_segment, args.mte_duration)
    try:
        nlp = build_nlp(problem, scenario)
    except ValueError as exc:
        log.error("%s (configured n_segments = %d)", exc, problem.n_segments)
        return EXIT_ERROR
    hop = HopOptions(n_hops=args.hops, hop_scale=cfg.solver.hop_scale,
                     pareto_prob=cfg.solver.pareto_prob, seed=args.seed)
    best, archive = basin_hop(nlp, hop, _solver_opts(cfg, jobs=args.jobs))
    key = scenario_key(scenario, args.seed)
    write_archive(os.path.join(args.out, f"{key}.jsonl"), archive)
    with open(os.path.join(args.out, f"{key}_best.json"), "w") as fh:
        json.dump(best.to_dict(), fh, indent=2, sort_keys=True)
    log.info("%s: %s, m_f=%.6f, violation=%.2e", key, best.status,
             -best.objective, best.max_violation)
    return {"optimal": EXIT_OPTIMAL, "feasible": EXIT_FEASIBLE,
            "infeasible": EXIT_INFEASIBLE}[best.status]


def cmd_family(args):
    cfg = load_config(args.config)
    write_manifest(args.out, cfg, args)
    table_path = args.table
    table = load_table_csv(table_path, cfg.system)
    problem = problem_from_table(cfg, table)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds \
        else list(cfg.campaign.seeds)
    dts = None
    if args.delta_taus == "paper":
        dts = PAPER_DELTA_TAUS
    elif args.delta_taus:
        dts = [float(v) for v in args.delta_taus.split(",")]
    scenarios = _campaign_scenarios(cfg, problem.n_segments, dts)

    archive_path = os.path.join(args.out, "archive.jsonl")
    done = {}
    if os.path.exists(archive_path):
        with open(archive_path) as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    done[d["key"]] = d

    def persist(key, records):
        with open(archive_path, "a") as fh:
            for rank, rec in enumerate(records):
                row = dict(key=key, hop_index=rank, record=rec.to_dict())
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    # non-robust solves first: their solutions warm-start the robust ones
    warm = {}
    pending = [s for s in seeds if scenario_key(None, s) not in done]
    tasks = [(args.config, table_path, None, s, args.hops, None) for s in pending]
    results = _run_tasks(tasks, args.jobs)
    for key, best, archive in results:
        persist(key, archive)
        done[key] = True
    for s in seeds:
        key = scenario_key(None, s)
        recs = [r for r in read_archive_family(archive_path) if r[0] == key]
        feas = [r[2] for r in recs if r[2].feasible]
        if feas:
            warm[s] = min(feas, key=lambda r: r.objective).x

    robust_tasks = []
    for scenario in scenarios:
        if scenario is None:
            continue
        for s in seeds:
            key = scenario_key(scenario, s)
            if key in done:
                continue
            warm_x = None
            if s in warm:
                ref_nlp = build_nlp(problem, scenario)
                warm_x = zero_outage_vector(ref_nlp, warm[s])
            robust_tasks.append((args.config, table_path, scenario, s,
                                 args.hops, None if warm_x is None else list(warm_x)))
    for key, best, archive in _run_tasks(robust_tasks, args.jobs):
        persist(key, archive)

    _sort_archive(archive_path)
    log.info("campaign archive: %s", archive_path)
    return EXIT_OPTIMAL


def _run_tasks(tasks, jobs):
    if not tasks:
        return []
    if jobs <= 1:
        return [_solve_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_solve_one, tasks))


def _sort_archive(path):
    """Rewrite the archive in deterministic (key, hop) order."""
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    rows.sort(key=lambda d: (d["key"], d.get("hop_index", 0)))
    with open(path, "w") as fh:
        for d in rows:
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def read_archive_family(path):
    """Yield (key, hop_index, record) tuples from a campaign archive."""
    from .solve import SolutionRecord

    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append((d["key"], d.get("hop_index", 0),
                            SolutionRecord.from_dict(d["record"])))
    return out


def cmd_analyze(args):
    from .analysis import (distance_matrix, energy_snapshots, family_stats,
                           fold_change, write_fold_csv, write_matrix_csv,
                           write_snapshots_csv, write_stats_csv,
                           write_summary_csv)

    cfg = load_config(args.config)
    write_manifest(args.out, cfg, args)
    table = load_table_csv(args.table, cfg.system)
    section = _section_of(cfg)
    library = load_manifold_library(args.manifolds, section, cfg.system)
    problem = problem_from_table(cfg, table)

    rows = read_archive_family(args.archive)
    # every feasible local solution is one member of the family
    feasible = sorted(((key, hop, rec) for key, hop, rec in rows if rec.feasible),
                      key=lambda t: (t[0], t[1]))
    snapshots = []
    for n, (key, hop, rec) in enumerate(feasible):
        nlp = build_nlp(problem, rec.scenario)
        snapshots.extend(energy_snapshots(
            rec, nlp, table, library, section,
            rng_seed=cfg.analysis.rng_seed + n, threshold=cfg.analysis.threshold,
            samples_per_segment=cfg.analysis.samples_per_segment,
            max_time=cfg.section.max_time, solution_id=f"{key}_h{hop}"))
    if not snapshots:
        log.error("no feasible solutions in the archive")
        return EXIT_ERROR
    write_snapshots_csv(os.path.join(args.out, "snapshots.csv"), snapshots)

    optimal = [s for s in snapshots if s.status == "optimal"]
    for tag, subset in (("feasible", snapshots), ("optimal", optimal)):
        if not subset:
            continue
        for grouping in ("category", "delta_tau", "tau1_arc"):
            st = family_stats(subset, grouping)
            write_stats_csv(os.path.join(args.out, f"stats_{grouping}_{tag}.csv"), st)
            write_summary_csv(os.path.join(args.out, f"summary_{grouping}_{tag}.csv"), st)
            folds = {}
            for g in st.per_level:
                if g == "nonrobust" or "nonrobust" not in st.per_level:
                    continue
                folds[g] = fold_change(st, st, g, "nonrobust")
            if folds:
                write_fold_csv(os.path.join(args.out, f"fold_{grouping}_{tag}.csv"),
                               folds)
    for sort_key in ("tau1", "delta_tau"):
        for punct in ("forward", "backward"):
            ids, levels, mat = distance_matrix(snapshots, sort_key, punct)
            write_matrix_csv(os.path.join(
                args.out, f"matrix_{sort_key}_{punct}.csv"), ids, levels, mat)
    log.info("analysis written to %s (%d snapshots)", args.out, len(snapshots))
    return EXIT_OPTIMAL


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="resmte", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=os.environ.get("RESMTE_OUT", "out"))
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int,
                       default=int(os.environ.get("RESMTE_JOBS", "1")))

    p = sub.add_parser("orbits", help="build the Jacobi look-up table")
    common(p)
    p.add_argument("--seeds", default=None, help="seed CSV (optional)")
    p.add_argument("--allow-partial", action="store_true")

    p = sub.add_parser("manifolds", help="globalize manifolds at every level")
    common(p)
    p.add_argument("--table", required=True)

    p = sub.add_parser("solve", help="solve one transfer")
    common(p)
    p.add_argument("--table", required=True)
    p.add_argument("--mte-segment", type=int, default=None)
    p.add_argument("--mte-duration", type=float, default=None)
    p.add_argument("--hops", type=int, default=None)

    p = sub.add_parser("family", help="run a solution campaign")
    common(p)
    p.add_argument("--table", required=True)
    p.add_argument("--seeds", default=None, help="comma list of RNG seeds")
    p.add_argument("--delta-taus", default=None,
                   help="comma list of outage durations, or 'paper'")
    p.add_argument("--hops", type=int, default=None)

    p = sub.add_parser("analyze", help="snapshots, statistics and exports")
    common(p)
    p.add_argument("--table", required=True)
    p.add_argument("--archive", required=True)
    p.add_argument("--manifolds", required=True)

    args = parser.parse_args(argv)
    if getattr(args, "hops", None) is None and args.command in ("solve", "family"):
        args.hops = load_config(args.config).solver.n_hops
    handler = {"orbits": cmd_orbits, "manifolds": cmd_manifolds,
               "solve": cmd_solve, "family": cmd_family,
               "analyze": cmd_analyze}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
