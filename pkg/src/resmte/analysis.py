"""Energy-level snapshots along solved transfers and family statistics.

A snapshot picks, for each look-up-table level, one trajectory point whose
coast energy matches the level within a threshold, maps it forward and
backward to the section, and evaluates the manifold distance metrics
there. Family statistics aggregate snapshots per group (solution
category, outage duration, or outage arc) and energy level.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import jacobi
from .metrics import METRIC_CSV_ORDER, MetricQuery, metric_bundle
from .sections import SectionError, first_return
from .transcribe import DecisionVector

log = logging.getLogger(__name__)

GROUPINGS = ("category", "delta_tau", "tau1_arc")


@dataclass(frozen=True, eq=False)
class EnergySnapshot:
    solution_id: str
    level_index: int
    jacobi_level: float
    t_star: float
    p_forward: object
    p_backward: object
    metrics: dict
    category: str              # "nonrobust" | "robust"
    delta_tau: float | None
    segment_index: int | None
    n_ref: int
    status: str


def reference_leg_samples(record, nlp, samples_per_segment=100):
    """Exact states along both shooting legs of the reference trajectory.

    Returns (times, states(n,7)) with times measured from departure; the
    forward leg covers the initial coast and segments 1..mid, the backward
    leg (sampled from the arrival state) the rest. Sample times are
    segment boundaries plus interior points, every one hit exactly by the
    integrator.
    """
    from .dynamics import AugmentedState, ControlVector, propagate_sampled

    dv = nlp.decision(record.x)
    cfg = nlp.config
    n = dv.n_ref
    ts, ti, tf = dv.ref_times
    d = ts / n
    mid = (n + 1) // 2
    ctrl = dv.ref_controls
    tof = ti + ts + tf

    def seg_times(t0, t1):
        k = max(2, samples_per_segment)
        return np.linspace(t0, t1, k + 1)

    # forward leg
    fwd_schedule = [(ti, ControlVector())]
    fwd_breaks = [0.0, ti]
    for kseg in range(mid):
        fwd_schedule.append((d, ControlVector(*ctrl[kseg])))
        fwd_breaks.append(ti + (kseg + 1) * d)
    t_fwd = np.unique(np.concatenate(
        [seg_times(fwd_breaks[k], fwd_breaks[k + 1]) for k in range(len(fwd_breaks) - 1)]))
    y_fwd = propagate_sampled(AugmentedState.from_vector(np.append(cfg.xi0, 1.0)),
                              0.0, ti + mid * d, cfg.params, t_fwd,
                              controls=fwd_schedule, rel_tol=cfg.rel_tol,
                              abs_tol=cfg.abs_tol, max_step=cfg.max_step)

    # backward leg, sampled in backward time from arrival then remapped
    bwd_schedule = [(tf, ControlVector())]
    bwd_breaks = [0.0, tf]
    for kseg in range(n - 1, mid - 1, -1):
        bwd_schedule.append((d, ControlVector(*ctrl[kseg])))
        bwd_breaks.append(bwd_breaks[-1] + d)
    span = tf + (n - mid) * d
    t_bwd = np.unique(np.concatenate(
        [seg_times(bwd_breaks[k], bwd_breaks[k + 1]) for k in range(len(bwd_breaks) - 1)]))
    y_bwd = propagate_sampled(AugmentedState.from_vector(np.append(cfg.xi1, dv.ref_mf)),
                              0.0, -span, cfg.params, -t_bwd,
                              controls=bwd_schedule, rel_tol=cfg.rel_tol,
                              abs_tol=cfg.abs_tol, max_step=cfg.max_step)
    times = np.concatenate([t_fwd, tof - t_bwd])
    states = np.vstack([y_fwd, y_bwd])
    order = np.argsort(times)
    return times[order], states[order]


def snapshot_metadata(record, n_ref):
    if record.scenario is None:
        return dict(category="nonrobust", delta_tau=None, segment_index=None)
    return dict(category="robust", delta_tau=record.scenario.delta_tau,
                segment_index=record.scenario.segment_index)


def tau1_arc(segment_index, n_ref):
    """Forward arc when the outage index lies in the first half of the
    shooting horizon, backward otherwise."""
    return "forward" if segment_index <= (n_ref + 1) // 2 else "backward"


def energy_snapshots(record, nlp, table, library, section, rng_seed=0,
                     threshold=1e-6, samples_per_segment=100, max_time=400.0,
                     solution_id="sol"):
    """One snapshot per matched look-up level for a solved record.

    Levels with no matching trajectory time (or without manifold sets) are
    skipped with a log entry. Point selection among the eligible times is
    uniform under the given seed.
    """
    rng = np.random.default_rng(rng_seed)
    times, states = reference_leg_samples(record, nlp, samples_per_segment)
    cvals = np.array([jacobi(s, nlp.config.params) for s in states])
    meta = snapshot_metadata(record, nlp.n_ref)
    out = []
    for k, level in enumerate(table.levels):
        eligible = np.flatnonzero(np.abs(cvals - level) < threshold)
        if eligible.size == 0:
            log.info("%s: level %d (C=%.6f) unmatched", solution_id, k, level)
            continue
        sets = library.sets_at(k)
        if not sets:
            log.warning("%s: level %d has no manifold sets", solution_id, k)
            continue
        pick = int(rng.choice(eligible))
        t_star = float(times[pick])
        state = states[pick]
        try:
            pf = first_return(state, section, nlp.config.params, time_sign=1,
                              max_time=max_time)
            pb = first_return(state, section, nlp.config.params, time_sign=-1,
                              max_time=max_time)
        except SectionError as exc:
            log.warning("%s: level %d crossing failed: %s", solution_id, k, exc)
            continue
        q = MetricQuery(p_forward=pf, p_backward=pb, sets=tuple(sets))
        out.append(EnergySnapshot(
            solution_id=solution_id, level_index=k, jacobi_level=float(level),
            t_star=t_star, p_forward=pf, p_backward=pb,
            metrics=metric_bundle(q), n_ref=nlp.n_ref, status=record.status,
            **meta))
    return out


def group_key(snapshot, grouping):
    if grouping == "category":
        return snapshot.category
    if grouping == "delta_tau":
        return "nonrobust" if snapshot.category == "nonrobust" \
            else f"dtau={snapshot.delta_tau:g}"
    if grouping == "tau1_arc":
        return "nonrobust" if snapshot.category == "nonrobust" \
            else tau1_arc(snapshot.segment_index, snapshot.n_ref)
    raise ValueError(f"unknown grouping {grouping!r}")


@dataclass
class FamilyStats:
    grouping: str
    metrics: tuple
    # per_level[group][level_index][metric] = (mean, median, q1, q3, n)
    per_level: dict = field(default_factory=dict)
    # summary[group] = (mean 2-vector, cov 2x2, n) over (hat_dT, hat_dA)
    summary: dict = field(default_factory=dict)

    def mean(self, group, level_index, metric):
        cell = self.per_level.get(group, {}).get(level_index, {}).get(metric)
        return cell[0] if cell else None


def family_stats(snapshots, grouping="category", metrics=METRIC_CSV_ORDER,
                 interior_only_summary=True):
    """Per-group, per-level mean/median/IQR plus the pooled 2D summary.

    The (hat_dT, hat_dA) mean and covariance pool the interior energy
    levels (first and last excluded) since the boundary levels sit on the
    separatrices by construction.
    """
    groups = {}
    for s in snapshots:
        groups.setdefault(group_key(s, grouping), []).append(s)
    stats = FamilyStats(grouping=grouping, metrics=tuple(metrics))
    for g, snaps in groups.items():
        levels = {}
        for s in snaps:
            levels.setdefault(s.level_index, []).append(s)
        stats.per_level[g] = {}
        for k, cell in levels.items():
            entry = {}
            for mkey in metrics:
                vals = np.sort(np.array([c.metrics[mkey] for c in cell
                                         if mkey in c.metrics]))
                if vals.size == 0:
                    entry[mkey] = None
                    continue
                q1, q3 = np.percentile(vals, [25, 75])
                entry[mkey] = (float(np.mean(vals)), float(np.median(vals)),
                               float(q1), float(q3), int(vals.size))
            stats.per_level[g][k] = entry
        kmin = min(levels)
        kmax = max(levels)
        pool = [s for s in snaps
                if not interior_only_summary or kmin < s.level_index < kmax]
        if pool:
            xy = np.array([[s.metrics["hat_dT"], s.metrics["hat_dA"]] for s in pool])
            mean = xy.mean(axis=0)
            cov = np.cov(xy.T) if xy.shape[0] > 1 else np.zeros((2, 2))
            stats.summary[g] = (mean, np.atleast_2d(cov), xy.shape[0])
    return stats


def fold_change(stats_robust, stats_nonrobust, group_robust, group_nonrobust,
                metrics=("hat_dT", "hat_dA")):
    """log2 of the ratio of group means per level; NaN marks levels where
    the ratio is undefined (missing cell or nonpositive denominator)."""
    out = {}
    lv_r = stats_robust.per_level.get(group_robust, {})
    lv_n = stats_nonrobust.per_level.get(group_nonrobust, {})
    for k in sorted(set(lv_r) | set(lv_n)):
        row = {}
        for m in metrics:
            num = stats_robust.mean(group_robust, k, m)
            den = stats_nonrobust.mean(group_nonrobust, k, m)
            if num is None or den is None or den <= 0.0 or num <= 0.0:
                row[m] = float("nan")
            else:
                row[m] = float(np.log2(num / den))
        out[k] = row
    return out


def distance_matrix(snapshots, sort_key="tau1", puncture="forward"):
    """Per-solution, per-level matrix of the single-puncture hat distance.

    Rows are solutions sorted by the key (outage segment index for
    ``tau1``, outage duration for ``delta_tau``) with ties broken by
    solution id; columns are level indices. Missing levels are NaN.
    Returns (row_ids, level_indices, matrix).
    """
    if sort_key == "tau1":
        keyfun = lambda s: (s.segment_index if s.segment_index is not None else -1)
    elif sort_key == "delta_tau":
        keyfun = lambda s: (s.delta_tau if s.delta_tau is not None else -1.0)
    else:
        raise ValueError(f"unknown sort key {sort_key!r}")
    col = "hat_dT_forward" if puncture == "forward" else "hat_dT_backward"
    by_sol = {}
    for s in snapshots:
        by_sol.setdefault(s.solution_id, []).append(s)
    ids = sorted(by_sol, key=lambda sid: (keyfun(by_sol[sid][0]), sid))
    levels = sorted({s.level_index for s in snapshots})
    mat = np.full((len(ids), len(levels)), np.nan)
    for r, sid in enumerate(ids):
        for s in by_sol[sid]:
            mat[r, levels.index(s.level_index)] = s.metrics[col]
    return ids, levels, mat


SNAPSHOT_META_FIELDS = ("solution_id", "status", "category", "delta_tau",
                        "segment_index", "n_ref", "level_index", "jacobi",
                        "t_star")


def write_snapshots_csv(path, snapshots):
    cols = list(SNAPSHOT_META_FIELDS) + list(METRIC_CSV_ORDER) + \
        ["hat_dT_forward", "hat_dT_backward", "hat_dA_forward", "hat_dA_backward"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for s in snapshots:
            row = [s.solution_id, s.status, s.category,
                   "" if s.delta_tau is None else repr(float(s.delta_tau)),
                   "" if s.segment_index is None else s.segment_index,
                   s.n_ref, s.level_index, repr(float(s.jacobi_level)),
                   repr(float(s.t_star))]
            for m in cols[len(SNAPSHOT_META_FIELDS):]:
                v = s.metrics.get(m)
                row.append("" if v is None else repr(float(v)))
            w.writerow(row)


def write_stats_csv(path, stats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grouping", "group", "level_index", "metric",
                    "mean", "median", "q1", "q3", "n"])
        for g in sorted(stats.per_level):
            for k in sorted(stats.per_level[g]):
                for m in stats.metrics:
                    cell = stats.per_level[g][k].get(m)
                    if cell is None:
                        w.writerow([stats.grouping, g, k, m, "", "", "", "", 0])
                    else:
                        w.writerow([stats.grouping, g, k, m,
                                    *[repr(float(v)) for v in cell[:4]], cell[4]])


def write_summary_csv(path, stats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grouping", "group", "mean_hat_dT", "mean_hat_dA",
                    "cov_tt", "cov_ta", "cov_at", "cov_aa", "n"])
        for g, (mean, cov, n) in sorted(stats.summary.items()):
            w.writerow([stats.grouping, g, repr(float(mean[0])), repr(float(mean[1])),
                        *[repr(float(v)) for v in cov.ravel()], n])


def write_fold_csv(path, folds):
    """folds: dict (group_label) -> {level: {metric: value}}."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "level_index", "metric", "log2_fold_change"])
        for g in sorted(folds):
            for k in sorted(folds[g]):
                for m, v in folds[g][k].items():
                    w.writerow([g, k, m, repr(float(v))])


def write_matrix_csv(path, ids, levels, mat):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["solution_id"] + [f"level_{k}" for k in levels])
        for r, sid in enumerate(ids):
            w.writerow([sid] + [repr(float(v)) for v in mat[r]])
