"""Forward-backward shooting transcription of the transfer problem.

Decision vector layout (reference block, size 3N + 4):

    [T_s, T_i, T_f, (thr_1, alpha_1, beta_1), ..., (thr_N, alpha_N, beta_N), m_f]

``T_s`` is the shooting time split into N equal thrust segments, ``T_i``
and ``T_f`` the initial and final coast times, ``m_f`` the delivered mass.
The forward leg runs from the departure state through the initial coast
and segments 1..ceil(N/2); the backward leg from the arrival state (mass
``m_f``) through the final coast and segments N..ceil(N/2)+1 in reverse
time. The seven equality defects are the position/velocity/mass mismatch
at the midpoint.

A missed-thrust scenario appends a realization block of size
3(N - i) + 4 with the same layout. The outage of duration ``delta_tau``
begins at tau_1 = T_i + i * T_s / N, i.e. at the end of reference segment
i, and the realization replaces reference segments i+1..N with N - i fresh
segments: it inherits the reference state at tau_1, coasts through the
outage, coasts its own T_i, runs its own forward segments, and meets its
backward leg (arrival state at mass m_f^w plus final coast) at its own
midpoint for seven more defects. This indexing makes the zero-outage
reduction exact: with delta_tau = 0 and the reference tail controls copied
in, the realization reproduces the reference trajectory segment for
segment.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import SystemParams, jacobi

TIME_SLOTS = 3  # shooting, initial coast, final coast


class TranscriptionError(ValueError):
    pass


@dataclass(frozen=True)
class MteScenario:
    """Outage of ``delta_tau`` TU starting at the end of reference segment
    ``segment_index`` (1-based, up to the segment count)."""

    segment_index: int
    delta_tau: float

    def __post_init__(self):
        if self.segment_index < 1:
            raise ValueError("segment_index must be >= 1")
        if self.delta_tau < 0:
            raise ValueError("delta_tau must be nonnegative")


@dataclass(frozen=True)
class ProblemConfig:
    """Boundary states, segment count and bounds of one transfer problem."""

    params: SystemParams
    xi0: np.ndarray            # departure state (on the departure orbit)
    xi1: np.ndarray            # arrival state (on the arrival orbit)
    n_segments: int
    t_shoot_bounds: tuple = (4.0, 30.0)
    t_coast_bounds: tuple = (0.0, 40.0)
    mass_min: float = 0.5
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    max_step: float = 0.25

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("need at least one segment")
        object.__setattr__(self, "xi0", np.asarray(self.xi0, dtype=float)[:6].copy())
        object.__setattr__(self, "xi1", np.asarray(self.xi1, dtype=float)[:6].copy())


def block_size(n_segments):
    return 3 * n_segments + 4


class DecisionVector:
    """View helper over the flat NLP vector."""

    def __init__(self, x, n_ref, scenario=None):
        self.x = np.asarray(x, dtype=float)
        self.n_ref = n_ref
        self.scenario = scenario
        n_real = (n_ref - scenario.segment_index) if scenario else None
        expected = block_size(n_ref) + (block_size(n_real) if scenario else 0)
        if self.x.shape != (expected,):
            raise TranscriptionError(
                f"decision vector has {self.x.shape[0]} entries, expected {expected}")
        self.n_real = n_real

    @staticmethod
    def _times(block):
        return block[0], block[1], block[2]

    @property
    def ref(self):
        return self.x[:block_size(self.n_ref)]

    @property
    def real(self):
        if self.scenario is None:
            return None
        return self.x[block_size(self.n_ref):]

    @property
    def ref_times(self):
        return self._times(self.ref)

    @property
    def ref_controls(self):
        return self.ref[TIME_SLOTS:TIME_SLOTS + 3 * self.n_ref].reshape(self.n_ref, 3)

    @property
    def ref_mf(self):
        return self.ref[-1]

    @property
    def real_times(self):
        return self._times(self.real)

    @property
    def real_controls(self):
        return self.real[TIME_SLOTS:TIME_SLOTS + 3 * self.n_real].reshape(self.n_real, 3)

    @property
    def real_mf(self):
        return self.real[-1]

    @property
    def tau1(self):
        """Outage start: end of reference segment i."""
        ts, ti, _ = self.ref_times
        return ti + self.scenario.segment_index * ts / self.n_ref

    @property
    def tau2(self):
        return self.tau1 + self.scenario.delta_tau


class NlpInstance:
    """One transcribed problem: objective -m_f, midpoint equality defects,
    box bounds on every variable."""

    def __init__(self, config, scenario=None):
        if scenario is not None and scenario.segment_index > config.n_segments:
            raise TranscriptionError(
                f"scenario segment {scenario.segment_index} exceeds "
                f"{config.n_segments} reference segments")
        self.config = config
        self.scenario = scenario
        self.n_ref = config.n_segments
        self.n_real = (config.n_segments - scenario.segment_index
                       if scenario else None)
        self.n_var = block_size(self.n_ref) + \
            (block_size(self.n_real) if scenario else 0)
        self.n_eq = 14 if scenario else 7
        self.lower, self.upper = self._bounds()
        self.mf_index = block_size(self.n_ref) - 1

    def _block_bounds(self, n_segments):
        cfg = self.config
        lo = [cfg.t_shoot_bounds[0], cfg.t_coast_bounds[0], cfg.t_coast_bounds[0]]
        hi = [cfg.t_shoot_bounds[1], cfg.t_coast_bounds[1], cfg.t_coast_bounds[1]]
        for _ in range(n_segments):
            lo += [0.0, -math.pi, -math.pi / 2]
            hi += [1.0, math.pi, math.pi / 2]
        lo.append(cfg.mass_min)
        hi.append(1.0)
        return lo, hi

    def _bounds(self):
        lo, hi = self._block_bounds(self.n_ref)
        if self.scenario:
            lo2, hi2 = self._block_bounds(self.n_real)
            lo, hi = lo + lo2, hi + hi2
        return np.array(lo), np.array(hi)

    def decision(self, x):
        return DecisionVector(x, self.n_ref, self.scenario)

    def objective(self, x):
        return -float(x[self.mf_index])

    def objective_gradient(self, x):
        g = np.zeros(self.n_var)
        g[self.mf_index] = -1.0
        return g

    def initial_guess(self):
        """Ballistic guess: zero thrust, times at mid-bounds, full mass."""
        cfg = self.config
        tmid = [0.5 * sum(cfg.t_shoot_bounds), 0.5 * sum(cfg.t_coast_bounds),
                0.5 * sum(cfg.t_coast_bounds)]

        def blk(n):
            b = list(tmid)
            b += [0.0, 0.0, 0.0] * n
            b.append(1.0)
            return b

        x = blk(self.n_ref)
        if self.scenario:
            x += blk(self.n_real)
        return np.array(x)


def build_nlp(config, scenario=None):
    return NlpInstance(config, scenario)


def problem_from_table(cfg, table, departure="3:4", arrival="5:6"):
    """ProblemConfig with boundary states on the table's endpoint orbits:
    the departure orbit at the lowest level, the arrival orbit at the
    highest."""
    xi0 = table.orbit(departure, 0).x0.pv
    xi1 = table.orbit(arrival, len(table.levels) - 1).x0.pv
    return ProblemConfig(params=cfg.system, xi0=xi0, xi1=xi1,
                         n_segments=cfg.problem.n_segments,
                         t_shoot_bounds=(cfg.problem.t_shoot_min,
                                         cfg.problem.t_shoot_max),
                         t_coast_bounds=(cfg.problem.t_coast_min,
                                         cfg.problem.t_coast_max),
                         mass_min=cfg.problem.mass_min,
                         rel_tol=cfg.problem.rel_tol,
                         abs_tol=cfg.problem.abs_tol,
                         max_step=cfg.propagation.max_step)


def _angles_to_dir(controls):
    thr = controls[:, 0]
    ca = np.cos(controls[:, 1])
    sa = np.sin(controls[:, 1])
    cb = np.cos(controls[:, 2])
    sb = np.sin(controls[:, 2])
    return thr, cb * ca, cb * sa, sb


def _run_schedule(y0, durs, controls, config):
    """Kernel schedule propagation; returns the (n_seg + 1, 7) boundary
    states. Raises PropagationError through check_status."""
    from .dynamics import check_status

    p = config.params
    thr, ux, uy, uz = _angles_to_dir(controls)
    bounds = np.empty((len(durs) + 1, 7))
    tend, status, _ = kernels.prop_schedule(
        y0, 0.0, np.asarray(durs, dtype=float), thr, ux, uy, uz,
        p.mu, p.tmax_nd, p.vexh_nd, p.r_floor,
        config.rel_tol, config.abs_tol, config.max_step, bounds)
    check_status(status, tend)
    return bounds


def _leg_states(dv, config, need_boundary=None):
    """Forward and backward reference half-trajectories.

    Returns (x_mid_forward, x_mid_backward, anchor-or-None). The forward
    sweep extends past the midpoint when the scenario anchor lies beyond
    it; both midpoint states carry (position, velocity, mass).
    """
    n = dv.n_ref
    ts, ti, tf = dv.ref_times
    d = ts / n
    mid = (n + 1) // 2
    kmax = mid if need_boundary is None else max(mid, need_boundary)
    ctrl = dv.ref_controls

    durs = [ti] + [d] * kmax
    controls = np.vstack([[0.0, 0.0, 0.0], ctrl[:kmax]])
    y0 = np.append(config.xi0, 1.0)
    fwd = _run_schedule(y0, durs, controls, config)
    x_mid_f = fwd[1 + mid]
    anchor = fwd[1 + need_boundary] if need_boundary is not None else None

    durs_b = [-tf] + [-d] * (n - mid)
    ctrl_b = np.vstack([[0.0, 0.0, 0.0], ctrl[mid:][::-1]])
    z0 = np.append(config.xi1, dv.ref_mf)
    bwd = _run_schedule(z0, durs_b, ctrl_b, config)
    x_mid_b = bwd[-1]
    return x_mid_f, x_mid_b, anchor


def eval_constraints(nlp, x):
    """Midpoint defect vector: 7 reference scalars, plus 7 realization
    scalars under a scenario. Propagation failures yield non-finite
    defects rather than an exception."""
    from .dynamics import PropagationError

    dv = nlp.decision(x)
    try:
        if nlp.scenario is None:
            fmid, bmid, _ = _leg_states(dv, nlp.config)
            return fmid - bmid
        i = nlp.scenario.segment_index
        fmid, bmid, anchor = _leg_states(dv, nlp.config, need_boundary=i)
        out = np.empty(14)
        out[:7] = fmid - bmid

        nw = dv.n_real
        tsw, tiw, tfw = dv.real_times
        midw = (nw + 1) // 2
        dw = tsw / nw if nw > 0 else 0.0
        ctrl = dv.real_controls
        durs = [nlp.scenario.delta_tau, tiw] + [dw] * midw
        controls = np.vstack([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], ctrl[:midw]])
        rfwd = _run_schedule(anchor, durs, controls, nlp.config)

        durs_b = [-tfw] + [-dw] * (nw - midw)
        ctrl_b = np.vstack([[0.0, 0.0, 0.0], ctrl[midw:][::-1]])
        z0 = np.append(nlp.config.xi1, dv.real_mf)
        rbwd = _run_schedule(z0, durs_b, ctrl_b, nlp.config)
        out[7:] = rfwd[-1] - rbwd[-1]
        return out
    except PropagationError:
        return np.full(nlp.n_eq, np.nan)


_fd_pool = None


def _pool(jobs):
    global _fd_pool
    if _fd_pool is None or _fd_pool._max_workers != jobs:
        from concurrent.futures import ThreadPoolExecutor

        if _fd_pool is not None:
            _fd_pool.shutdown(wait=False)
        _fd_pool = ThreadPoolExecutor(max_workers=jobs)
    return _fd_pool


def eval_derivatives(nlp, x, c0=None, fd_step_rel=1e-7, fd_step_abs=1e-8, jobs=1):
    """Objective gradient (exact) and constraint Jacobian (forward finite
    differences with per-variable steps). ``jobs > 1`` spreads the columns
    over threads; the propagation kernels release the GIL."""
    x = np.asarray(x, dtype=float)
    if c0 is None:
        c0 = eval_constraints(nlp, x)

    def column(j):
        h = max(fd_step_rel * abs(x[j]), fd_step_abs)
        xp = x.copy()
        xp[j] += h
        return (eval_constraints(nlp, xp) - c0) / h

    jac = np.empty((nlp.n_eq, nlp.n_var))
    if jobs > 1:
        for j, col in enumerate(_pool(jobs).map(column, range(nlp.n_var))):
            jac[:, j] = col
    else:
        for j in range(nlp.n_var):
            jac[:, j] = column(j)
    return nlp.objective_gradient(x), jac


def zero_outage_vector(nlp_robust, x_ref):
    """Realization block reproducing the reference tail for delta_tau = 0.

    Copies the reference controls of segments i+1..N into the realization
    slots, sets (T_s^w, T_i^w, T_f^w) = ((N-i) T_s/N, 0, T_f) and
    m_f^w = m_f. With a zero outage the realization trajectory then equals
    the reference one, so its defects reduce to the reference defects.
    """
    if nlp_robust.scenario is None:
        raise TranscriptionError("needs a robust instance")
    n = nlp_robust.n_ref
    i = nlp_robust.scenario.segment_index
    dv = DecisionVector(x_ref, n)
    ts, ti, tf = dv.ref_times
    nw = n - i
    block = [nw * ts / n, 0.0, tf]
    ctrl = dv.ref_controls
    for k in range(i, n):
        block += list(ctrl[k])
    block.append(dv.ref_mf)
    return np.concatenate([x_ref, block])


def save_decision_csv(path, x, n_ref, scenario=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_ref", n_ref])
        if scenario is not None:
            w.writerow(["scenario", scenario.segment_index, scenario.delta_tau])
        w.writerow(["x"] + [repr(float(v)) for v in np.asarray(x).ravel()])


def load_decision_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    n_ref = int(rows[0][1])
    scenario = None
    xrow = rows[1]
    if rows[1][0] == "scenario":
        scenario = MteScenario(int(rows[1][1]), float(rows[1][2]))
        xrow = rows[2]
    x = np.array([float(v) for v in xrow[1:]])
    return x, n_ref, scenario
