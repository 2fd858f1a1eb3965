"""Differential correction of resonant periodic orbits and the
Jacobi-indexed look-up table.

Resonance labels ``p:q`` follow the period-ratio convention
T_orbit / T_secondary = p / q, so 3:4 and 5:6 are interior orbits. Seeds
come either from a user-supplied CSV (one record per orbit) or from the
two-body construction in :func:`kepler_resonance_seed`.
"""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (AugmentedState, PropagationError, jacobi,
                       jacobi_gradient, propagate, vector_field, COAST)

log = logging.getLogger(__name__)

SEED_FIELDS = ("resonance_label", "q1", "q2", "q3", "v1", "v2", "v3",
               "period", "jacobi")


class CorrectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PeriodicOrbit:
    x0: AugmentedState
    period: float
    jacobi: float
    resonance_label: str
    monodromy: np.ndarray
    stable_eigval: float | None = None
    unstable_eigval: float | None = None
    stable_eigvec: np.ndarray | None = None
    unstable_eigvec: np.ndarray | None = None
    n_iterations: int = 0

    @property
    def is_hyperbolic(self):
        return self.unstable_eigval is not None


@dataclass(frozen=True)
class EnergyLookupTable:
    levels: np.ndarray                 # strictly increasing Jacobi values
    orbits: dict                       # label -> list[PeriodicOrbit] per level
    step: float

    def orbit(self, label, level_index):
        return self.orbits[label][level_index]

    def level_index(self, c, tol=1e-9):
        i = int(np.argmin(np.abs(self.levels - c)))
        if abs(self.levels[i] - c) > tol:
            raise KeyError(f"no table level at C={c}")
        return i

    @property
    def labels(self):
        return sorted(self.orbits.keys())


def kepler_resonance_seed(p, q, c_target, member="unstable"):
    """Planar two-body seed for an interior p:q resonant orbit.

    The family phase is set by which apsis sits at the conjunction
    longitude. ``member="unstable"`` places an apoapsis there (the
    corresponding periodic orbits pick up a close secondary approach and a
    real in-plane hyperbolic pair) and seeds at the opposite apoapsis on
    the -q1 axis; ``member="stable"`` places periapsis at conjunction and
    seeds there. Eccentricity is chosen so the coast energy matches
    ``c_target`` in the mu -> 0 limit. Returns (state6, period).

    Seeds converge directly at gentle energies (shallow approaches); reach
    lower-C members by continuation, e.g. via :func:`build_lookup`.
    """
    if not p < q:
        raise ValueError("interior resonance requires p < q")
    a = (p / q) ** (2.0 / 3.0)
    s = (c_target - 1.0 / a) / 2.0
    one_e2 = s * s / a
    if not 0.0 < one_e2 <= 1.0:
        raise ValueError(f"no elliptic seed for C={c_target} at a={a}")
    e = math.sqrt(1.0 - one_e2)
    period = p * 2.0 * math.pi
    if member == "stable":
        rp = a * (1.0 - e)
        vp = math.sqrt(2.0 / rp - 1.0 / a)
        return np.array([rp, 0.0, 0.0, 0.0, vp - rp, 0.0]), period
    if member == "unstable":
        ra = a * (1.0 + e)
        va = math.sqrt(2.0 / ra - 1.0 / a)
        return np.array([-ra, 0.0, 0.0, 0.0, ra - va, 0.0]), period
    raise ValueError(f"unknown member {member!r}")


def write_seed_csv(path, rows):
    """rows: iterable of (label, state6, period, jacobi)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SEED_FIELDS)
        for label, st, period, c in rows:
            w.writerow([label, *[repr(float(v)) for v in st],
                        repr(float(period)), repr(float(c))])


def read_seed_csv(path):
    """Returns list of dicts with keys label/state/period/jacobi."""
    out = []
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        missing = set(SEED_FIELDS) - set(r.fieldnames or ())
        if missing:
            raise ValueError(f"seed file missing columns: {sorted(missing)}")
        for row in r:
            st = np.array([float(row[k]) for k in ("q1", "q2", "q3", "v1", "v2", "v3")])
            out.append(dict(label=row["resonance_label"], state=st,
                            period=float(row["period"]), jacobi=float(row["jacobi"])))
    return out


def _flow_with_stm(state6, period, params, rel_tol, abs_tol):
    final, stm = propagate(AugmentedState.from_vector(state6), 0.0, period, params,
                           with_stm=True, rel_tol=rel_tol, abs_tol=abs_tol)
    return final.pv, stm


def _ms_residual(nodes, period, params, rel_tol, abs_tol, with_stm):
    """Continuity residuals of the multiple-shooting arcs.

    Returns (residual 6m-vector, list of arc final states, list of STMs or
    None). Arc k runs from node k for period/m; the last arc closes on
    node 0.
    """
    m = nodes.shape[0]
    dt = period / m
    res = np.empty(6 * m)
    finals = []
    stms = [] if with_stm else None
    for k in range(m):
        if with_stm:
            fin, stm = propagate(AugmentedState.from_vector(nodes[k]), 0.0, dt, params,
                                 with_stm=True, rel_tol=rel_tol, abs_tol=abs_tol)
            stms.append(stm)
        else:
            fin = propagate(AugmentedState.from_vector(nodes[k]), 0.0, dt, params,
                            rel_tol=rel_tol, abs_tol=abs_tol)
        finals.append(fin.pv)
        nxt = nodes[(k + 1) % m]
        res[6 * k:6 * k + 6] = fin.pv - nxt
    return res, finals, stms


def correct_orbit(seed_state, seed_period, params, mode="fix_jacobi",
                  target_jacobi=None, resonance_label="", fix_index=1,
                  tol=1e-12, max_iter=60, rel_tol=1e-13, abs_tol=1e-13,
                  n_arcs=None):
    """Multiple-shooting Newton correction of a periodic orbit.

    ``mode`` is ``"fix_period"`` (period held at ``seed_period``, state
    corrected) or ``"fix_jacobi"`` (period free, Jacobi constrained to
    ``target_jacobi``). Coordinate ``fix_index`` of the first node is frozen
    as the phase condition. ``n_arcs`` defaults to one arc per ~5 TU of
    period, which keeps the per-arc error amplification benign even for
    strongly unstable orbits. Returns a :class:`PeriodicOrbit` with
    monodromy and hyperbolic eigen-structure populated.
    """
    if mode not in ("fix_period", "fix_jacobi"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "fix_jacobi" and target_jacobi is None:
        raise ValueError("fix_jacobi mode needs target_jacobi")
    y0 = np.asarray(seed_state, dtype=float)[:6].copy()
    period = float(seed_period)
    if period <= 0:
        raise ValueError("seed period must be positive")
    with_period = mode == "fix_jacobi"
    m = n_arcs if n_arcs is not None else max(1, int(round(period / 5.0)))
    free0 = [i for i in range(6) if i != fix_index]

    # initialize interior nodes along the seed trajectory
    nodes = np.empty((m, 6))
    nodes[0] = y0
    for k in range(1, m):
        nodes[k] = propagate(AugmentedState.from_vector(nodes[k - 1]), 0.0,
                             period / m, params, rel_tol=rel_tol,
                             abs_tol=abs_tol).pv

    n_unk = 5 + 6 * (m - 1) + (1 if with_period else 0)
    n_res = 6 * m + (1 if with_period else 0)
    n_iter = 0
    for n_iter in range(max_iter + 1):
        res, finals, stms = _ms_residual(nodes, period, params, rel_tol, abs_tol, True)
        rnorm = np.linalg.norm(res)
        cerr = abs(jacobi(nodes[0], params) - target_jacobi) if with_period else 0.0
        if rnorm < tol * math.sqrt(m) and cerr < tol:
            break
        if n_iter == max_iter:
            raise CorrectionError(
                f"corrector hit {max_iter} iterations (residual {rnorm:.2e})")

        jac = np.zeros((n_res, n_unk))
        col_of_node = {}  # node index -> first column of its 6 (or 5) unknowns
        col = 0
        col_of_node[0] = col
        col += 5
        for k in range(1, m):
            col_of_node[k] = col
            col += 6
        tcol = col if with_period else None

        for k in range(m):
            rows = slice(6 * k, 6 * k + 6)
            stm = stms[k]
            if k == 0:
                for c, idx in enumerate(free0):
                    jac[rows, c] = stm[:, idx]
            else:
                jac[rows, col_of_node[k]:col_of_node[k] + 6] = stm
            knext = (k + 1) % m
            if knext == 0:
                for c, idx in enumerate(free0):
                    jac[rows, c] -= np.eye(6)[:, idx]
            else:
                jac[rows, col_of_node[knext]:col_of_node[knext] + 6] -= np.eye(6)
            if with_period:
                fend = vector_field(np.append(finals[k], 1.0), COAST, params)[:6]
                jac[rows, tcol] = fend / m
        if with_period:
            gc = jacobi_gradient(nodes[0], params)
            for c, idx in enumerate(free0):
                jac[6 * m, c] = gc[idx]
            rhs_vec = np.append(res, jacobi(nodes[0], params) - target_jacobi)
        else:
            rhs_vec = res

        dz, _, _, sing = np.linalg.lstsq(jac, -rhs_vec, rcond=None)
        if sing[0] > 0 and sing[-1] / sing[0] < 1e-14:
            raise CorrectionError("singular corrector Jacobian (degenerate seed)")

        def apply(alpha):
            trial = nodes.copy()
            for c, idx in enumerate(free0):
                trial[0, idx] += alpha * dz[c]
            for k in range(1, m):
                trial[k] += alpha * dz[col_of_node[k]:col_of_node[k] + 6]
            ptry = period + alpha * dz[tcol] if with_period else period
            return trial, ptry

        base = np.linalg.norm(rhs_vec)
        best = None
        alpha = 1.0
        for _ in range(14):
            trial, ptry = apply(alpha)
            if ptry > 0:
                try:
                    rt_vec, _, _ = _ms_residual(trial, ptry, params, rel_tol,
                                                abs_tol, False)
                except PropagationError:
                    alpha *= 0.5
                    continue
                rt = np.linalg.norm(rt_vec)
                if with_period:
                    rt = math.hypot(rt, abs(jacobi(trial[0], params) - target_jacobi))
                if rt < base * (1.0 - 1e-4 * alpha) or rt < tol:
                    best = (rt, trial, ptry)
                    break
                if best is None or rt < best[0]:
                    best = (rt, trial, ptry)
            alpha *= 0.5
        if best is None or best[0] >= base:
            if base < 100.0 * tol * math.sqrt(m):
                break  # at the integration noise floor; the polish finishes
            raise CorrectionError("corrector line search stalled")
        nodes, period = best[1], best[2]

    # single-shooting polish: the multi-arc solution differs from the fixed
    # point of the one-shot flow map by the integration path difference
    # amplified by the orbit's multiplier; a couple of Newton steps against
    # the plain one-shot map remove it
    y = nodes[0].copy()
    for _ in range(4):
        _, stm = _flow_with_stm(y, period, params, rel_tol, abs_tol)
        yf = propagate(AugmentedState.from_vector(y), 0.0, period, params,
                       rel_tol=rel_tol, abs_tol=abs_tol).pv
        res = yf - y
        cerr = (jacobi(y, params) - target_jacobi) if with_period else 0.0
        if np.linalg.norm(res) < 1e-12 and abs(cerr) < 1e-12:
            break
        ncol = 5 + (1 if with_period else 0)
        nrow = 6 + (1 if with_period else 0)
        jac = np.zeros((nrow, ncol))
        mm = stm - np.eye(6)
        for cidx, idx in enumerate(free0):
            jac[:6, cidx] = mm[:, idx]
        rhs_vec = res
        if with_period:
            jac[:6, 5] = vector_field(np.append(yf, 1.0), COAST, params)[:6] / 1.0
            gc = jacobi_gradient(y, params)
            for cidx, idx in enumerate(free0):
                jac[6, cidx] = gc[idx]
            rhs_vec = np.append(res, cerr)
        dz, *_ = np.linalg.lstsq(jac, -rhs_vec, rcond=None)
        ytry = y.copy()
        for cidx, idx in enumerate(free0):
            ytry[idx] += dz[cidx]
        ptry = period + dz[5] if with_period else period
        yft = propagate(AugmentedState.from_vector(ytry), 0.0, ptry, params,
                        rel_tol=rel_tol, abs_tol=abs_tol).pv
        rt = np.linalg.norm(yft - ytry)
        if with_period:
            rt = math.hypot(rt, abs(jacobi(ytry, params) - target_jacobi))
        if rt >= math.hypot(np.linalg.norm(res), cerr):
            break
        y, period = ytry, ptry

    _, monodromy = _flow_with_stm(y, period, params, rel_tol, abs_tol)
    orbit = PeriodicOrbit(x0=AugmentedState.from_vector(y), period=period,
                          jacobi=jacobi(y, params), resonance_label=resonance_label,
                          monodromy=monodromy)
    eig = monodromy_analysis(orbit, params)
    return PeriodicOrbit(x0=orbit.x0, period=period, jacobi=orbit.jacobi,
                         resonance_label=resonance_label, monodromy=monodromy,
                         stable_eigval=eig.get("stable_eigval"),
                         unstable_eigval=eig.get("unstable_eigval"),
                         stable_eigvec=eig.get("stable_eigvec"),
                         unstable_eigvec=eig.get("unstable_eigvec"),
                         n_iterations=n_iter)


def pair_eigenvalues(eigvals, eigvecs=None):
    """Group the six multipliers into reciprocal pairs (greedy best match).

    Returns a list of (i, j) index pairs with |lam_i| >= |lam_j| and
    lam_i * lam_j closest to 1.
    """
    idx = list(range(len(eigvals)))
    pairs = []
    while idx:
        i = max(idx, key=lambda k: abs(eigvals[k]))
        idx.remove(i)
        j = min(idx, key=lambda k: abs(eigvals[i] * eigvals[k] - 1.0))
        idx.remove(j)
        pairs.append((i, j))
    return pairs


_PLANAR_IDX = np.array([0, 1, 3, 4])
_VERT_IDX = np.array([2, 5])


def monodromy_analysis(orbit, params, planar_tol=1e-10):
    """Eigen-decomposition of the monodromy with pair classification.

    Returns a dict with keys eigvals, pairs, classes plus the real
    hyperbolic pair (unstable_eigval/vec, stable_eigval/vec) when present.
    For planar orbits the matrix block-decouples into the in-plane 4x4 and
    the out-of-plane 2x2; the manifold-driving pair is the in-plane real
    pair with |lam| > 1 (the out-of-plane pair, which can itself be
    parametrically unstable, never defines the planar manifolds). Orbits
    without such a pair report ``hyperbolic=False``.
    """
    x0 = orbit.x0.pv
    planar = abs(x0[2]) < planar_tol and abs(x0[5]) < planar_tol
    mono = orbit.monodromy
    if planar:
        mi = mono[np.ix_(_PLANAR_IDX, _PLANAR_IDX)]
        mo = mono[np.ix_(_VERT_IDX, _VERT_IDX)]
        vals_i, vecs_i = np.linalg.eig(mi)
        vals_o, vecs_o = np.linalg.eig(mo)
        vals = np.concatenate([vals_i, vals_o])
        vecs = np.zeros((6, 6), dtype=complex)
        for c in range(4):
            vecs[_PLANAR_IDX, c] = vecs_i[:, c]
        for c in range(2):
            vecs[_VERT_IDX, 4 + c] = vecs_o[:, c]
        in_plane = [True] * 4 + [False] * 2
    else:
        vals, vecs = np.linalg.eig(mono)
        weight = np.linalg.norm(np.abs(vecs[_PLANAR_IDX, :]), axis=0)
        in_plane = list(weight > 0.5)
    pairs = pair_eigenvalues(vals)
    classes = []
    for i, j in pairs:
        li, lj = vals[i], vals[j]
        if abs(li - 1.0) < 1e-4 and abs(lj - 1.0) < 1e-4:
            cls = "unit"
        elif abs(li.imag) < 1e-9 * max(1.0, abs(li)) and abs(li.real) > 1.0 + 1e-9:
            cls = "hyperbolic"
        else:
            cls = "center"
        if not (in_plane[i] and in_plane[j]):
            cls = "vertical-" + cls
        classes.append(cls)
    out = {"eigvals": vals, "pairs": pairs, "classes": classes, "hyperbolic": False}
    best = None
    for (i, j), cls in zip(pairs, classes):
        if cls != "hyperbolic":
            continue
        if best is None or abs(vals[i]) > abs(vals[best[0]]):
            best = (i, j)
    if best is not None:
        i, j = best
        vu = np.real(vecs[:, i])
        vs = np.real(vecs[:, j])
        vu /= np.linalg.norm(vu)
        vs /= np.linalg.norm(vs)
        out.update(hyperbolic=True,
                   unstable_eigval=float(np.real(vals[i])),
                   stable_eigval=float(np.real(vals[j])),
                   unstable_eigvec=vu, stable_eigvec=vs)
    else:
        log.warning("orbit %s at C=%.6f has no real in-plane hyperbolic pair",
                    orbit.resonance_label, orbit.jacobi)
    return out


def build_lookup(seeds, params, c_min=2.995, c_max=3.005, step=0.001,
                 continuation_bound=0.1, tol=1e-12, allow_partial=False,
                 **corrector_opts):
    """Correct every seed family onto the uniform Jacobi grid.

    ``seeds``: mapping label -> (state6, period) used as the continuation
    start for that family. Levels run from c_min to c_max inclusive with the
    given spacing; each level stores one corrected orbit per family,
    continued from the nearest already-corrected neighbor with step halving
    on failure.
    """
    n_levels = int(round((c_max - c_min) / step)) + 1 if c_max > c_min else 1
    levels = c_min + step * np.arange(n_levels)
    if n_levels > 1:
        levels[-1] = c_max
    orbits = {}
    failures = []
    for label, (state, period) in seeds.items():
        family = []
        prev_state, prev_period = np.asarray(state, float)[:6], float(period)
        c_prev = None
        for k, level in enumerate(levels):
            try:
                orb = _continue_to_level(prev_state, prev_period, level, c_prev,
                                         params, label, tol, corrector_opts)
            except CorrectionError as exc:
                failures.append((label, k, float(level), str(exc)))
                log.error("continuation failed for %s at level %d (C=%.6f): %s",
                          label, k, level, exc)
                family.append(None)
                continue
            if family and family[-1] is not None:
                jump = np.linalg.norm(orb.x0.pv - family[-1].x0.pv)
                if jump > continuation_bound:
                    failures.append((label, k, float(level),
                                     f"family jump {jump:.3f} DU"))
                    family.append(None)
                    continue
            family.append(orb)
            prev_state, prev_period = orb.x0.pv, orb.period
            c_prev = orb.jacobi
        orbits[label] = family
    if failures and not allow_partial:
        raise CorrectionError(f"look-up table incomplete: {failures}")
    return EnergyLookupTable(levels=levels, orbits=orbits, step=step), failures


def _continue_to_level(state, period, level, c_from, params, label, tol, opts):
    """Continuation in C with step halving, falling back to a period walk.

    Near close approaches the Jacobi value is a poor continuation parameter
    (the corrector stalls); walking the family in period instead traverses
    those regions, after which the exact level is re-targeted.
    """
    if c_from is None:
        c_from = jacobi(state, params)
    targets = [level]
    attempt = 0
    cur_state, cur_period, cur_c = state, period, c_from
    while targets:
        tgt = targets[-1]
        try:
            orb = correct_orbit(cur_state, cur_period, params, mode="fix_jacobi",
                                target_jacobi=tgt, resonance_label=label,
                                tol=tol, **opts)
        except CorrectionError:
            attempt += 1
            if attempt > 4:
                cur_state, cur_period, cur_c = _walk_period_toward(
                    cur_state, cur_period, tgt, params, label, tol, opts)
                attempt = 0
                targets = [level]
                continue
            targets.append(0.5 * (cur_c + tgt))
            continue
        targets.pop()
        cur_state, cur_period, cur_c = orb.x0.pv, orb.period, orb.jacobi
    return orb


def _walk_period_toward(state, period, target, params, label, tol, opts,
                        dt0=0.002, max_steps=600):
    """March the family in period until its Jacobi value brackets ``target``."""
    orb = correct_orbit(state, period, params, mode="fix_period",
                        resonance_label=label, tol=tol, **opts)
    probe = correct_orbit(orb.x0.pv, orb.period + dt0, params, mode="fix_period",
                          resonance_label=label, tol=tol, **opts)
    if probe.jacobi == orb.jacobi:
        raise CorrectionError("period walk cannot move the Jacobi value")
    sgn = 1.0 if (target - orb.jacobi) * (probe.jacobi - orb.jacobi) > 0 else -1.0
    cur = probe if sgn > 0 else orb
    dt = sgn * dt0
    fails = 0
    for _ in range(max_steps):
        if (cur.jacobi - target) * (orb.jacobi - target) <= 0:
            return cur.x0.pv, cur.period, cur.jacobi
        try:
            nxt = correct_orbit(cur.x0.pv, cur.period + dt, params, mode="fix_period",
                                resonance_label=label, tol=tol, **opts)
        except CorrectionError:
            dt *= 0.5
            fails += 1
            if abs(dt) < 1e-7 or fails > 40:
                raise
            continue
        cur = nxt
        if abs(dt) < dt0:
            dt *= 2.0
    raise CorrectionError(f"period walk did not reach C={target}")


_TABLE_FIELDS = ("level_index", "jacobi_level", "resonance_label",
                 "q1", "q2", "q3", "v1", "v2", "v3", "period", "jacobi",
                 "stable_eigval", "unstable_eigval")


def save_table_csv(path, table, params):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu", "c_min", "c_max", "step"])
        w.writerow([repr(params.mu), repr(float(table.levels[0])),
                    repr(float(table.levels[-1])), repr(float(table.step))])
        header = list(_TABLE_FIELDS) + [f"m{i}{j}" for i in range(6) for j in range(6)] \
            + [f"us{i}" for i in range(6)] + [f"st{i}" for i in range(6)]
        w.writerow(header)
        for label in table.labels:
            for k, orb in enumerate(table.orbits[label]):
                if orb is None:
                    continue
                row = [k, repr(float(table.levels[k])), label,
                       *[repr(float(v)) for v in orb.x0.pv],
                       repr(float(orb.period)), repr(float(orb.jacobi)),
                       repr(float(orb.stable_eigval)) if orb.stable_eigval is not None else "",
                       repr(float(orb.unstable_eigval)) if orb.unstable_eigval is not None else ""]
                row += [repr(float(v)) for v in orb.monodromy.ravel()]
                uv = orb.unstable_eigvec if orb.unstable_eigvec is not None else np.full(6, np.nan)
                sv = orb.stable_eigvec if orb.stable_eigvec is not None else np.full(6, np.nan)
                row += [repr(float(v)) for v in uv]
                row += [repr(float(v)) for v in sv]
                w.writerow(row)


def load_table_csv(path, params, tol=1e-12):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)  # key header
        mu, c_min, c_max, step = (float(v) for v in next(r))
        if abs(mu - params.mu) > tol:
            raise ValueError(f"table cached for mu={mu}, config has mu={params.mu}")
        header = next(r)
        idx = {name: i for i, name in enumerate(header)}
        rows = list(r)
    n_levels = int(round((c_max - c_min) / step)) + 1 if c_max > c_min else 1
    levels = c_min + step * np.arange(n_levels)
    if n_levels > 1:
        levels[-1] = c_max
    orbits = {}
    for row in rows:
        k = int(row[idx["level_index"]])
        label = row[idx["resonance_label"]]
        pv = np.array([float(row[idx[c]]) for c in ("q1", "q2", "q3", "v1", "v2", "v3")])
        mono = np.array([float(row[idx[f"m{i}{j}"]])
                         for i in range(6) for j in range(6)]).reshape(6, 6)
        us = row[idx["unstable_eigval"]]
        st = row[idx["stable_eigval"]]
        uv = np.array([float(row[idx[f"us{i}"]]) for i in range(6)])
        sv = np.array([float(row[idx[f"st{i}"]]) for i in range(6)])
        orb = PeriodicOrbit(
            x0=AugmentedState.from_vector(pv), period=float(row[idx["period"]]),
            jacobi=float(row[idx["jacobi"]]), resonance_label=label, monodromy=mono,
            stable_eigval=float(st) if st else None,
            unstable_eigval=float(us) if us else None,
            stable_eigvec=None if np.any(np.isnan(sv)) else sv,
            unstable_eigvec=None if np.any(np.isnan(uv)) else uv)
        orbits.setdefault(label, [None] * n_levels)[k] = orb
    return EnergyLookupTable(levels=levels, orbits=orbits, step=step)
