"""Local NLP solver and monotonic basin hopping global search.

The local solver is an augmented Lagrangian outer loop around a
bound-constrained quasi-Newton inner minimization (L-BFGS-B), with
constraint Jacobians from finite differences. Optimality is certified
solver-independently: multipliers are fit by least squares at the
candidate point and the bound-projected Lagrangian gradient norm is the
reported KKT residual. Records never raise on non-convergence; the status
field carries the outcome.
"""

import json
import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .transcribe import MteScenario, eval_constraints, eval_derivatives

log = logging.getLogger(__name__)

STATUS_INFEASIBLE = "infeasible"
STATUS_FEASIBLE = "feasible"
STATUS_OPTIMAL = "optimal"

_BIG = 1e10


@dataclass
class SolverOptions:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-6
    max_outer: int = 12
    max_inner: int = 60
    rho0: float = 10.0
    rho_growth: float = 5.0
    rho_max: float = 1e10
    # solver-level FD steps; the floor sits above the few-1e-9 jitter of
    # adaptive-step defect evaluations
    fd_step_rel: float = 1e-7
    fd_step_abs: float = 1e-6
    jobs: int = 1
    stall_iters: int = 2
    stall_tol: float = 1e-11


@dataclass
class HopOptions:
    n_hops: int = 12
    hop_scale: float = 0.05
    pareto_prob: float = 0.05
    pareto_alpha: float = 1.5
    pareto_cap: float = 20.0
    seed: int = 0


@dataclass
class SolutionRecord:
    x: np.ndarray
    objective: float
    max_violation: float
    kkt_residual: float
    status: str
    scenario: MteScenario | None
    iterations: int
    wall_time: float
    random_seed: int | None
    defects: np.ndarray

    @property
    def feasible(self):
        return self.status in (STATUS_FEASIBLE, STATUS_OPTIMAL)

    def to_dict(self):
        def fin(v):
            v = float(v)
            return v if np.isfinite(v) else 1e300

        d = dict(objective=fin(self.objective),
                 max_violation=fin(self.max_violation),
                 kkt_residual=fin(self.kkt_residual),
                 status=self.status,
                 iterations=int(self.iterations),
                 wall_time=float(self.wall_time),
                 random_seed=self.random_seed,
                 x=[float(v) for v in self.x],
                 defects=[float(v) for v in self.defects])
        if self.scenario is not None:
            d["scenario"] = dict(segment_index=self.scenario.segment_index,
                                 delta_tau=self.scenario.delta_tau)
        return d

    @classmethod
    def from_dict(cls, d):
        scenario = None
        if "scenario" in d and d["scenario"] is not None:
            scenario = MteScenario(d["scenario"]["segment_index"],
                                   d["scenario"]["delta_tau"])
        return cls(x=np.array(d["x"]), objective=d["objective"],
                   max_violation=d["max_violation"],
                   kkt_residual=d["kkt_residual"], status=d["status"],
                   scenario=scenario, iterations=d["iterations"],
                   wall_time=d["wall_time"], random_seed=d.get("random_seed"),
                   defects=np.array(d["defects"]))


def classify(max_violation, kkt_residual, feas_tol, opt_tol):
    """Status from the violation/KKT pair, mirroring the record invariants."""
    if not np.isfinite(max_violation) or max_violation >= feas_tol:
        return STATUS_INFEASIBLE
    if kkt_residual < opt_tol:
        return STATUS_OPTIMAL
    return STATUS_FEASIBLE


def kkt_residual(nlp, x, jac, grad_f, active_tol=1e-9):
    """Bound-projected Lagrangian gradient norm with least-squares
    multipliers fit on the inactive variable set (bound-active components
    are explained by their bound multipliers, not the equality ones)."""
    lo, up = nlp.lower, nlp.upper
    at_lo = x <= lo + active_tol
    at_up = x >= up - active_tol
    free = ~(at_lo | at_up)
    if np.any(free):
        lam, *_ = np.linalg.lstsq(jac[:, free].T, grad_f[free], rcond=None)
    else:
        lam = np.zeros(jac.shape[0])
    g = grad_f - jac.T @ lam
    g[at_lo] = np.minimum(g[at_lo], 0.0)
    g[at_up & ~at_lo] = np.maximum(g[(at_up & ~at_lo)], 0.0)
    return float(np.linalg.norm(g, ord=np.inf))


def restore_feasibility(nlp, x, opts, max_iter=40):
    """Projected Levenberg-Marquardt on the defects alone.

    Minimum-norm Newton steps on the underdetermined equality system with
    adaptive damping, backtracked on the residual norm and clipped into the
    bounds. Returns (x, converged, n_iter); stalls are not an error (the
    caller falls back to the augmented Lagrangian loop).
    """
    x = np.clip(np.asarray(x, dtype=float).copy(), nlp.lower, nlp.upper)
    nu = 0.0
    it = 0
    for it in range(max_iter):
        c = eval_constraints(nlp, x)
        if not np.all(np.isfinite(c)):
            return x, False, it
        if np.linalg.norm(c, ord=np.inf) < opts.feas_tol:
            return x, True, it
        _, jac = eval_derivatives(nlp, x, c0=c, fd_step_rel=opts.fd_step_rel,
                                  fd_step_abs=opts.fd_step_abs, jobs=opts.jobs)
        base = np.linalg.norm(c)
        gram = jac @ jac.T
        scale = max(float(np.trace(gram)) / gram.shape[0], 1e-30)
        improved = False
        for _ in range(10):
            try:
                w = np.linalg.solve(gram + nu * scale * np.eye(gram.shape[0]), -c)
            except np.linalg.LinAlgError:
                w = np.linalg.lstsq(gram, -c, rcond=None)[0]
            dz = jac.T @ w
            alpha = 1.0
            for _ in range(6):
                xt = np.clip(x + alpha * dz, nlp.lower, nlp.upper)
                ct = eval_constraints(nlp, xt)
                if np.all(np.isfinite(ct)) and \
                        np.linalg.norm(ct) < base * (1 - 1e-3 * alpha):
                    x = xt
                    improved = True
                    break
                alpha *= 0.5
            if improved:
                nu = max(nu / 10.0, 0.0) if nu > 1e-12 else 0.0
                break
            nu = 10.0 * nu if nu > 0 else 1e-4
        if not improved:
            return x, False, it
    c = eval_constraints(nlp, x)
    ok = np.all(np.isfinite(c)) and np.linalg.norm(c, ord=np.inf) < opts.feas_tol
    return x, bool(ok), it


def solve_local(nlp, x0=None, opts=None, random_seed=None):
    """Feasibility restoration interleaved with augmented Lagrangian outers.

    Each outer round seeds the multipliers by least squares at the current
    (near-feasible) point, runs a capped quasi-Newton minimization of the
    augmented Lagrangian under the bounds, and re-polishes feasibility.
    Always returns a :class:`SolutionRecord`; status conveys the outcome.
    The stored violation and defects come from an independent re-evaluation
    at the final point.
    """
    opts = opts or SolverOptions()
    t_start = time.perf_counter()
    x = nlp.initial_guess() if x0 is None else np.asarray(x0, dtype=float).copy()
    x = np.clip(x, nlp.lower, nlp.upper)
    m = nlp.n_eq
    rho = opts.rho0
    bounds = list(zip(nlp.lower, nlp.upper))
    total_inner = 0
    best = None
    lam = np.zeros(m)
    stall = 0

    for outer in range(opts.max_outer):
        x, _, n2 = restore_feasibility(nlp, x, opts, max_iter=60)
        total_inner += n2
        c = eval_constraints(nlp, x)
        finite = np.all(np.isfinite(c))
        viol = float(np.max(np.abs(c))) if finite else np.inf
        if finite:
            gf, jac = eval_derivatives(nlp, x, c0=c, fd_step_rel=opts.fd_step_rel,
                                       fd_step_abs=opts.fd_step_abs, jobs=opts.jobs)
            kkt = kkt_residual(nlp, x, jac, gf)
        else:
            jac = None
            kkt = np.inf
        fval = nlp.objective(x)
        key = (viol >= opts.feas_tol,
               fval if viol < opts.feas_tol else viol)
        if best is None or key[0] < best[0][0] or \
                (key[0] == best[0][0] and key[1] < best[0][1] - opts.stall_tol):
            best = (key, x.copy(), viol, kkt,
                    c.copy() if finite else np.full(m, np.nan))
            stall = 0
        else:
            stall += 1
            if stall > opts.stall_iters:
                break
        if viol < opts.feas_tol and kkt < opts.opt_tol:
            break
        if jac is not None and viol < 1e-3:
            lam, *_ = np.linalg.lstsq(jac.T, nlp.objective_gradient(x), rcond=None)
        lam_k, rho_k = lam, rho
        rho = min(rho * opts.rho_growth, opts.rho_max)

        def merit_and_grad(xx):
            cc = eval_constraints(nlp, xx)
            if not np.all(np.isfinite(cc)):
                return _BIG, np.zeros_like(xx)
            _, jj = eval_derivatives(nlp, xx, c0=cc, fd_step_rel=opts.fd_step_rel,
                                     fd_step_abs=opts.fd_step_abs, jobs=opts.jobs)
            phi = nlp.objective(xx) - lam_k @ cc + 0.5 * rho_k * (cc @ cc)
            gphi = nlp.objective_gradient(xx) + jj.T @ (rho_k * cc - lam_k)
            return phi, gphi

        res = minimize(merit_and_grad, x, jac=True, method="L-BFGS-B",
                       bounds=bounds,
                       options=dict(maxiter=opts.max_inner, ftol=1e-14,
                                    gtol=min(1e-8, 0.1 * opts.opt_tol)))
        total_inner += res.nit
        x = res.x

    _, x, viol, kkt, c = best
    x, viol, c = _snap_throttles(nlp, x, viol, c, opts)
    status = classify(viol, kkt, opts.feas_tol, opts.opt_tol)
    return SolutionRecord(x=x, objective=nlp.objective(x), max_violation=viol,
                          kkt_residual=kkt, status=status, scenario=nlp.scenario,
                          iterations=total_inner,
                          wall_time=time.perf_counter() - t_start,
                          random_seed=random_seed, defects=c)


def ballistic_guess(nlp, n_shoot=5, n_coast=9):
    """Zero-thrust start with coast/shooting times from a coarse scan.

    Sweeps the three time variables over a grid and keeps the combination
    with the smallest reference midpoint defect under pure coasting; all
    other variables stay at the plain ballistic guess. Cheap (coast-only
    propagations) and deterministic.
    """
    x = nlp.initial_guess()
    cfg = nlp.config
    ts_grid = np.linspace(*cfg.t_shoot_bounds, n_shoot)
    tc_grid = np.linspace(*cfg.t_coast_bounds, n_coast)
    best = (np.inf, None)
    for ts in ts_grid:
        for ti in tc_grid:
            for tf in tc_grid:
                xt = x.copy()
                xt[0], xt[1], xt[2] = ts, ti, tf
                if nlp.scenario is not None:
                    base = 3 * nlp.n_ref + 4
                    xt[base + 0] = max((nlp.n_real / nlp.n_ref) * ts,
                                       cfg.t_shoot_bounds[0])
                    xt[base + 2] = tf
                c = eval_constraints(nlp, xt)
                if not np.all(np.isfinite(c)):
                    continue
                nrm = float(np.linalg.norm(c[:7]))
                if nrm < best[0]:
                    best = (nrm, xt)
    return x if best[1] is None else best[1]


def _snap_throttles(nlp, x, viol, c, opts, snap=1e-6):
    """Zero out vanishing throttles when feasibility is unaffected.

    Throttles below the defect-tolerance deadband are indistinguishable
    from zero to the constraints, so nothing in the NLP parks them exactly
    at the bound; the snapped vector is re-verified before acceptance.
    """
    dv = nlp.decision(x)
    blocks = [dv.ref_controls] + ([dv.real_controls] if nlp.scenario else [])
    small = [blk[:, 0] for blk in blocks]
    if not any(np.any((s > 0) & (s < snap)) for s in small):
        return x, viol, c
    xt = x.copy()
    dvt = nlp.decision(xt)
    for blk in [dvt.ref_controls] + ([dvt.real_controls] if nlp.scenario else []):
        thr = blk[:, 0]
        thr[(thr > 0) & (thr < snap)] = 0.0
    ct = eval_constraints(nlp, xt)
    if np.all(np.isfinite(ct)):
        violt = float(np.max(np.abs(ct)))
        if violt <= max(viol, opts.feas_tol * 0.99):
            return xt, violt, ct
    return x, viol, c


def _perturb(x, nlp, rng, opts):
    width = nlp.upper - nlp.lower
    step = opts.hop_scale * width * rng.standard_normal(x.shape[0])
    if rng.random() < opts.pareto_prob:
        factor = min((1.0 / rng.random()) ** (1.0 / opts.pareto_alpha),
                     opts.pareto_cap)
        step = step * factor
    return np.clip(x + step, nlp.lower, nlp.upper)


def basin_hop(nlp, hop_opts=None, solver_opts=None, x0=None):
    """Monotonic basin hopping: perturb the incumbent, solve locally,
    accept only strict feasible improvements.

    Returns (best record, archive of every local solve in order). The
    archive and the incumbent path are reproducible for a fixed seed.
    """
    hop_opts = hop_opts or HopOptions()
    solver_opts = solver_opts or SolverOptions()
    rng = np.random.default_rng(hop_opts.seed)
    if x0 is None:
        x0 = ballistic_guess(nlp)
    rec = solve_local(nlp, x0=x0, opts=solver_opts, random_seed=hop_opts.seed)
    archive = [rec]
    incumbent = rec if rec.feasible else None
    base_x = rec.x
    for hop in range(hop_opts.n_hops):
        x_try = _perturb(incumbent.x if incumbent is not None else base_x,
                         nlp, rng, hop_opts)
        rec = solve_local(nlp, x0=x_try, opts=solver_opts,
                          random_seed=hop_opts.seed)
        archive.append(rec)
        if rec.feasible and (incumbent is None
                             or rec.objective < incumbent.objective):
            incumbent = rec
            log.info("hop %d accepted: objective %.9f (%s)", hop,
                     rec.objective, rec.status)
    best = incumbent if incumbent is not None else \
        min(archive, key=lambda r: r.max_violation)
    return best, archive


def write_archive(path, records, mode="w"):
    with open(path, mode) as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def read_archive(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(SolutionRecord.from_dict(json.loads(line)))
    return out
