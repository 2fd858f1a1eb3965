import numpy as np
import pytest

from resmte.dynamics import AugmentedState, ControlVector, propagate
from resmte.transcribe import (DecisionVector, MteScenario, ProblemConfig,
                               TranscriptionError, block_size, build_nlp,
                               eval_constraints, eval_derivatives,
                               load_decision_csv, problem_from_table,
                               save_decision_csv, zero_outage_vector)


@pytest.fixture(scope="module")
def problem(params, mini_table):
    from resmte.config import default_config

    cfg = default_config()
    cfg.problem.n_segments = 6
    return problem_from_table(cfg, mini_table)


def consistent_vector(problem, params, n=6, seed=3, thrust_scale=0.6):
    """Assemble a decision vector by flying one continuous trajectory and a
    matching config whose arrival state is its endpoint."""
    rng = np.random.default_rng(seed)
    ctrl = np.column_stack([rng.uniform(0, thrust_scale, n),
                            rng.uniform(-1.5, 1.5, n),
                            rng.uniform(-0.2, 0.2, n)])
    ts, ti, tf = 8.0, 3.0, 2.5
    sched = [(ti, ControlVector())] + \
        [(ts / n, ControlVector(*c)) for c in ctrl] + [(tf, ControlVector())]
    fin = propagate(AugmentedState.from_vector(np.append(problem.xi0, 1.0)),
                    0.0, ti + ts + tf, params, controls=sched,
                    rel_tol=1e-12, abs_tol=1e-12)
    cfg2 = ProblemConfig(params=params, xi0=problem.xi0, xi1=fin.pv,
                         n_segments=n, rel_tol=1e-12, abs_tol=1e-12)
    x = np.array([ts, ti, tf] + list(ctrl.ravel()) + [fin.m])
    return cfg2, x


def test_variable_and_constraint_counts(problem):
    for n in (4, 10, 45):
        cfg = ProblemConfig(params=problem.params, xi0=problem.xi0,
                            xi1=problem.xi1, n_segments=n)
        nlp = build_nlp(cfg)
        assert nlp.n_var == 3 * n + 4
        assert nlp.n_eq == 7
        for i in range(1, n + 1):
            nr = build_nlp(cfg, MteScenario(i, 1.0))
            assert nr.n_var == (3 * n + 4) + (3 * (n - i) + 4)
            assert nr.n_eq == 14


def test_scenario_validation(problem):
    with pytest.raises(ValueError):
        MteScenario(0, 1.0)
    with pytest.raises(ValueError):
        MteScenario(2, -0.5)
    cfg = ProblemConfig(params=problem.params, xi0=problem.xi0,
                        xi1=problem.xi1, n_segments=4)
    with pytest.raises(TranscriptionError):
        build_nlp(cfg, MteScenario(5, 1.0))


def test_decision_vector_views(problem):
    cfg = ProblemConfig(params=problem.params, xi0=problem.xi0,
                        xi1=problem.xi1, n_segments=5)
    sc = MteScenario(2, 1.5)
    nlp = build_nlp(cfg, sc)
    x = nlp.initial_guess()
    dv = nlp.decision(x)
    assert dv.ref_controls.shape == (5, 3)
    assert dv.real_controls.shape == (3, 3)
    ts, ti, tf = dv.ref_times
    assert dv.tau1 == pytest.approx(ti + 2 * ts / 5)
    assert dv.tau2 == pytest.approx(dv.tau1 + 1.5)
    with pytest.raises(TranscriptionError):
        DecisionVector(x[:-1], 5, sc)


def test_construction_gives_zero_defects(problem, params):
    cfg2, x = consistent_vector(problem, params)
    nlp = build_nlp(cfg2)
    c = eval_constraints(nlp, x)
    assert np.max(np.abs(c)) < 1e-10


def test_zero_outage_reduction(problem, params):
    cfg2, x = consistent_vector(problem, params)
    for i in (1, 3, 5):
        nlp_r = build_nlp(cfg2, MteScenario(i, 0.0))
        xr = zero_outage_vector(nlp_r, x)
        c = eval_constraints(nlp_r, xr)
        ref, real = np.abs(c[:7]), np.abs(c[7:])
        assert np.max(ref) < 1e-9
        assert np.max(real) < 1e-9


def test_last_segment_scenario(problem, params):
    cfg2, x = consistent_vector(problem, params)
    n = 6
    nlp_r = build_nlp(cfg2, MteScenario(n, 0.0))
    assert nlp_r.n_var == (3 * n + 4) + 4
    xr = zero_outage_vector(nlp_r, x)
    c = eval_constraints(nlp_r, xr)
    assert np.max(np.abs(c)) < 1e-9


def test_objective_and_gradient(problem):
    nlp = build_nlp(ProblemConfig(params=problem.params, xi0=problem.xi0,
                                  xi1=problem.xi1, n_segments=4))
    x = nlp.initial_guess()
    x[nlp.mf_index] = 0.9
    assert nlp.objective(x) == -0.9
    g = nlp.objective_gradient(x)
    assert g[nlp.mf_index] == -1.0
    assert np.count_nonzero(g) == 1


def test_jacobian_vs_central_differences(problem, params):
    cfg2, x = consistent_vector(problem, params)
    nlp = build_nlp(cfg2)
    _, jac = eval_derivatives(nlp, x)

    def central(j, h):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        return (eval_constraints(nlp, xp) - eval_constraints(nlp, xm)) / (2 * h)

    # time columns carry O(1) derivatives and match tightly
    for j in (0, 1, 2):
        ref = central(j, 5e-7 * max(1.0, abs(x[j])))
        assert np.linalg.norm(jac[:, j] - ref) / np.linalg.norm(ref) < 1e-5
    # control columns are weaker; the forward-difference noise floor shows
    for j in (3, 5):
        ref = central(j, 1e-6)
        denom = max(np.linalg.norm(ref), 1e-9)
        assert np.linalg.norm(jac[:, j] - ref) / denom < 2e-3


def test_defect_prediction_first_order(problem, params):
    """J @ dx predicts the defect change to second order in the step."""
    cfg2, x = consistent_vector(problem, params)
    nlp = build_nlp(cfg2)
    c0 = eval_constraints(nlp, x)
    _, jac = eval_derivatives(nlp, x, c0=c0)
    rng = np.random.default_rng(8)
    d = rng.standard_normal(nlp.n_var)
    d /= np.linalg.norm(d)
    errs = []
    for delta in (1e-4, 1e-5):
        c1 = eval_constraints(nlp, x + delta * d)
        errs.append(np.linalg.norm(c1 - c0 - delta * (jac @ d)))
    # halving the step by 10 shrinks the remainder ~100x (second order),
    # down to the finite-difference noise floor
    assert errs[1] < 0.05 * errs[0] + 1e-9


def test_zero_thrust_kills_angle_sensitivity(problem):
    nlp = build_nlp(ProblemConfig(params=problem.params, xi0=problem.xi0,
                                  xi1=problem.xi1, n_segments=4))
    x = nlp.initial_guess()  # all throttles zero
    _, jac = eval_derivatives(nlp, x)
    dv = nlp.decision(x)
    for k in range(4):
        alpha_col = 3 + 3 * k + 1
        beta_col = 3 + 3 * k + 2
        assert np.all(jac[:, alpha_col] == 0.0)
        assert np.all(jac[:, beta_col] == 0.0)
    # the mass-defect row never reacts to direction angles
    mass_row = jac[6]
    thr_cols = [3 + 3 * k for k in range(4)]
    assert np.any(mass_row[thr_cols] != 0.0)


def test_nonfinite_defects_on_bad_state(problem):
    cfg = ProblemConfig(params=problem.params, xi0=np.zeros(6),
                        xi1=problem.xi1, n_segments=4)
    nlp = build_nlp(cfg)
    x = nlp.initial_guess()
    c = eval_constraints(nlp, x)  # xi0 at the primary's center: singular
    assert not np.any(np.isfinite(c))


def test_decision_csv_roundtrip(problem, tmp_path):
    cfg = ProblemConfig(params=problem.params, xi0=problem.xi0,
                        xi1=problem.xi1, n_segments=4)
    sc = MteScenario(2, 2.5)
    nlp = build_nlp(cfg, sc)
    x = nlp.initial_guess()
    path = tmp_path / "x.csv"
    save_decision_csv(path, x, 4, sc)
    x2, n_ref, sc2 = load_decision_csv(path)
    assert np.array_equal(x, x2)
    assert n_ref == 4 and sc2 == sc
