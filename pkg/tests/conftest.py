import numpy as np
import pytest

from resmte.dynamics import SystemParams
from resmte.orbits import build_lookup, correct_orbit, kepler_resonance_seed
from resmte.sections import SurfaceOfSection


@pytest.fixture(scope="session")
def params():
    return SystemParams.jupiter_europa()


@pytest.fixture(scope="session")
def section():
    return SurfaceOfSection()


@pytest.fixture(scope="session")
def orbit34(params):
    """3:4 resonant orbit at C = 2.995 (planar hyperbolic)."""
    seed, period = kepler_resonance_seed(3, 4, 3.020)
    return correct_orbit(seed, period, params, mode="fix_jacobi",
                         target_jacobi=2.995, resonance_label="3:4")


@pytest.fixture(scope="session")
def orbit56(params):
    """5:6 resonant orbit at C = 3.005 (planar hyperbolic)."""
    seed, period = kepler_resonance_seed(5, 6, 3.0075)
    return correct_orbit(seed, period, params, mode="fix_jacobi",
                         target_jacobi=3.005, resonance_label="5:6")


@pytest.fixture(scope="session")
def mini_table(params, orbit34, orbit56):
    """Three-level look-up table (2.995, 3.000, 3.005) for cheap tests."""
    table, failures = build_lookup(
        {"3:4": (orbit34.x0.pv, orbit34.period),
         "5:6": (orbit56.x0.pv, orbit56.period)},
        params, c_min=2.995, c_max=3.005, step=0.005)
    assert not failures
    return table


@pytest.fixture(scope="session")
def manifold_sets(params, section, orbit34, orbit56):
    """Eight small puncture sets (both orbits, both stabilities/branches)
    at their own energies; single-orbit queries use one orbit's four."""
    from resmte.manifolds import build_puncture_set

    sets = {}
    for orb in (orbit34, orbit56):
        for stab in ("unstable", "stable"):
            for br in ("parallel", "antiparallel"):
                sets[(orb.resonance_label, stab, br)] = build_puncture_set(
                    orb, stab, br, section, params, n_seeds=80, max_time=300.0)
    return sets


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.fixture()
def random_bound_state(params):
    """Factory for planar-ish bound states away from the primaries."""

    def make(generator, z_scale=0.05):
        for _ in range(100):
            r = generator.uniform(0.45, 0.95)
            th = generator.uniform(0, 2 * np.pi)
            q = np.array([r * np.cos(th), r * np.sin(th),
                          z_scale * generator.standard_normal()])
            v = np.array([generator.normal(0, 0.3), generator.normal(0, 0.3),
                          z_scale * generator.standard_normal()])
            d2 = np.hypot(q[0] - 1 + params.mu, q[1])
            if d2 > 0.05:
                return np.concatenate([q, v])
        raise RuntimeError("could not draw a state")

    return make


@pytest.fixture()
def random_domain_state(params):
    """Factory for coast states in the operating energy band.

    Draws section-style seeds at Jacobi values around [2.99, 3.01] and
    coasts them a random phase. Arbitrary-energy plunge orbits (periapsis
    near a primary) are excluded: no adaptive integrator preserves the
    coast energy to 1e-10 at rel_tol 1e-12 through a near-collision, and
    they lie outside this toolkit's regime.
    """
    from resmte.dynamics import AugmentedState, effective_potential, propagate

    r_europa = 1560.8 / 671100.0
    r_jupiter = 71492.0 / 671100.0

    def make(generator, horizon=10.0):
        for _ in range(200):
            q1 = generator.uniform(0.58, 0.92)
            c = generator.uniform(2.99, 3.01)
            v1 = generator.uniform(-0.25, 0.25)
            u = effective_potential(np.array([q1, 0.0, 0.0]), params)
            v2sq = -c - 2.0 * u - v1 * v1
            if v2sq <= 0.01:
                continue
            sign = 1.0 if generator.random() < 0.5 else -1.0
            y = np.array([q1, 0.0, 0.0, v1, sign * np.sqrt(v2sq), 0.0])
            phase = generator.uniform(0.0, 6.0)
            y = propagate(AugmentedState.from_vector(y), 0.0, phase, params).pv
            # physical impactor screening over the test horizon
            traj = propagate(AugmentedState.from_vector(y), 0.0, horizon,
                             params, dense=True)
            r2 = np.hypot(traj.states[:, 0] - 1 + params.mu, traj.states[:, 1])
            r1 = np.hypot(traj.states[:, 0] + params.mu, traj.states[:, 1])
            if r2.min() < 2 * r_europa or r1.min() < 1.2 * r_jupiter:
                continue
            return y
        raise RuntimeError("could not draw a state")

    return make
