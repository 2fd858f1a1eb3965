"""Rotating-frame three-body dynamics with low-thrust control.

Conventions
-----------
* Nondimensional synodic units: the primary separation is 1 DU, the inverse
  mean motion 1 TU, the initial wet mass 1. The mass parameter ``mu`` places
  the primary at (-mu, 0, 0) and the secondary at (1-mu, 0, 0).
* Effective potential U = -((1-mu) r1^2 + mu r2^2)/2 - (1-mu)/r1 - mu/r2;
  the Jacobi integral C = -|v|^2 - 2U is conserved on coast arcs.
* Thrust direction angles are fixed in the rotating frame: ``alpha`` is the
  in-plane angle measured from the +q1 axis in the q1-q2 plane, ``beta`` the
  out-of-plane elevation toward +q3, so the unit direction is
  (cos b cos a, cos b sin a, sin b).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import (STATUS_MAXSTEPS, STATUS_NONFINITE, STATUS_OK,
                      STATUS_OVERFLOW, STATUS_SINGULAR, STATUS_UNDERFLOW)

DEFAULT_REL_TOL = 1e-12
DEFAULT_ABS_TOL = 1e-12
DEFAULT_MAX_STEP = 0.25
DEFAULT_R_FLOOR = 1e-12

_STATUS_MSG = {
    STATUS_SINGULAR: "distance to a primary fell below the singular floor",
    STATUS_UNDERFLOW: "step size underflow",
    STATUS_NONFINITE: "non-finite state encountered",
    STATUS_MAXSTEPS: "step budget exhausted",
    STATUS_OVERFLOW: "node buffer overflow",
}


class PropagationError(RuntimeError):
    """Raised when the integrator cannot complete a requested arc."""

    def __init__(self, status, t):
        self.status = status
        self.t = t
        msg = _STATUS_MSG.get(status, "unknown integrator failure")
        super().__init__(f"propagation failed at t={t:.6f}: {msg}")


def check_status(status, t):
    if status != STATUS_OK:
        raise PropagationError(status, t)


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of one primary pair plus the propulsion system.

    ``mu`` is dimensionless; ``isp_s`` [s], ``g0_ms2`` [m/s^2] and ``tmax_N``
    [N] are physical and get nondimensionalized through the unit scales.
    """

    mu: float
    isp_s: float = 3000.0
    g0_ms2: float = 9.806
    tmax_N: float = 2.0
    length_unit_m: float = 6.711e8
    time_unit_s: float = 48843.87881414168
    mass_unit_kg: float = 1000.0
    r_floor: float = DEFAULT_R_FLOOR

    def __post_init__(self):
        if not 0.0 < self.mu <= 0.5:
            raise ValueError(f"mass parameter must be in (0, 1/2], got {self.mu}")
        if self.isp_s <= 0 or self.g0_ms2 <= 0:
            raise ValueError("isp and g0 must be positive")
        if self.tmax_N < 0:
            raise ValueError("tmax must be nonnegative")
        if min(self.length_unit_m, self.time_unit_s, self.mass_unit_kg) <= 0:
            raise ValueError("unit scales must be positive")

    @property
    def vel_unit_ms(self):
        return self.length_unit_m / self.time_unit_s

    @property
    def tmax_nd(self):
        """Maximum thrust in DU/TU^2 per unit nondimensional mass unit."""
        force_unit = self.mass_unit_kg * self.length_unit_m / self.time_unit_s ** 2
        return self.tmax_N / force_unit

    @property
    def vexh_nd(self):
        """Exhaust velocity Isp*g0 in DU/TU."""
        return self.isp_s * self.g0_ms2 / self.vel_unit_ms

    @classmethod
    def jupiter_europa(cls, **overrides):
        """Defaults for the Jupiter-Europa pair.

        mu is computed from the published gravitational parameters
        GM_Jupiter = 126686531.9 km^3/s^2 and GM_Europa = 3202.7 km^3/s^2;
        the length unit is Europa's semi-major axis 671100 km and the time
        unit the inverse mean motion sqrt(a^3 / GM_total).
        """
        gm_j = 126686531.9
        gm_e = 3202.7
        a_km = 671100.0
        mu = gm_e / (gm_j + gm_e)
        tu = math.sqrt(a_km ** 3 / (gm_j + gm_e))
        base = dict(mu=mu, length_unit_m=a_km * 1e3, time_unit_s=tu)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class AugmentedState:
    """Position, velocity and mass in nondimensional synodic units."""

    q: np.ndarray
    v: np.ndarray
    m: float = 1.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).copy()
        v = np.asarray(self.v, dtype=float).copy()
        if q.shape != (3,) or v.shape != (3,):
            raise ValueError("q and v must be 3-vectors")
        if self.m <= 0:
            raise ValueError("mass must be positive")
        q.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_vector(cls, y):
        y = np.asarray(y, dtype=float)
        if y.shape == (6,):
            return cls(q=y[:3], v=y[3:6], m=1.0)
        return cls(q=y[:3], v=y[3:6], m=float(y[6]))

    @property
    def vector(self):
        return np.concatenate([self.q, self.v, [self.m]])

    @property
    def pv(self):
        return np.concatenate([self.q, self.v])


@dataclass(frozen=True)
class ControlVector:
    """Throttle in [0, 1] plus in-plane/out-of-plane thrust angles [rad]."""

    throttle: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.throttle <= 1.0:
            raise ValueError(f"throttle must lie in [0, 1], got {self.throttle}")
        if not -math.pi / 2 <= self.beta <= math.pi / 2:
            raise ValueError(f"beta must lie in [-pi/2, pi/2], got {self.beta}")

    @property
    def direction(self):
        cb = math.cos(self.beta)
        return np.array([cb * math.cos(self.alpha), cb * math.sin(self.alpha),
                         math.sin(self.beta)])


COAST = ControlVector()


def _primary_offsets(q, mu):
    u1 = q + np.array([mu, 0.0, 0.0])
    u2 = q - np.array([1.0 - mu, 0.0, 0.0])
    return u1, u2


def _check_distances(q, params):
    u1, u2 = _primary_offsets(np.asarray(q, dtype=float), params.mu)
    r1 = np.linalg.norm(u1)
    r2 = np.linalg.norm(u2)
    if r1 < params.r_floor or r2 < params.r_floor:
        raise PropagationError(STATUS_SINGULAR, 0.0)
    return u1, u2, r1, r2


def effective_potential(q, params):
    """U(r1, r2) with the centrifugal term applied to all three coordinates."""
    _, _, r1, r2 = _check_distances(q, params)
    mu = params.mu
    return (-0.5 * ((1 - mu) * r1 ** 2 + mu * r2 ** 2)
            - (1 - mu) / r1 - mu / r2)


def potential_gradient(q, params):
    u1, u2, r1, r2 = _check_distances(q, params)
    mu = params.mu
    return -np.asarray(q, dtype=float) + (1 - mu) * u1 / r1 ** 3 + mu * u2 / r2 ** 3


def jacobi(state, params):
    """Jacobi integral C = -|v|^2 - 2U of an AugmentedState or 6/7-vector."""
    if isinstance(state, AugmentedState):
        q, v = state.q, state.v
    else:
        y = np.asarray(state, dtype=float)
        q, v = y[:3], y[3:6]
    return -float(v @ v) - 2.0 * effective_potential(q, params)


def jacobi_gradient(state, params):
    """d C / d (q, v) as a 6-vector."""
    if isinstance(state, AugmentedState):
        q, v = state.q, state.v
    else:
        y = np.asarray(state, dtype=float)
        q, v = y[:3], y[3:6]
    return np.concatenate([-2.0 * potential_gradient(q, params), -2.0 * v])


def vector_field(state, control, params):
    """Time derivative of the 7-component augmented state."""
    if not isinstance(state, AugmentedState):
        state = AugmentedState.from_vector(state)
    out = np.empty(7)
    d = control.direction
    st = kernels.rhs(state.vector, float(control.throttle), d[0], d[1], d[2],
                     params.mu, params.tmax_nd, params.vexh_nd, params.r_floor, out)
    check_status(st, 0.0)
    return out


def symplectic_form():
    """Conserved bilinear form of the position-velocity flow map.

    Rotating-frame velocities relate to canonical momenta by p = v + K q
    with K = [[0,-1,0],[1,0,0],[0,0,0]]; the canonical form pulled back to
    (q, v) coordinates is [[K - K^T, I], [-I, 0]], and coast-arc transition
    matrices satisfy Phi^T S Phi = S for this S.
    """
    k = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    s = np.zeros((6, 6))
    s[:3, :3] = k - k.T
    s[:3, 3:] = np.eye(3)
    s[3:, :3] = -np.eye(3)
    return s


def amatrix(q, params):
    """6x6 Jacobian of the natural position-velocity dynamics at ``q``."""
    u1, u2, r1, r2 = _check_distances(q, params)
    mu = params.mu
    eye = np.eye(3)
    gq = (eye
          - (1 - mu) * (eye / r1 ** 3 - 3.0 * np.outer(u1, u1) / r1 ** 5)
          - mu * (eye / r2 ** 3 - 3.0 * np.outer(u2, u2) / r2 ** 5))
    a = np.zeros((6, 6))
    a[:3, 3:] = eye
    a[3:, :3] = gq
    a[3, 4] = 2.0
    a[4, 3] = -2.0
    return a


def _schedule_arrays(controls, span):
    """Normalize a control schedule into signed-duration kernel arrays.

    ``controls`` may be None (coast), one ControlVector, or a sequence of
    (duration, ControlVector) tiles whose magnitudes must add up to |span|.
    """
    if controls is None or isinstance(controls, ControlVector):
        cv = controls if isinstance(controls, ControlVector) else COAST
        tiles = [(abs(span), cv)]
    else:
        tiles = [(abs(d), c) for d, c in controls]
        total = sum(d for d, _ in tiles)
        if abs(total - abs(span)) > 1e-9 * max(1.0, abs(span)):
            raise ValueError(
                f"control tiles cover {total:.12g} TU but the arc spans {abs(span):.12g} TU")
    sgn = 1.0 if span >= 0 else -1.0
    durs = np.array([sgn * d for d, _ in tiles])
    thrs = np.array([c.throttle for _, c in tiles])
    dirs = np.array([c.direction for _, c in tiles])
    return durs, thrs, dirs[:, 0].copy(), dirs[:, 1].copy(), dirs[:, 2].copy()


class Trajectory:
    """Dense propagation result.

    Stores the accepted integration nodes and interpolates between them with
    cubic Hermite polynomials (states and derivatives at both ends). Node
    values are exact to integrator tolerance; interpolated values are
    approximate and meant for plotting, bracketing and sampling.
    """

    def __init__(self, ts, ys, params, t0, t1, stm=None):
        self.ts = ts
        self.ys = ys
        self.params = params
        self.t0 = t0
        self.t1 = t1
        self.stm = stm
        self._fs = None

    @property
    def times(self):
        return self.ts

    @property
    def states(self):
        return self.ys

    @property
    def final_state(self):
        return AugmentedState.from_vector(self.ys[-1])

    def _derivs(self):
        if self._fs is None:
            fs = np.empty_like(self.ys)
            out = np.empty(7)
            for i in range(self.ys.shape[0]):
                kernels.rhs(self.ys[i], 0.0, 0.0, 0.0, 0.0, self.params.mu,
                            0.0, 1.0, self.params.r_floor, out)
                fs[i] = out
            self._fs = fs
        return self._fs

    def state(self, t):
        """Hermite-interpolated 7-vector at time ``t`` (coast-arc derivatives)."""
        ts = self.ts
        sgn = 1.0 if self.t1 >= self.t0 else -1.0
        tq = sgn * t
        tt = sgn * ts
        i = int(np.searchsorted(tt, tq)) - 1
        i = min(max(i, 0), len(ts) - 2)
        h = ts[i + 1] - ts[i]
        if h == 0:
            return self.ys[i].copy()
        s = (t - ts[i]) / h
        fs = self._derivs()
        y0, y1 = self.ys[i], self.ys[i + 1]
        f0, f1 = fs[i], fs[i + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1

    def jacobi_series(self):
        return np.array([jacobi(y, self.params) for y in self.ys])


def propagate(state, t0, t1, params, controls=None, rel_tol=DEFAULT_REL_TOL,
              abs_tol=DEFAULT_ABS_TOL, max_step=DEFAULT_MAX_STEP, with_stm=False,
              dense=False):
    """Propagate an augmented state from ``t0`` to ``t1`` (backward allowed).

    ``controls`` is a piecewise-constant schedule tiling the arc (see
    ``_schedule_arrays``). Returns the final ``AugmentedState``; with
    ``dense=True`` a :class:`Trajectory`; ``with_stm=True`` attaches the 6x6
    state-transition matrix of the position-velocity subspace.
    """
    if not isinstance(state, AugmentedState):
        state = AugmentedState.from_vector(state)
    span = t1 - t0
    durs, thrs, uxs, uys, uzs = _schedule_arrays(controls, span)
    mu, tm, ve, rf = params.mu, params.tmax_nd, params.vexh_nd, params.r_floor

    stm = None
    if with_stm:
        y43 = np.concatenate([state.vector, np.eye(6).ravel()])
        yout, st, _ = kernels.prop_stm(y43, t0, durs, thrs, uxs, uys, uzs,
                                       mu, tm, ve, rf, rel_tol, abs_tol, max_step)
        check_status(st, t1)
        stm = yout[7:].reshape(6, 6).copy()
        if not dense:
            final = AugmentedState.from_vector(yout[:7])
            return final, stm

    if dense:
        ts_parts = []
        ys_parts = []
        y = state.vector
        t = t0
        h = 0.01
        for k in range(len(durs)):
            d = durs[k]
            if d == 0.0:
                continue
            cap = 4096
            while True:
                ts_buf = np.empty(cap)
                ys_buf = np.empty((cap, 7))
                cnt, h, st = kernels.prop_nodes(y, t, t + d, h, thrs[k], uxs[k],
                                                uys[k], uzs[k], mu, tm, ve, rf,
                                                rel_tol, abs_tol, max_step,
                                                ts_buf, ys_buf)
                if st == STATUS_OVERFLOW:
                    # resume from the last recorded node with a bigger buffer
                    ts_parts.append(ts_buf[:cnt - 1])
                    ys_parts.append(ys_buf[:cnt - 1])
                    t = ts_buf[cnt - 1]
                    y = ys_buf[cnt - 1].copy()
                    d = (t0 + np.sum(durs[:k + 1])) - t
                    cap *= 2
                    continue
                check_status(st, t + d)
                ts_parts.append(ts_buf[:cnt])
                ys_parts.append(ys_buf[:cnt])
                t = t + d
                y = ys_buf[cnt - 1].copy()
                break
        ts = np.concatenate(ts_parts) if ts_parts else np.array([t0])
        ys = np.vstack(ys_parts) if ys_parts else state.vector[None, :]
        # drop duplicated segment-boundary nodes
        keep = np.ones(len(ts), dtype=bool)
        keep[1:] = np.abs(np.diff(ts)) > 0
        traj = Trajectory(ts[keep], ys[keep], params, t0, t1, stm=stm)
        return traj

    bounds = np.empty((len(durs) + 1, 7))
    tend, st, _ = kernels.prop_schedule(state.vector, t0, durs, thrs, uxs, uys, uzs,
                                        mu, tm, ve, rf, rel_tol, abs_tol, max_step,
                                        bounds)
    check_status(st, tend)
    final = AugmentedState.from_vector(bounds[-1])
    if with_stm:
        return final, stm
    return final


def propagate_sampled(state, t0, t1, params, t_samples, controls=None,
                      rel_tol=DEFAULT_REL_TOL, abs_tol=DEFAULT_ABS_TOL,
                      max_step=DEFAULT_MAX_STEP):
    """States at the requested times, each hit exactly by the integrator.

    ``t_samples`` must be sorted in the direction of travel. Returns an
    (n, 7) array.
    """
    if not isinstance(state, AugmentedState):
        state = AugmentedState.from_vector(state)
    span = t1 - t0
    durs, thrs, uxs, uys, uzs = _schedule_arrays(controls, span)
    mu, tm, ve, rf = params.mu, params.tmax_nd, params.vexh_nd, params.r_floor
    t_samples = np.asarray(t_samples, dtype=float)
    out = np.empty((len(t_samples), 7))
    y = state.vector
    t = t0
    sgn = 1.0 if span >= 0 else -1.0
    for k in range(len(durs)):
        tnext = t + durs[k]
        mask = ((t_samples * sgn) > (t * sgn) - 1e-15) & ((t_samples * sgn) <= (tnext * sgn) + 1e-15)
        tloc = t_samples[mask]
        ybuf = np.empty((len(tloc), 7))
        if durs[k] != 0.0:
            y, st = kernels.prop_sampled(y, t, tnext, thrs[k], uxs[k], uys[k], uzs[k],
                                         mu, tm, ve, rf, rel_tol, abs_tol, max_step,
                                         tloc, ybuf)
            check_status(st, tnext)
        else:
            ybuf[:] = y
        out[mask] = ybuf
        t = tnext
    return out


def libration_points(params, tol=1e-14):
    """The five equilibria as a (5, 3) array ordered L1..L5.

    Collinear points are bracketed roots of the axial potential gradient;
    the triangular points are analytic at (1/2 - mu, +-sqrt(3)/2).
    """
    from scipy.optimize import brentq

    mu = params.mu

    def gx(x):
        d1 = x + mu
        d2 = x - 1.0 + mu
        return x - (1 - mu) * d1 / abs(d1) ** 3 - mu * d2 / abs(d2) ** 3

    eps = 1e-7
    l1 = brentq(gx, -mu + eps, 1 - mu - eps, xtol=tol)
    l2 = brentq(gx, 1 - mu + eps, 2.0, xtol=tol)
    l3 = brentq(gx, -2.0, -mu - eps, xtol=tol)
    s3 = math.sqrt(3.0) / 2.0
    pts = np.array([
        [l1, 0.0, 0.0],
        [l2, 0.0, 0.0],
        [l3, 0.0, 0.0],
        [0.5 - mu, s3, 0.0],
        [0.5 - mu, -s3, 0.0],
    ])
    for p in pts:
        g = potential_gradient(p, params)
        if np.linalg.norm(g) > 1e-12:
            raise RuntimeError(f"equilibrium residual {np.linalg.norm(g):.2e} at {p}")
    return pts
