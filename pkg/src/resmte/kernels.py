"""Hot numeric kernels: adaptive Runge-Kutta 7(8) propagation of the
controlled rotating-frame three-body vector field.

State layout is ``y = (q1, q2, q3, v1, v2, v3, m)``; variational kernels
append a row-major 6x6 state-transition block on the position-velocity
subspace (43 components total). Thrust is a constant unit direction
``(ux, uy, uz)`` in the rotating frame scaled by ``tmax * throttle / m``,
with mass flow ``-tmax * throttle / vexh``.

The effective potential applies the centrifugal term radially in all three
coordinates, i.e. U = -((1-mu) r1^2 + mu r2^2)/2 - (1-mu)/r1 - mu/r2, so the
out-of-plane equation carries a ``+q3`` term and C = -|v|^2 - 2U is conserved
on coast arcs for arbitrary 3D states. Planar motion matches the classical
formulation.

Every kernel is JIT-compiled unless disabled via RESMTE_NO_NUMBA (see
:mod:`resmte._accel`); the identical source runs interpreted in that case.
"""

import numpy as np

from ._accel import maybe_njit

STATUS_OK = 0
STATUS_SINGULAR = 1
STATUS_UNDERFLOW = 2
STATUS_NONFINITE = 3
STATUS_MAXSTEPS = 4
STATUS_OVERFLOW = 5

_MAX_STEPS = 50_000_000

# Fehlberg 7(8) tableau; the 8th-order weights advance the solution and the
# embedded 7th-order pair supplies the error estimate
# err = h * 41/840 * (k0 + k10 - k11 - k12).
_RK_A = np.zeros((13, 12))
_RK_A[1, 0] = 2.0 / 27.0
_RK_A[2, :2] = (1.0 / 36.0, 1.0 / 12.0)
_RK_A[3, :3] = (1.0 / 24.0, 0.0, 1.0 / 8.0)
_RK_A[4, :4] = (5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0)
_RK_A[5, :5] = (1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0)
_RK_A[6, :6] = (-25.0 / 108.0, 0.0, 0.0, 125.0 / 108.0, -65.0 / 27.0, 125.0 / 54.0)
_RK_A[7, :7] = (31.0 / 300.0, 0.0, 0.0, 0.0, 61.0 / 225.0, -2.0 / 9.0, 13.0 / 900.0)
_RK_A[8, :8] = (2.0, 0.0, 0.0, -53.0 / 6.0, 704.0 / 45.0, -107.0 / 9.0, 67.0 / 90.0, 3.0)
_RK_A[9, :9] = (-91.0 / 108.0, 0.0, 0.0, 23.0 / 108.0, -976.0 / 135.0, 311.0 / 54.0,
                -19.0 / 60.0, 17.0 / 6.0, -1.0 / 12.0)
_RK_A[10, :10] = (2383.0 / 4100.0, 0.0, 0.0, -341.0 / 164.0, 4496.0 / 1025.0,
                  -301.0 / 82.0, 2133.0 / 4100.0, 45.0 / 82.0, 45.0 / 164.0, 18.0 / 41.0)
_RK_A[11, :11] = (3.0 / 205.0, 0.0, 0.0, 0.0, 0.0, -6.0 / 41.0, -3.0 / 205.0,
                  -3.0 / 41.0, 3.0 / 41.0, 6.0 / 41.0, 0.0)
_RK_A[12, :12] = (-1777.0 / 4100.0, 0.0, 0.0, -341.0 / 164.0, 4496.0 / 1025.0,
                  -289.0 / 82.0, 2193.0 / 4100.0, 51.0 / 82.0, 33.0 / 164.0,
                  12.0 / 41.0, 0.0, 1.0)

_RK_B8 = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 34.0 / 105.0, 9.0 / 35.0, 9.0 / 35.0,
                   9.0 / 280.0, 9.0 / 280.0, 0.0, 41.0 / 840.0, 41.0 / 840.0])
_RK_ERR = 41.0 / 840.0


@maybe_njit(cache=True, nogil=True)
def rhs(y, thr, ux, uy, uz, mu, tmax, vexh, rfloor, out):
    """Controlled vector field; fills ``out`` (same length as ``y``).

    Returns a status code (0 ok, 1 below the singular-distance floor).
    """
    x = y[0]
    yv = y[1]
    z = y[2]
    vx = y[3]
    vy = y[4]
    vz = y[5]
    m = y[6]
    om = 1.0 - mu
    dx1 = x + mu
    dx2 = x - om
    r1s = dx1 * dx1 + yv * yv + z * z
    r2s = dx2 * dx2 + yv * yv + z * z
    r1 = np.sqrt(r1s)
    r2 = np.sqrt(r2s)
    if r1 < rfloor or r2 < rfloor:
        return STATUS_SINGULAR
    ir13 = 1.0 / (r1s * r1)
    ir23 = 1.0 / (r2s * r2)
    gx = x - om * dx1 * ir13 - mu * dx2 * ir23
    gy = yv - om * yv * ir13 - mu * yv * ir23
    gz = z - om * z * ir13 - mu * z * ir23
    ax = 2.0 * vy + gx
    ay = -2.0 * vx + gy
    az = gz
    if thr != 0.0:
        acc = tmax * thr / m
        ax += acc * ux
        ay += acc * uy
        az += acc * uz
        out[6] = -tmax * thr / vexh
    else:
        out[6] = 0.0
    out[0] = vx
    out[1] = vy
    out[2] = vz
    out[3] = ax
    out[4] = ay
    out[5] = az
    if y.shape[0] > 7:
        # variational block dPhi/dt = A Phi; the thrust acceleration has no
        # position-velocity partials (fixed direction, mass handled outside)
        ir15 = ir13 / r1s
        ir25 = ir23 / r2s
        gxx = 1.0 - om * (ir13 - 3.0 * dx1 * dx1 * ir15) - mu * (ir23 - 3.0 * dx2 * dx2 * ir25)
        gyy = 1.0 - om * (ir13 - 3.0 * yv * yv * ir15) - mu * (ir23 - 3.0 * yv * yv * ir25)
        gzz = 1.0 - om * (ir13 - 3.0 * z * z * ir15) - mu * (ir23 - 3.0 * z * z * ir25)
        gxy = 3.0 * (om * dx1 * yv * ir15 + mu * dx2 * yv * ir25)
        gxz = 3.0 * (om * dx1 * z * ir15 + mu * dx2 * z * ir25)
        gyz = 3.0 * (om * yv * z * ir15 + mu * yv * z * ir25)
        for c in range(6):
            p0 = y[7 + c]
            p1 = y[13 + c]
            p2 = y[19 + c]
            p3 = y[25 + c]
            p4 = y[31 + c]
            p5 = y[37 + c]
            out[7 + c] = p3
            out[13 + c] = p4
            out[19 + c] = p5
            out[25 + c] = gxx * p0 + gxy * p1 + gxz * p2 + 2.0 * p4
            out[31 + c] = gxy * p0 + gyy * p1 + gyz * p2 - 2.0 * p3
            out[37 + c] = gxz * p0 + gyz * p1 + gzz * p2
    return STATUS_OK


@maybe_njit(cache=True, nogil=True)
def _advance(y, t, t1, h, thr, ux, uy, uz, mu, tmax, vexh, rfloor,
             rtol, atol, hmax, K, ytmp, ynew):
    """One accepted step from ``t`` toward ``t1``; updates ``y`` in place.

    Returns ``(t_new, h_next, status)``. ``h`` carries the sign of travel.
    """
    n = y.shape[0]
    dirn = 1.0 if t1 >= t else -1.0
    st = rhs(y, thr, ux, uy, uz, mu, tmax, vexh, rfloor, K[0])
    if st != STATUS_OK:
        return t, h, st
    hmag = abs(h)
    if hmag > hmax:
        hmag = hmax
    rem = abs(t1 - t)
    clamped = False
    if hmag >= rem:
        hmag = rem
        clamped = True
    while True:
        if hmag <= 1e-14 * max(1.0, abs(t)):
            return t, h, STATUS_UNDERFLOW
        hs = dirn * hmag
        failed = False
        for s in range(1, 13):
            for i in range(n):
                acc = 0.0
                for j in range(s):
                    a = _RK_A[s, j]
                    if a != 0.0:
                        acc += a * K[j, i]
                ytmp[i] = y[i] + hs * acc
            st = rhs(ytmp, thr, ux, uy, uz, mu, tmax, vexh, rfloor, K[s])
            if st != STATUS_OK:
                failed = True
                break
        if not failed:
            errnorm = 0.0
            for i in range(n):
                acc = 0.0
                for j in range(13):
                    b = _RK_B8[j]
                    if b != 0.0:
                        acc += b * K[j, i]
                ynew[i] = y[i] + hs * acc
                if not np.isfinite(ynew[i]):
                    failed = True
                    break
                e = hs * _RK_ERR * (K[0, i] + K[10, i] - K[11, i] - K[12, i])
                sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
                q = e / sc
                errnorm += q * q
            if not failed:
                errnorm = np.sqrt(errnorm / n)
                if errnorm <= 1.0:
                    for i in range(n):
                        y[i] = ynew[i]
                    tn = t1 if clamped else t + hs
                    if errnorm == 0.0:
                        fac = 4.0
                    else:
                        fac = 0.9 * errnorm ** (-0.125)
                        if fac > 4.0:
                            fac = 4.0
                        elif fac < 0.1:
                            fac = 0.1
                    hnext = hmag * fac
                    if hnext > hmax:
                        hnext = hmax
                    return tn, dirn * hnext, STATUS_OK
                fac = 0.9 * errnorm ** (-0.125)
                if fac < 0.1:
                    fac = 0.1
                hmag *= fac
                clamped = False
                continue
        # stage failure (singular trial or non-finite): retry smaller
        hmag *= 0.5
        clamped = False


@maybe_njit(cache=True, nogil=True)
def _integrate_plain(y, t0, t1, h0, thr, ux, uy, uz, mu, tmax, vexh, rfloor,
                     rtol, atol, hmax, K, ytmp, ynew):
    """Drive ``y`` from t0 to t1 with no recording. Returns (h_last, status, nsteps)."""
    t = t0
    h = h0
    nsteps = 0
    tiny = 1e-14 * max(1.0, abs(t1 - t0))
    while abs(t1 - t) > tiny:
        t, h, st = _advance(y, t, t1, h, thr, ux, uy, uz, mu, tmax, vexh, rfloor,
                            rtol, atol, hmax, K, ytmp, ynew)
        if st != STATUS_OK:
            return h, st, nsteps
        nsteps += 1
        if nsteps > _MAX_STEPS:
            return h, STATUS_MAXSTEPS, nsteps
    return h, STATUS_OK, nsteps


@maybe_njit(cache=True, nogil=True)
def prop_schedule(y0, t0, durs, thrs, uxs, uys, uzs, mu, tmax, vexh, rfloor,
                  rtol, atol, hmax, bounds_out):
    """Propagate a piecewise-constant control schedule.

    ``durs`` are signed segment durations consumed in order; ``bounds_out``
    has shape (n_seg + 1, 7) and receives the state at every segment
    boundary, ``bounds_out[0]`` being the initial state.

    Returns ``(t_end, status, nsteps)``.
    """
    n_seg = durs.shape[0]
    y = y0.copy()
    K = np.empty((13, 7))
    ytmp = np.empty(7)
    ynew = np.empty(7)
    for i in range(7):
        bounds_out[0, i] = y[i]
    t = t0
    h = 0.01
    total = 0
    for k in range(n_seg):
        d = durs[k]
        if d != 0.0:
            h, st, ns = _integrate_plain(y, t, t + d, h, thrs[k], uxs[k], uys[k], uzs[k],
                                         mu, tmax, vexh, rfloor, rtol, atol, hmax,
                                         K, ytmp, ynew)
            total += ns
            if st != STATUS_OK:
                return t, st, total
        t = t + d
        for i in range(7):
            bounds_out[k + 1, i] = y[i]
    return t, STATUS_OK, total


@maybe_njit(cache=True, nogil=True)
def prop_stm(y0, t0, durs, thrs, uxs, uys, uzs, mu, tmax, vexh, rfloor,
             rtol, atol, hmax):
    """Schedule propagation of the 43-component augmented + variational state.

    ``y0`` has 43 entries (state plus row-major 6x6 transition block).
    Returns ``(y_end, status, nsteps)``.
    """
    y = y0.copy()
    K = np.empty((13, 43))
    ytmp = np.empty(43)
    ynew = np.empty(43)
    t = t0
    h = 0.01
    total = 0
    for k in range(durs.shape[0]):
        d = durs[k]
        if d != 0.0:
            h, st, ns = _integrate_plain(y, t, t + d, h, thrs[k], uxs[k], uys[k], uzs[k],
                                         mu, tmax, vexh, rfloor, rtol, atol, hmax,
                                         K, ytmp, ynew)
            total += ns
            if st != STATUS_OK:
                return y, st, total
        t = t + d
    return y, STATUS_OK, total


@maybe_njit(cache=True, nogil=True)
def prop_nodes(y0, t0, t1, h0, thr, ux, uy, uz, mu, tmax, vexh, rfloor,
               rtol, atol, hmax, ts_out, ys_out):
    """Single-segment propagation recording every accepted node.

    ``ts_out``/(cap,) and ``ys_out``/(cap, 7) receive the nodes including the
    initial one. Returns ``(count, h_last, status)``; STATUS_OVERFLOW means
    the buffers filled and integration stopped at the last recorded node.
    """
    cap = ts_out.shape[0]
    y = y0.copy()
    K = np.empty((13, 7))
    ytmp = np.empty(7)
    ynew = np.empty(7)
    t = t0
    h = h0
    count = 0
    ts_out[count] = t
    for i in range(7):
        ys_out[count, i] = y[i]
    count += 1
    tiny = 1e-14 * max(1.0, abs(t1 - t0))
    nsteps = 0
    while abs(t1 - t) > tiny:
        t, h, st = _advance(y, t, t1, h, thr, ux, uy, uz, mu, tmax, vexh, rfloor,
                            rtol, atol, hmax, K, ytmp, ynew)
        if st != STATUS_OK:
            return count, h, st
        if count >= cap:
            return count, h, STATUS_OVERFLOW
        ts_out[count] = t
        for i in range(7):
            ys_out[count, i] = y[i]
        count += 1
        nsteps += 1
        if nsteps > _MAX_STEPS:
            return count, h, STATUS_MAXSTEPS
    return count, h, STATUS_OK


@maybe_njit(cache=True, nogil=True)
def prop_sampled(y0, t0, t1, thr, ux, uy, uz, mu, tmax, vexh, rfloor,
                 rtol, atol, hmax, t_samp, y_samp):
    """Single-segment propagation landing exactly on each sample time.

    ``t_samp`` must be sorted in the direction of travel and lie inside
    [t0, t1]; states at those times go to ``y_samp`` (len(t_samp), 7).
    Returns ``(y_end, status)``.
    """
    y = y0.copy()
    K = np.empty((13, 7))
    ytmp = np.empty(7)
    ynew = np.empty(7)
    t = t0
    h = 0.01
    dirn = 1.0 if t1 >= t0 else -1.0
    m = t_samp.shape[0]
    idx = 0
    tiny = 1e-14 * max(1.0, abs(t1 - t0))
    # emit samples that coincide with the start
    while idx < m and (t_samp[idx] - t) * dirn <= tiny:
        for i in range(7):
            y_samp[idx, i] = y[i]
        idx += 1
    nsteps = 0
    while abs(t1 - t) > tiny:
        tgt = t1 if idx >= m else t_samp[idx]
        t, h, st = _advance(y, t, tgt, h, thr, ux, uy, uz, mu, tmax, vexh, rfloor,
                            rtol, atol, hmax, K, ytmp, ynew)
        if st != STATUS_OK:
            return y, st
        while idx < m and (t_samp[idx] - t) * dirn <= tiny:
            for i in range(7):
                y_samp[idx, i] = y[i]
            idx += 1
        nsteps += 1
        if nsteps > _MAX_STEPS:
            return y, STATUS_MAXSTEPS
    while idx < m:
        for i in range(7):
            y_samp[idx, i] = y[i]
        idx += 1
    return y, STATUS_OK


@maybe_njit(cache=True, nogil=True)
def prop_crossings(y0, t0, t_end, coord, value, cross_dir, n_want,
                   arm_tol, trans_floor, mu, rfloor, rtol, atol, hmax,
                   tc_out, yc_out):
    """Coast until ``n_want`` transversal crossings of ``y[coord] == value``.

    ``cross_dir`` filters on the physical-time derivative of the residual at
    the crossing (+1, -1, or 0 for either sign). Detection arms only after
    the residual magnitude exceeds ``arm_tol`` so a start exactly on the
    hyperplane yields the next return, not itself. Crossing times are
    Newton-refined by re-integration from the bracketing node until the
    residual falls below 1e-13.

    Returns ``(nfound, status)``; crossing times/states go to ``tc_out`` and
    ``yc_out`` (n_want, 7).
    """
    y = y0.copy()
    yprev = np.empty(7)
    ycand = np.empty(7)
    f = np.empty(7)
    K = np.empty((13, 7))
    ytmp = np.empty(7)
    ynew = np.empty(7)
    t = t0
    h = 0.01
    nfound = 0
    g = y[coord] - value
    armed = abs(g) > arm_tol
    tiny = 1e-14 * max(1.0, abs(t_end - t0))
    nsteps = 0
    while abs(t_end - t) > tiny:
        tprev = t
        for i in range(7):
            yprev[i] = y[i]
        gprev = g
        t, h, st = _advance(y, t, t_end, h, 0.0, 0.0, 0.0, 0.0, mu, 0.0, 1.0, rfloor,
                            rtol, atol, hmax, K, ytmp, ynew)
        if st != STATUS_OK:
            return nfound, st
        nsteps += 1
        if nsteps > _MAX_STEPS:
            return nfound, STATUS_MAXSTEPS
        g = y[coord] - value
        if not armed:
            if abs(g) > arm_tol:
                armed = True
            continue
        if gprev * g > 0.0:
            continue
        # bracketed crossing in (tprev, t]; refine by Newton with bisection
        # safeguard, evaluating the residual via exact re-integration
        tlo = tprev
        thi = t
        glo = gprev
        frac = gprev / (gprev - g)
        tc = tprev + frac * (t - tprev)
        gc = g
        for _ in range(60):
            for i in range(7):
                ycand[i] = yprev[i]
            _h, st2, _ns = _integrate_plain(ycand, tprev, tc, h, 0.0, 0.0, 0.0, 0.0,
                                            mu, 0.0, 1.0, rfloor, rtol, atol, hmax,
                                            K, ytmp, ynew)
            if st2 != STATUS_OK:
                return nfound, st2
            gc = ycand[coord] - value
            if abs(gc) < 1e-13:
                break
            if glo * gc <= 0.0:
                thi = tc
            else:
                tlo = tc
                glo = gc
            st2 = rhs(ycand, 0.0, 0.0, 0.0, 0.0, mu, 0.0, 1.0, rfloor, f)
            if st2 != STATUS_OK:
                return nfound, st2
            dg = f[coord]
            if dg != 0.0:
                tn = tc - gc / dg
            else:
                tn = 0.5 * (tlo + thi)
            if (tn - tlo) * (tn - thi) >= 0.0:
                tn = 0.5 * (tlo + thi)
            if tn == tc:
                break
            tc = tn
        st2 = rhs(ycand, 0.0, 0.0, 0.0, 0.0, mu, 0.0, 1.0, rfloor, f)
        if st2 != STATUS_OK:
            return nfound, st2
        dg = f[coord]
        ok = abs(dg) > trans_floor
        if cross_dir > 0:
            ok = ok and dg > 0.0
        elif cross_dir < 0:
            ok = ok and dg < 0.0
        if ok:
            tc_out[nfound] = tc
            for i in range(7):
                yc_out[nfound, i] = ycand[i]
            nfound += 1
            if nfound >= n_want:
                return nfound, STATUS_OK
    return nfound, STATUS_OK
