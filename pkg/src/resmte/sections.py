"""Poincare surface-of-section machinery: event-located first returns in
either time direction and the background dynamical template.

The section is a coordinate hyperplane (default q2 = 0 crossed with
q2_dot > 0) and points are projected to a coordinate pair (default
(q1, q1_dot)) for plotting and distance queries.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import jacobi, effective_potential

log = logging.getLogger(__name__)


class SectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SurfaceOfSection:
    coord: int = 1
    value: float = 0.0
    direction: int = 1
    proj: tuple = (0, 3)

    def __post_init__(self):
        if self.direction not in (-1, 1):
            raise ValueError("direction must be +1 or -1")
        if self.coord not in (0, 1, 2):
            raise ValueError("section coordinate must be a position index")
        if self.proj[0] == self.proj[1]:
            raise ValueError("projection coordinates must differ")

    def project(self, state6):
        return np.array([state6[self.proj[0]], state6[self.proj[1]]])

    def residual(self, state6):
        return state6[self.coord] - self.value


@dataclass(frozen=True, eq=False)
class SectionPoint:
    state: np.ndarray
    t: float
    proj: np.ndarray
    jacobi: float
    provenance: str

    @classmethod
    def from_state(cls, state6, t, section, params, provenance):
        state6 = np.asarray(state6, dtype=float)[:6].copy()
        return cls(state=state6, t=float(t), proj=section.project(state6),
                   jacobi=jacobi(state6, params), provenance=provenance)


def crossings(state, section, params, time_sign=1, max_time=400.0, n=1,
              rel_tol=1e-12, abs_tol=1e-12, max_step=0.25, arm_tol=1e-6,
              trans_floor=1e-11, provenance="trajectory-forward"):
    """Up to ``n`` transversal section crossings under natural dynamics.

    ``time_sign`` +1 integrates forward, -1 backward; the crossing
    direction test always applies to the physical-time derivative, so a
    forward map followed by the backward map returns to the start.

    Detection arms only once the residual magnitude exceeds ``arm_tol``, so
    a start on (or within ``arm_tol`` of) the hyperplane maps to its next
    return rather than to itself; manifold seeds perturbed off a crossing
    rely on this.
    """
    y = np.asarray(state, dtype=float)
    y7 = np.append(y[:6], 1.0) if y.shape[0] == 6 else y[:7].copy()
    t_end = float(time_sign) * float(max_time)
    tc = np.empty(n)
    yc = np.empty((n, 7))
    found, status = kernels.prop_crossings(
        y7, 0.0, t_end, section.coord, section.value, section.direction, n,
        arm_tol, trans_floor, params.mu, params.r_floor, rel_tol, abs_tol,
        max_step, tc, yc)
    if status != kernels.STATUS_OK and found < n:
        from .dynamics import check_status
        check_status(status, tc[found - 1] if found else 0.0)
    return [SectionPoint.from_state(yc[i, :6], tc[i], section, params, provenance)
            for i in range(found)]


def first_return(state, section, params, time_sign=1, max_time=400.0, **opts):
    """First transversal crossing with the configured direction sign.

    Raises :class:`SectionError` when no crossing occurs within
    ``max_time``.
    """
    provenance = "trajectory-forward" if time_sign > 0 else "trajectory-backward"
    pts = crossings(state, section, params, time_sign=time_sign,
                    max_time=max_time, n=1, provenance=provenance, **opts)
    if not pts:
        raise SectionError(
            f"no section crossing within {max_time} TU ({provenance})")
    return pts[0]


def solve_section_velocity(q1, section, params, jacobi_level, vx=0.0):
    """Positive-root transverse velocity putting a planar section seed on
    the requested energy level; None when the point is energy-forbidden."""
    q = np.array([q1, section.value, 0.0]) if section.coord == 1 else None
    if q is None:
        raise NotImplementedError("background seeding assumes a q2 section")
    u = effective_potential(q, params)
    v2sq = -jacobi_level - 2.0 * u - vx * vx
    if v2sq <= 0.0:
        return None
    return float(np.sqrt(v2sq))


def background_grid(section, params, jacobi_level, n_points=10000, n_returns=10,
                    n_discard=5, axis_range=(0.55, 0.95), vx=0.0, max_time=2000.0,
                    **opts):
    """Iterated section returns of a uniform grid on the section's q1 axis.

    Seeds share the requested Jacobi level (the transverse velocity is
    solved from it, positive root); each surviving seed contributes its
    returns ``n_discard+1 .. n_returns``. Energy-forbidden and
    non-returning seeds are dropped. Returns (points, stats dict).
    """
    qs = np.linspace(axis_range[0], axis_range[1], n_points)
    pts = []
    n_forbidden = 0
    n_lost = 0
    for q1 in qs:
        v2 = solve_section_velocity(q1, section, params, jacobi_level, vx=vx)
        if v2 is None:
            n_forbidden += 1
            continue
        seed = np.array([q1, section.value, 0.0, vx, section.direction * v2, 0.0])
        try:
            got = crossings(seed, section, params, time_sign=1, max_time=max_time,
                            n=n_returns, provenance="background", **opts)
        except Exception:
            got = []
        if len(got) < n_returns:
            n_lost += 1
        pts.extend(got[n_discard:])
    stats = {"seeds": n_points, "forbidden": n_forbidden,
             "incomplete": n_lost, "points": len(pts)}
    log.info("background grid at C=%.6f: %s", jacobi_level, stats)
    return pts, stats


SECTION_CSV_FIELDS = ("provenance", "t", "q1", "q2", "q3", "v1", "v2", "v3",
                      "jacobi", "proj_x", "proj_y")


def write_section_csv(path, points, extra_fields=(), extra_rows=None):
    """Section points to CSV; ``extra_fields``/``extra_rows`` append
    per-point columns (used by the manifold export)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(SECTION_CSV_FIELDS) + list(extra_fields))
        for i, p in enumerate(points):
            row = [p.provenance, repr(float(p.t)),
                   *[repr(float(v)) for v in p.state],
                   repr(float(p.jacobi)),
                   repr(float(p.proj[0])), repr(float(p.proj[1]))]
            if extra_rows is not None:
                row += [repr(float(v)) if isinstance(v, (int, float, np.floating))
                        else str(v) for v in extra_rows[i]]
            w.writerow(row)


def read_section_csv(path, section, params):
    """Re-ingest a section CSV; returns (points, extras dict of columns)."""
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        pts = []
        extras = {k: [] for k in (r.fieldnames or ()) if k not in SECTION_CSV_FIELDS}
        for row in r:
            st = np.array([float(row[k]) for k in ("q1", "q2", "q3", "v1", "v2", "v3")])
            pts.append(SectionPoint(state=st, t=float(row["t"]),
                                    proj=np.array([float(row["proj_x"]),
                                                   float(row["proj_y"])]),
                                    jacobi=float(row["jacobi"]),
                                    provenance=row["provenance"]))
            for k in extras:
                extras[k].append(row[k])
    return pts, extras
