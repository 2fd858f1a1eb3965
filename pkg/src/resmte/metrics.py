"""Distance metrics between trajectory punctures and manifold puncture sets
on the section plane.

All distances are unweighted Euclidean in the projected section
coordinates. Two families of metrics are provided: the orthogonal distance
to the nearest puncture of a set, and the arc length (from the separatrix,
along the set's ladder ordering) of that nearest puncture. ``hat``
variants minimize over both trajectory punctures and every configured set;
``bar`` variants fix one manifold (the union of its branch sets) and
minimize over the trajectory punctures only.

Nearest-neighbor queries run through a cached k-d tree above a size
threshold and an exhaustive scan below it; both paths break ties toward
the lowest puncture index and are checked for equivalence in the tests.
"""

import weakref
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

_KDTREE_MIN = 64
_tree_cache = weakref.WeakKeyDictionary()


def _tree(pset):
    tree = _tree_cache.get(pset)
    if tree is None:
        tree = cKDTree(pset.proj_array)
        _tree_cache[pset] = tree
    return tree


def _proj_of(x):
    if hasattr(x, "proj"):
        return np.asarray(x.proj, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape == (2,):
        return x
    raise ValueError("query point must be a SectionPoint or a projected pair")


def d_T(x, pset, accel=True):
    """Orthogonal distance from ``x`` to the nearest puncture of ``pset``.

    Returns (distance, index); exact ties resolve to the lowest index.
    """
    p = _proj_of(x)
    pts = pset.proj_array
    n = pts.shape[0]
    if n == 0:
        raise ValueError("empty puncture set")
    if accel and n >= _KDTREE_MIN:
        k = min(4, n)
        dists, idxs = _tree(pset).query(p, k=k)
        dists = np.atleast_1d(dists)
        idxs = np.atleast_1d(idxs)
        if dists[0] == dists[-1] and n > k:
            # degenerate multi-way tie beyond the candidate window
            return _scan(p, pts)
        best = int(idxs[dists == dists[0]].min())
        # re-evaluate with the scan formula so both paths return bit-equal
        # values regardless of the tree's internal arithmetic
        dx = pts[best, 0] - p[0]
        dy = pts[best, 1] - p[1]
        return float(np.sqrt(dx * dx + dy * dy)), best
    return _scan(p, pts)


def _scan(p, pts):
    dx = pts[:, 0] - p[0]
    dy = pts[:, 1] - p[1]
    d = np.sqrt(dx * dx + dy * dy)
    i = int(np.argmin(d))
    return float(d[i]), i


def nearest_over_sets(x, sets, accel=True):
    """Minimum over all sets; ties keep the lowest set index then point index.

    Returns (distance, set_index, point_index).
    """
    if not sets:
        raise ValueError("no puncture sets supplied")
    best = None
    for si, pset in enumerate(sets):
        dist, pi = d_T(x, pset, accel=accel)
        if best is None or dist < best[0]:
            best = (dist, si, pi)
    return best


@dataclass(frozen=True, eq=False)
class MetricQuery:
    """One trajectory puncture pair against the manifold sets of one level."""

    p_forward: object
    p_backward: object
    sets: tuple
    jacobi_tol: float = 1e-6

    def __post_init__(self):
        if not self.sets:
            raise ValueError("at least one manifold set is required")
        cs = [self.p_forward.jacobi, self.p_backward.jacobi] + \
             [s.jacobi for s in self.sets]
        if max(cs) - min(cs) > self.jacobi_tol:
            raise ValueError(
                f"query mixes Jacobi levels (spread {max(cs) - min(cs):.3e} "
                f"> {self.jacobi_tol:.1e})")

    @property
    def punctures(self):
        return (self.p_forward, self.p_backward)


def hat_d_T_point(x, sets, accel=True):
    """Shortest orthogonal distance from one puncture to any set."""
    return nearest_over_sets(x, sets, accel=accel)[0]


def hat_d_A_point(x, sets, accel=True):
    """Arc length of the puncture realizing ``hat_d_T_point`` for ``x``."""
    _, si, pi = nearest_over_sets(x, sets, accel=accel)
    return float(sets[si].arclengths[pi])


def hat_d_T(query, accel=True):
    """Min over both trajectory punctures and every set."""
    return min(hat_d_T_point(x, query.sets, accel=accel) for x in query.punctures)


def hat_d_A(query, accel=True):
    """Min over both punctures of each one's own nearest-set arc length."""
    return min(hat_d_A_point(x, query.sets, accel=accel) for x in query.punctures)


def bar_d_T(w_sets, query, accel=True):
    """Min over the trajectory punctures of the distance to one manifold.

    ``w_sets`` is the sequence of branch sets making up that manifold.
    """
    if isinstance(w_sets, (list, tuple)):
        sets = tuple(w_sets)
    else:
        sets = (w_sets,)
    return min(nearest_over_sets(x, sets, accel=accel)[0] for x in query.punctures)


def bar_d_A(w_sets, query, accel=True):
    """Arc length of the within-manifold nearest puncture, minimized over
    the trajectory punctures."""
    if isinstance(w_sets, (list, tuple)):
        sets = tuple(w_sets)
    else:
        sets = (w_sets,)
    best = None
    for x in query.punctures:
        _, si, pi = nearest_over_sets(x, sets, accel=accel)
        arc = float(sets[si].arclengths[pi])
        if best is None or arc < best:
            best = arc
    return best


def manifold_key(label, stability):
    """Column key for one manifold, e.g. ('3:4', 'unstable') -> 'WU34'."""
    tag = "U" if stability == "unstable" else "S"
    return f"W{tag}{label.replace(':', '')}"


def group_sets(sets):
    """Group branch sets by (resonance_label, stability), insertion-ordered."""
    groups = {}
    for s in sets:
        groups.setdefault((s.resonance_label, s.stability), []).append(s)
    return groups


def metric_bundle(query, accel=True):
    """Every metric of one query as a flat dict.

    Keys: hat_dT, hat_dA, their per-puncture variants (``_forward`` /
    ``_backward``), and barT_<key>/barA_<key> per manifold.
    """
    out = {
        "hat_dT_forward": hat_d_T_point(query.p_forward, query.sets, accel=accel),
        "hat_dT_backward": hat_d_T_point(query.p_backward, query.sets, accel=accel),
        "hat_dA_forward": hat_d_A_point(query.p_forward, query.sets, accel=accel),
        "hat_dA_backward": hat_d_A_point(query.p_backward, query.sets, accel=accel),
    }
    out["hat_dT"] = min(out["hat_dT_forward"], out["hat_dT_backward"])
    out["hat_dA"] = min(out["hat_dA_forward"], out["hat_dA_backward"])
    for (label, stability), group in group_sets(query.sets).items():
        key = manifold_key(label, stability)
        out[f"barT_{key}"] = bar_d_T(group, query, accel=accel)
        out[f"barA_{key}"] = bar_d_A(group, query, accel=accel)
    return out


METRIC_CSV_ORDER = ("hat_dT", "hat_dA",
                    "barT_WU34", "barT_WS34", "barT_WU56", "barT_WS56",
                    "barA_WU34", "barA_WS34", "barA_WU56", "barA_WS56")
