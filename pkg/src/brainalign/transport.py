"""Move vertex-space data through a fitted plan (barycentric projection)."""

import numpy as np

from .errors import ArgumentError, DegenerateColumnError, ShapeError
from .fugw import TransportPlan


def _plan_parts(plan):
    if isinstance(plan, TransportPlan):
        return plan.plan, plan.marginal_ref
    P = np.asarray(plan, dtype=np.float64)
    return P, P.sum(axis=0)


def dead_vertices(plan):
    """Reference vertices that receive no mass."""
    _, col_mass = _plan_parts(plan)
    return np.flatnonzero(col_mass <= 0)


def apply_plan(plan, X, allow_dead_vertices=False):
    """Transport ``X`` (n x v_out) onto the reference vertices.

    ``out[t, j] = sum_i P[i, j] X[t, i] / sum_i P[i, j]``. Reference vertices
    receiving zero mass raise :class:`DegenerateColumnError`, or come out as
    zero columns when ``allow_dead_vertices`` is set.
    """
    P, col_mass = _plan_parts(plan)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != P.shape[0]:
        raise ShapeError(f"X has shape {X.shape}, plan expects {P.shape[0]} columns")
    dead = np.flatnonzero(col_mass <= 0)
    if dead.size and not allow_dead_vertices:
        raise DegenerateColumnError(dead.tolist())
    denom = np.where(col_mass > 0, col_mass, 1.0)
    out = (X @ P) / denom
    if dead.size:
        out[:, dead] = 0.0
    return out


def transport_colormap(plan, rgb, allow_dead_vertices=False):
    """Transport per-vertex RGB colours (v_out x 3, entries in [0, 1])."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 2 or rgb.shape[1] != 3:
        raise ShapeError(f"colormap must be v x 3, got {rgb.shape}")
    if np.any(rgb < 0) or np.any(rgb > 1):
        raise ArgumentError("colormap entries must lie in [0, 1]")
    out = apply_plan(plan, rgb.T, allow_dead_vertices=allow_dead_vertices).T
    return np.clip(out, 0.0, 1.0)
