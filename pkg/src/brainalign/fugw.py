"""Fused unbalanced Gromov-Wasserstein (FUGW) alignment.

The loss of a coupling ``P`` between the vertices of a left-out subject
("out") and a reference subject ("ref") is::

    (1 - alpha) * sum_ij |X_out[:, i] - X_ref[:, j]|^2 P_ij
    + alpha * sum_ijkl (D_out[i, k] - D_ref[j, l])^2 P_ij P_kl
    + rho * (KL(P1 (x) P1 | w_out (x) w_out) + KL(P2 (x) P2 | w_ref (x) w_ref))
    + eps * H(P)

with ``KL(a|b) = sum a log(a/b) - sum a + sum b`` and
``H(P) = sum P (log P - 1)``. It is minimised by block coordinate descent
over two plans ``(P, Q)``: each block linearises the quadratic terms around
the other plan and solves an entropic unbalanced transport problem with
log-domain Sinkhorn iterations.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, NumericalError, ShapeError, ValidationError
from .matrixio import read_matrix, write_matrix

logger = logging.getLogger(__name__)

ENTROPY_CONVENTION = "H(P) = sum P (log P - 1)"


@dataclass(frozen=True)
class FugwConfig:
    alpha: float = 0.5
    rho: float = 1.0
    epsilon: float = 1e-4
    bcd_iters: int = 10
    sinkhorn_iters: int = 1000
    normalize_costs: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.rho > 0:
            raise ValidationError(f"rho must be positive, got {self.rho}")
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.bcd_iters < 1 or self.sinkhorn_iters < 1:
            raise ValidationError("bcd_iters and sinkhorn_iters must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class FugwProblem:
    """Time-locked features of two subjects plus their geometries.

    Features are ``n x v`` (rows are time points, columns are vertices).
    """

    X_out: np.ndarray
    X_ref: np.ndarray
    geom_out: object
    geom_ref: object
    config: FugwConfig = field(default_factory=FugwConfig)

    def __post_init__(self):
        self.X_out = np.asarray(self.X_out, dtype=np.float64)
        self.X_ref = np.asarray(self.X_ref, dtype=np.float64)
        if self.X_out.shape[0] != self.X_ref.shape[0]:
            raise ShapeError(
                f"features must share their time axis: {self.X_out.shape[0]} vs {self.X_ref.shape[0]} rows"
            )
        if self.X_out.shape[1] != self.geom_out.num_vertices:
            raise ShapeError("X_out columns do not match geom_out vertices")
        if self.X_ref.shape[1] != self.geom_ref.num_vertices:
            raise ShapeError("X_ref columns do not match geom_ref vertices")


@dataclass(eq=False)
class TransportPlan:
    """A coupling ``plan`` (v_out x v_ref) with cached marginals and provenance."""

    plan: np.ndarray
    loss_trace: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.plan, dtype=np.float64)
        if p.ndim != 2:
            raise ShapeError(f"plan must be 2-d, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValidationError("plan entries must be finite and non-negative")
        if not p.sum() > 0:
            raise ValidationError("plan carries no mass")
        self.plan = p
        self.marginal_out = p.sum(axis=1)
        self.marginal_ref = p.sum(axis=0)

    @property
    def shape(self):
        return self.plan.shape

    def transposed(self):
        """Plan seen from the reference side (ref -> out)."""
        return TransportPlan(self.plan.T.copy(), self.loss_trace, self.config, {})

    def save(self, path):
        """Write ``path`` (FMAT plan) and ``path.json`` (config, loss trace, diagnostics)."""
        path = Path(path)
        write_matrix(self.plan, path)
        sidecar = {
            "config": self.config,
            "loss_trace": self.loss_trace,
            "diagnostics": self.diagnostics,
            "shape": list(self.plan.shape),
        }
        path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        plan = read_matrix(path, np.float64)
        meta_path = path.with_name(path.name + ".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(plan, meta.get("loss_trace", []), meta.get("config", {}), meta.get("diagnostics", {}))


def _as_plan_array(plan):
    return plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)


# --------------------------------------------------------------------------
# cost terms
# --------------------------------------------------------------------------


def feature_cost(X_out, X_ref):
    """Squared Euclidean distances between the columns of ``X_out`` and ``X_ref``."""
    X_out = np.asarray(X_out, dtype=np.float64)
    X_ref = np.asarray(X_ref, dtype=np.float64)
    if X_out.shape[0] != X_ref.shape[0]:
        raise ShapeError(f"row counts differ: {X_out.shape[0]} vs {X_ref.shape[0]}")
    sq_out = np.einsum("ti,ti->i", X_out, X_out)
    sq_ref = np.einsum("tj,tj->j", X_ref, X_ref)
    cost = sq_out[:, None] + sq_ref[None, :] - 2.0 * (X_out.T @ X_ref)
    return np.maximum(cost, 0.0)


def gromov_cost(D_out, D_ref, Q):
    """Linearised Gromov-Wasserstein cost ``G_ij = sum_kl (D_out[i,k] - D_ref[j,l])^2 Q_kl``.

    Computed in O(v^3) via the square expansion instead of the quadruple loop.
    """
    D_out = np.asarray(D_out, dtype=np.float64)
    D_ref = np.asarray(D_ref, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (D_out.shape[0], D_ref.shape[0]):
        raise ShapeError(f"coupling shape {Q.shape} does not match distances {D_out.shape}, {D_ref.shape}")
    if np.any(Q < 0):
        raise ArgumentError("coupling has negative entries")
    q_row = Q.sum(axis=1)
    q_col = Q.sum(axis=0)
    a = (D_out**2) @ q_row
    b = (D_ref**2) @ q_col
    return a[:, None] + b[None, :] - 2.0 * (D_out @ Q @ D_ref.T)


def _xlogy_sum(a, b):
    """sum_i a_i log(a_i / b_i) with 0 log 0 = 0."""
    pos = a > 0
    if np.any(b[pos] <= 0):
        return np.inf
    return float(np.sum(a[pos] * (np.log(a[pos]) - np.log(b[pos]))))


def kl_divergence(a, b):
    """Generalised KL between non-negative measures: sum a log(a/b) - sum a + sum b."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return _xlogy_sum(a, b) - a.sum() + b.sum()


def kl_kron_square(a, b):
    """KL(a (x) a | b (x) b) without forming the Kronecker products."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    m = a.sum()
    return 2.0 * m * _xlogy_sum(a, b) - m * m + b.sum() ** 2


def entropy(P):
    """H(P) = sum P (log P - 1), with 0 log 0 = 0."""
    P = np.asarray(P, dtype=np.float64)
    pos = P > 0
    return float(np.sum(P[pos] * (np.log(P[pos]) - 1.0)))


def fugw_loss(P, problem, feature_scale=1.0, geometry_scale=1.0):
    """Evaluate every term of the FUGW loss at ``P``.

    ``feature_scale`` and ``geometry_scale`` divide the Wasserstein and
    Gromov-Wasserstein sums respectively (1.0 gives the raw loss).
    """
    P = _as_plan_array(P)
    cfg = problem.config
    n_out, n_ref = problem.geom_out.num_vertices, problem.geom_ref.num_vertices
    if P.shape != (n_out, n_ref):
        raise ShapeError(f"plan shape {P.shape} does not match problem ({n_out}, {n_ref})")
    F = feature_cost(problem.X_out, problem.X_ref)
    G = gromov_cost(problem.geom_out.distances, problem.geom_ref.distances, P)
    w = float(np.sum(F * P)) / feature_scale
    gw = float(np.sum(G * P)) / geometry_scale
    kl = kl_kron_square(P.sum(axis=1), problem.geom_out.weights) + kl_kron_square(
        P.sum(axis=0), problem.geom_ref.weights
    )
    h = entropy(P)
    total = (1.0 - cfg.alpha) * w + cfg.alpha * gw + cfg.rho * kl + cfg.epsilon * h
    return {"wasserstein": w, "gromov": gw, "marginal_kl": kl, "entropy": h, "total": total}


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------


def _log_weights(w):
    w = np.asarray(w, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(w)


def _lse_rows(M):
    mx = M.max(axis=1)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return mx + np.log(np.exp(M - mx[:, None]).sum(axis=1))


def unbalanced_sinkhorn(cost, w_out, w_ref, rho, epsilon, iters, init_duals=None, return_duals=False):
    """Entropic unbalanced OT with KL-penalised marginals, in the log domain.

    Minimises ``<cost, P> + epsilon KL(P | w_out (x) w_ref)
    + rho KL(P1 | w_out) + rho KL(P2 | w_ref)``. The plan is parametrised as
    ``P_ij = w_out_i w_ref_j exp((f_i + g_j - cost_ij) / epsilon)`` and the
    potentials are updated alternately by a soft-min damped by
    ``rho / (rho + epsilon)``. ``rho = inf`` gives balanced Sinkhorn.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if not np.all(np.isfinite(cost)):
        raise ArgumentError("cost matrix has non-finite entries")
    if cost.shape != (len(w_out), len(w_ref)):
        raise ShapeError(f"cost shape {cost.shape} vs weights ({len(w_out)}, {len(w_ref)})")
    if not epsilon > 0:
        raise ArgumentError(f"epsilon must be positive, got {epsilon}")
    if not rho > 0:
        raise ArgumentError(f"rho must be positive, got {rho}")
    tau = 1.0 if np.isinf(rho) else rho / (rho + epsilon)
    log_a = _log_weights(w_out)
    log_b = _log_weights(w_ref)
    kernel = -cost / epsilon
    if init_duals is None:
        f = np.zeros(cost.shape[0])
        g = np.zeros(cost.shape[1])
    else:
        f, g = (np.array(d, dtype=np.float64) for d in init_duals)
    kernel_t = np.ascontiguousarray(kernel.T)
    for it in range(iters):
        f = -tau * epsilon * _lse_rows(kernel + (g / epsilon + log_b)[None, :])
        g = -tau * epsilon * _lse_rows(kernel_t + (f / epsilon + log_a)[None, :])
        if not (np.all(np.isfinite(f[log_a > -np.inf])) and np.all(np.isfinite(g[log_b > -np.inf]))):
            raise NumericalError(f"Sinkhorn potentials became non-finite at iteration {it}")
    log_p = kernel + (f / epsilon + log_a)[:, None] + (g / epsilon + log_b)[None, :]
    plan = np.exp(log_p)
    if not np.all(np.isfinite(plan)):
        raise NumericalError(f"Sinkhorn plan overflowed after {iters} iterations")
    if return_duals:
        return plan, (f, g)
    return plan


def _linearized_cost(other, F_term, D_out, D_ref, w_out, w_ref, cfg, geometry_scale):
    """Cost of one BCD block given the other plan, including the KL offsets."""
    cost = (1.0 - cfg.alpha) * F_term
    if cfg.alpha > 0:
        cost = cost + cfg.alpha * gromov_cost(D_out, D_ref, other) / geometry_scale
    offset = cfg.rho * (
        kl_divergence(other.sum(axis=1), w_out) + kl_divergence(other.sum(axis=0), w_ref)
    ) + cfg.epsilon * kl_divergence(other, np.outer(w_out, w_ref))
    return cost + offset


def cost_scales(problem):
    """Normalising constants (max feature cost, max Gromov cost at the product coupling)."""
    if not problem.config.normalize_costs:
        return 1.0, 1.0
    w_out, w_ref = problem.geom_out.weights, problem.geom_ref.weights
    F = feature_cost(problem.X_out, problem.X_ref)
    G = gromov_cost(problem.geom_out.distances, problem.geom_ref.distances, np.outer(w_out, w_ref))
    fs = float(F.max())
    gs = float(G.max())
    return (fs if fs > 0 else 1.0), (gs if gs > 0 else 1.0)


def solve_fugw(problem, callback=None):
    """Minimise the FUGW loss by block coordinate descent.

    Both blocks start from the product coupling ``w_out (x) w_ref``. Each
    iteration solves for ``P`` with the cost linearised around ``Q`` and then
    for ``Q`` around ``P``; dual potentials are warm-started across
    iterations. Returns the averaged plan ``(P + Q) / 2``.

    ``loss_trace`` holds one entry per iteration (entry 0 is the
    initialisation) with the raw and normalised totals.
    """
    cfg = problem.config
    D_out, D_ref = problem.geom_out.distances, problem.geom_ref.distances
    w_out, w_ref = problem.geom_out.weights, problem.geom_ref.weights
    fs, gs = cost_scales(problem)
    F_term = feature_cost(problem.X_out, problem.X_ref) / fs

    def record(it, plan):
        raw = fugw_loss(plan, problem)
        norm = fugw_loss(plan, problem, fs, gs)
        entry = {"iteration": it, "raw": raw, "normalized": norm, "mass": float(plan.sum())}
        trace.append(entry)
        if callback is not None:
            callback(entry)
        logger.debug("bcd %d: total=%.6g mass=%.4f", it, norm["total"], entry["mass"])

    P = np.outer(w_out, w_ref)
    Q = P.copy()
    duals_p = duals_q = None
    trace = []
    record(0, P)
    for it in range(1, cfg.bcd_iters + 1):
        try:
            mq = Q.sum()
            cost = _linearized_cost(Q, F_term, D_out, D_ref, w_out, w_ref, cfg, gs)
            P, duals_p = unbalanced_sinkhorn(
                cost, w_out, w_ref, cfg.rho * mq, cfg.epsilon * mq, cfg.sinkhorn_iters,
                init_duals=duals_p, return_duals=True,
            )
            P *= np.sqrt(mq / P.sum())

            mp = P.sum()
            cost = _linearized_cost(P, F_term, D_out, D_ref, w_out, w_ref, cfg, gs)
            Q, duals_q = unbalanced_sinkhorn(
                cost, w_out, w_ref, cfg.rho * mp, cfg.epsilon * mp, cfg.sinkhorn_iters,
                init_duals=duals_q, return_duals=True,
            )
            Q *= np.sqrt(mp / Q.sum())
        except NumericalError as exc:
            raise NumericalError(f"BCD iteration {it}: {exc}") from exc
        record(it, 0.5 * (P + Q))

    config = cfg.to_dict()
    config.update(
        feature_scale=fs,
        geometry_scale=gs,
        entropy_convention=ENTROPY_CONVENTION,
        kl_in_solver="per-marginal",
    )
    return TransportPlan(0.5 * (P + Q), trace, config)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def plan_diagnostics(plan, geom_out, geom_ref, require_square=False):
    """Mass, marginal deviations, diagonal mass fraction and mean displacement.

    ``diagonal_mass_fraction`` and ``mean_displacement`` (mass-weighted
    reference-geometry distance between vertex ``i`` and its match ``j``)
    only make sense when both sides share the vertex set; they are ``None``
    for rectangular plans unless ``require_square`` is set, in which case an
    ``ArgumentError`` is raised.
    """
    P = _as_plan_array(plan)
    if P.shape != (geom_out.num_vertices, geom_ref.num_vertices):
        raise ShapeError(f"plan shape {P.shape} does not match geometries")
    mass = float(P.sum())
    out = {
        "mass": mass,
        "marginal_l1_out": float(np.abs(P.sum(axis=1) - geom_out.weights).sum()),
        "marginal_l1_ref": float(np.abs(P.sum(axis=0) - geom_ref.weights).sum()),
        "diagonal_mass_fraction": None,
        "mean_displacement": None,
    }
    if P.shape[0] == P.shape[1]:
        out["diagonal_mass_fraction"] = float(np.trace(P) / mass)
        out["mean_displacement"] = float(np.sum(P * geom_ref.distances) / mass)
    elif require_square:
        raise ArgumentError(f"diagonal mass fraction needs a square plan, got {P.shape}")
    return out
