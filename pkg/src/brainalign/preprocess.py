"""Run-wise signal cleaning and FIR (lag / window) feature construction."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ArgumentError, LengthError, RankError

AGGREGATIONS = ("average", "stack")

# Columns whose standard deviation falls below this are treated as constant.
_ZERO_STD = 1e-12


@dataclass(frozen=True)
class FirSpec:
    """Temporal framing of brain volumes used to decode one stimulus frame.

    Row ``t`` of the FIR features aggregates volumes ``t + lag`` to
    ``t + lag + window - 1``.
    """

    lag: int = 2
    window: int = 2
    aggregation: str = "average"

    def __post_init__(self):
        if int(self.lag) != self.lag or self.lag < 0:
            raise ArgumentError(f"lag must be a non-negative integer, got {self.lag}")
        if int(self.window) != self.window or self.window < 1:
            raise ArgumentError(f"window must be a positive integer, got {self.window}")
        if self.aggregation not in AGGREGATIONS:
            raise ArgumentError(
                f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}"
            )

    def n_frames(self, n):
        return n - self.lag - self.window + 1

    def to_dict(self):
        return asdict(self)


def cosine_drift_basis(n, order):
    """Constant column followed by ``order`` half-sample-phase cosines."""
    t = np.arange(n)
    k = np.arange(1, order + 1)
    cos = np.cos(np.pi * np.outer(t + 0.5, k) / n)
    return np.hstack([np.ones((n, 1)), cos])


def default_drift_order(n, tr=2.0, high_pass=128.0):
    """Number of cosines below the high-pass cutoff, capped so the fit stays determined."""
    order = math.ceil(2.0 * n * tr / high_pass)
    return int(max(1, min(order, n - 1)))


def detrend_cosine(run, order):
    """Regress slow cosine drifts (and the mean) out of every column of ``run``."""
    run = np.asarray(run, dtype=np.float64)
    if run.ndim != 2:
        raise ArgumentError(f"expected an n x v run, got shape {run.shape}")
    n = run.shape[0]
    if order < 1:
        raise ArgumentError(f"drift order must be >= 1, got {order}")
    if order >= n:
        raise RankError(f"drift order {order} needs more than {order} volumes, run has {n}")
    q, _ = np.linalg.qr(cosine_drift_basis(n, order))
    return run - q @ (q.T @ run)


def standardize(run):
    """Center each column and scale it to unit population standard deviation.

    Constant columns map to zeros.
    """
    run = np.asarray(run, dtype=np.float64)
    if run.ndim != 2 or run.shape[0] < 2:
        raise ArgumentError(f"standardize needs at least 2 rows, got shape {run.shape}")
    centered = run - run.mean(axis=0)
    std = np.sqrt(np.mean(centered**2, axis=0))
    flat = std < _ZERO_STD
    out = centered / np.where(flat, 1.0, std)
    out[:, flat] = 0.0
    return out


def clean_run(run, tr=2.0, high_pass=128.0, detrend=True, scale=True):
    """Detrend then standardize a single run, the way every pipeline stage expects."""
    out = np.asarray(run, dtype=np.float64)
    if detrend:
        out = detrend_cosine(out, default_drift_order(out.shape[0], tr, high_pass))
    if scale:
        out = standardize(out)
    return out


def fir_features(run, spec):
    """Time-lagged, windowed view of ``run``.

    Returns an ``(n - lag - window + 1) x v`` matrix for ``average`` and an
    ``(n - lag - window + 1) x (v * window)`` matrix for ``stack`` (volumes
    concatenated in increasing time order). The caller keeps the first
    ``spec.n_frames(n)`` rows of the matching latents.
    """
    run = np.asarray(run, dtype=np.float64)
    n, v = run.shape
    n_out = spec.n_frames(n)
    if n_out < 1:
        raise LengthError(
            f"run of {n} volumes is too short for lag={spec.lag}, window={spec.window}"
        )
    # windows[t, k] is volume t + lag + k
    windows = np.stack(
        [run[spec.lag + k: spec.lag + k + n_out] for k in range(spec.window)], axis=1
    )
    if spec.aggregation == "average":
        return windows.mean(axis=1)
    return windows.reshape(n_out, v * spec.window)
