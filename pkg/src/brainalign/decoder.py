"""Ridge decoders from brain features to stimulus latents."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ArgumentError, ShapeError, SingularityError
from .matrixio import read_matrix, write_matrix
from .preprocess import FirSpec


@dataclass(eq=False)
class DecoderModel:
    weights: np.ndarray  # v' x m
    bias: np.ndarray  # m
    fir: FirSpec = None
    alpha_ridge: float = None
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        if self.weights.ndim != 2 or self.weights.shape[1] != self.bias.shape[0]:
            raise ShapeError(f"weights {self.weights.shape} and bias {self.bias.shape} disagree")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ArgumentError("decoder parameters must be finite")

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_matrix(self.weights, directory / "W.fmat")
        write_matrix(self.bias[None, :], directory / "b.fmat")
        meta = {
            "fir": self.fir.to_dict() if self.fir is not None else None,
            "alpha_ridge": self.alpha_ridge,
            "training_meta": self.training_meta,
        }
        (directory / "decoder.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta = json.loads((directory / "decoder.json").read_text())
        fir = FirSpec(**meta["fir"]) if meta.get("fir") else None
        return cls(
            read_matrix(directory / "W.fmat", np.float64),
            read_matrix(directory / "b.fmat", np.float64).ravel(),
            fir,
            meta.get("alpha_ridge"),
            meta.get("training_meta", {}),
        )


def fit_ridge(X, Y, alpha_ridge, fir=None, training_meta=None):
    """Ridge regression with an unpenalised intercept.

    Centers ``X`` and ``Y``, solves ``(Xc^T Xc + alpha I) W = Xc^T Yc`` with a
    Cholesky factorisation, and sets ``b = mean(Y) - mean(X) W``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ShapeError(f"X {X.shape} and Y {Y.shape} must share their rows")
    if X.shape[0] < 2:
        raise ArgumentError("ridge needs at least 2 samples")
    if alpha_ridge < 0:
        raise ArgumentError(f"alpha_ridge must be non-negative, got {alpha_ridge}")
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    if alpha_ridge == 0 and np.linalg.matrix_rank(Xc) < X.shape[1]:
        raise SingularityError("alpha_ridge = 0 with rank-deficient centered features")
    gram = Xc.T @ Xc
    gram[np.diag_indices_from(gram)] += alpha_ridge
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"normal matrix is not positive definite (alpha_ridge={alpha_ridge})") from exc
    W = scipy.linalg.cho_solve(factor, Xc.T @ (Y - y_mean), check_finite=False)
    b = y_mean - x_mean @ W
    meta = {"n_rows": int(X.shape[0])}
    meta.update(training_meta or {})
    return DecoderModel(W, b, fir, float(alpha_ridge), meta)


def fit_dummy(Y, n_features=0, fir=None):
    """Baseline that always predicts the training mean latent (``W = 0``)."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] < 1:
        raise ArgumentError("dummy decoder needs at least one sample")
    return DecoderModel(np.zeros((n_features, Y.shape[1])), Y.mean(axis=0), fir, None, {"dummy": True})


def predict(model, X):
    """``X W + b``; a dummy model accepts any ``X`` and returns constant rows."""
    X = np.asarray(X, dtype=np.float64)
    if model.training_meta.get("dummy") and model.weights.shape[0] == 0:
        return np.tile(model.bias, (X.shape[0], 1))
    if X.ndim != 2 or X.shape[1] != model.weights.shape[0]:
        raise ShapeError(f"X has shape {X.shape}, model expects {model.weights.shape[0]} columns")
    return X @ model.weights + model.bias
