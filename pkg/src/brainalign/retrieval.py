"""Cosine-similarity retrieval metrics: relative rank, median relative rank
(MR) and top-k accuracy averaged over seeded retrieval sets."""

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ShapeError

TOPK_RULE = "truth is candidate 0 of (truth + negatives); ties favour the truth"


@dataclass(frozen=True)
class RetrievalConfig:
    set_size: int = 499
    num_sets: int = 50
    top_k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.set_size < 1 or self.num_sets < 1 or self.top_k < 1:
            raise ArgumentError("set_size, num_sets and top_k must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class RetrievalReport:
    median_relative_rank: float
    topk_accuracy: float
    k: int
    set_size: int
    num_sets: int
    seed: int
    per_set_values: dict = field(default_factory=dict)
    sem: dict = field(default_factory=dict)
    n_samples: int = 0
    topk_rule: str = TOPK_RULE
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["set", "median_relative_rank", "topk_accuracy"])
            for i, (mr, acc) in enumerate(
                zip(self.per_set_values["median_relative_rank"], self.per_set_values["topk_accuracy"])
            ):
                writer.writerow([i, repr(mr), repr(acc)])


def _unit_rows(M, name):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[None, :]
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms == 0):
        raise ArgumentError(f"{name} contains a zero vector (row {int(np.flatnonzero(norms == 0)[0])})")
    return M / norms[:, None]


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ArgumentError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def relative_rank(pred, truth, negatives):
    """Fraction of ``negatives`` strictly more similar to ``pred`` than ``truth`` is."""
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.ndim != 2 or negatives.shape[0] == 0:
        raise ArgumentError("need a non-empty list of negatives")
    p = _unit_rows(pred, "pred")[0]
    s_true = p @ _unit_rows(truth, "truth")[0]
    s_neg = _unit_rows(negatives, "negatives") @ p
    return float(np.count_nonzero(s_neg > s_true) / negatives.shape[0])


def _match_rows(truths, pool):
    index = {}
    for i, row in enumerate(pool):
        index.setdefault(row.tobytes(), i)
    return np.array([index.get(row.tobytes(), -1) for row in truths], dtype=np.int64)


def set_generator(seed, set_index):
    """Counter-based stream for one retrieval set."""
    return np.random.Generator(np.random.Philox(seed + set_index))


def evaluate_retrieval(preds, truths, pool=None, cfg=None, truth_indices=None):
    """Median relative rank and top-k accuracy over ``cfg.num_sets`` retrieval sets.

    Set ``s`` draws one random ordering of the pool from ``seed + s``; every
    sample uses its first ``set_size`` entries other than its own truth as
    negatives. ``pool`` defaults to ``truths`` (so truth ``t`` sits at pool
    index ``t``); with an explicit pool, ``truth_indices`` locates each truth
    in it (-1 when absent) and is inferred by exact row match when omitted.
    Both metrics are reported as percentages.
    """
    cfg = cfg or RetrievalConfig()
    P = _unit_rows(preds, "preds")
    T = _unit_rows(truths, "truths")
    if P.shape != T.shape:
        raise ShapeError(f"preds {P.shape} and truths {T.shape} differ")
    n = P.shape[0]
    if pool is None:
        pool_raw = np.asarray(truths, dtype=np.float64)
        idx = np.arange(n) if truth_indices is None else np.asarray(truth_indices)
    else:
        pool_raw = np.asarray(pool, dtype=np.float64)
        idx = _match_rows(np.asarray(truths, dtype=np.float64), pool_raw) if truth_indices is None \
            else np.asarray(truth_indices, dtype=np.int64)
    K = _unit_rows(pool_raw, "pool")
    if K.shape[1] != P.shape[1]:
        raise ShapeError("pool and predictions have different latent dimensions")
    N = K.shape[0]
    if idx.shape != (n,):
        raise ShapeError("one truth index per sample is required")
    need = cfg.set_size + (1 if np.any(idx >= 0) else 0)
    if N < need:
        raise ArgumentError(f"pool of {N} rows is too small for retrieval sets of {cfg.set_size} negatives")

    s_pool = P @ K.T
    s_true = np.einsum("ij,ij->i", P, T)
    n_draw = min(N, cfg.set_size + 1)
    rows = np.arange(n)
    mr, acc = [], []
    for s in range(cfg.num_sets):
        cand = set_generator(cfg.seed, s).permutation(N)[:n_draw]
        greater = s_pool[:, cand] > s_true[:, None]
        counts = greater.sum(axis=1)
        if n_draw > cfg.set_size:
            # drop the truth if it was drawn, else the surplus last candidate
            pos = np.full(n, n_draw - 1)
            hit = cand[None, :] == idx[:, None]
            found = hit.any(axis=1)
            pos[found] = np.argmax(hit[found], axis=1)
            counts = counts - greater[rows, pos]
        ranks = counts / cfg.set_size
        mr.append(float(np.median(ranks) * 100.0))
        acc.append(float(np.mean(counts < cfg.top_k) * 100.0))

    def sem(x):
        return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0

    return RetrievalReport(
        median_relative_rank=float(np.mean(mr)),
        topk_accuracy=float(np.mean(acc)),
        k=cfg.top_k,
        set_size=cfg.set_size,
        num_sets=cfg.num_sets,
        seed=cfg.seed,
        per_set_values={"median_relative_rank": mr, "topk_accuracy": acc},
        sem={"median_relative_rank": sem(mr), "topk_accuracy": sem(acc)},
        n_samples=n,
    )
