import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brainalign.errors import ArgumentError, ShapeError
from brainalign.retrieval import (
    RetrievalConfig,
    cosine_similarity,
    evaluate_retrieval,
    relative_rank,
    set_generator,
)


def unit(v):
    return np.asarray(v, float) / np.linalg.norm(v)


def sort_rank(pred, truth, negatives):
    """Position of the truth in a descending sort where ties go to the truth."""
    p = unit(pred)
    scores = [(-(p @ unit(truth)), 0)] + [(-(p @ unit(n)), 1) for n in negatives]
    order = sorted(scores)
    return order.index((-(p @ unit(truth)), 0)) / len(negatives)


def oracle_evaluate(preds, truths, pool, idx, cfg):
    """Explicit per-sample candidate lists, ranked by sorting."""
    mrs, accs = [], []
    for s in range(cfg.num_sets):
        order = set_generator(cfg.seed, s).permutation(len(pool))
        ranks, hits = [], []
        for t in range(len(preds)):
            negs = [k for k in order if k != idx[t]][: cfg.set_size]
            r = sort_rank(preds[t], truths[t], pool[negs])
            ranks.append(r)
            hits.append(r * cfg.set_size < cfg.top_k)
        mrs.append(np.median(ranks) * 100)
        accs.append(np.mean(hits) * 100)
    return np.mean(mrs), np.mean(accs)


def test_cosine_examples():
    assert cosine_similarity([1, 2], [1, 2]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 3]) == 0.0
    assert cosine_similarity([1, 0], [-1, 0]) == -1.0
    with pytest.raises(ArgumentError):
        cosine_similarity([0, 0], [1, 0])


def test_relative_rank_examples():
    # unit vectors at chosen cosines to pred = e0
    def at(c):
        return [c, np.sqrt(1 - c * c)]

    assert relative_rank([1, 0], at(0.9), [at(0.95), at(0.5), at(0.3)]) == pytest.approx(1 / 3)
    assert relative_rank([1, 0], at(0.99), [at(0.95), at(0.5)]) == 0.0
    # ties favour the truth
    assert relative_rank([1, 0], [1, 1], [[2, 2]]) == 0.0
    with pytest.raises(ArgumentError):
        relative_rank([1, 0], [1, 0], np.zeros((0, 2)))
    with pytest.raises(ArgumentError):
        relative_rank([1, 0], [1, 0], [[0, 0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_relative_rank_sort_oracle_and_scale(seed, c):
    rng = np.random.default_rng(seed)
    pred, truth = rng.standard_normal(4), rng.standard_normal(4)
    negs = rng.standard_normal((20, 4))
    r = relative_rank(pred, truth, negs)
    assert r == sort_rank(pred, truth, negs)
    assert relative_rank(c * pred, truth, negs) == r


def test_evaluate_matches_explicit_oracle(rng):
    pool = rng.standard_normal((40, 3))
    truths = pool[:12]
    preds = truths + rng.standard_normal((12, 3))
    cfg = RetrievalConfig(set_size=15, num_sets=6, top_k=3, seed=4)
    rep = evaluate_retrieval(preds, truths, pool, cfg)
    mr, acc = oracle_evaluate(preds, truths, pool, np.arange(12), cfg)
    assert rep.median_relative_rank == pytest.approx(mr, abs=1e-12)
    assert rep.topk_accuracy == pytest.approx(acc, abs=1e-12)
    assert len(rep.per_set_values["median_relative_rank"]) == 6


def test_truth_outside_pool(rng):
    pool = rng.standard_normal((20, 3))
    truths = rng.standard_normal((5, 3))
    preds = rng.standard_normal((5, 3))
    cfg = RetrievalConfig(set_size=10, num_sets=4)
    rep = evaluate_retrieval(preds, truths, pool, cfg)
    mr, acc = oracle_evaluate(preds, truths, pool, [-1] * 5, cfg)
    assert rep.median_relative_rank == pytest.approx(mr, abs=1e-12)
    assert rep.topk_accuracy == pytest.approx(acc, abs=1e-12)


def test_hand_enumerated_n3():
    # pool rows: the three truths; predictions chosen so similarities are easy to list
    truths = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    preds = np.array([[1.0, 0.1], [1.0, 0.0], [0.0, -1.0]])
    cfg = RetrievalConfig(set_size=2, num_sets=1, top_k=1)
    rep = evaluate_retrieval(preds, truths, None, cfg)
    # sample 0: truth is closest -> 0; sample 1: truth(0,1) has sim 0, negatives 1 and -1 -> 1/2
    # sample 2: truth(-1,0) has sim 0, negatives (1,0) sim 0 and (0,1) sim -1 -> 0
    assert rep.median_relative_rank == 0.0
    assert rep.topk_accuracy == pytest.approx(200 / 3)
    assert rep.per_set_values["median_relative_rank"] == [0.0]


def test_perfect_decoder(rng):
    Y = rng.standard_normal((60, 4))
    rep = evaluate_retrieval(Y, Y, None, RetrievalConfig(set_size=49, num_sets=5))
    assert rep.median_relative_rank == 0.0 and rep.topk_accuracy == 100.0
    assert rep.sem == {"median_relative_rank": 0.0, "topk_accuracy": 0.0}


def test_topk_non_decreasing_in_k(rng):
    Y = rng.standard_normal((50, 4))
    P = Y + 2 * rng.standard_normal((50, 4))
    accs = [evaluate_retrieval(P, Y, None, RetrievalConfig(set_size=30, num_sets=5, top_k=k)).topk_accuracy
            for k in range(1, 10)]
    assert accs == sorted(accs)


def test_determinism_and_seed(rng):
    Y = rng.standard_normal((50, 4))
    P = rng.standard_normal((50, 4))
    cfg = RetrievalConfig(set_size=30, num_sets=5, seed=3)
    a, b = evaluate_retrieval(P, Y, None, cfg), evaluate_retrieval(P, Y, None, cfg)
    assert a.to_dict() == b.to_dict()
    other = evaluate_retrieval(P, Y, None, RetrievalConfig(set_size=30, num_sets=5, seed=4))
    assert other.per_set_values != a.per_set_values


def test_errors(rng):
    Y = rng.standard_normal((10, 3))
    with pytest.raises(ArgumentError):
        evaluate_retrieval(Y, Y, None, RetrievalConfig(set_size=10))
    with pytest.raises(ShapeError):
        evaluate_retrieval(Y[:5], Y, None, RetrievalConfig(set_size=4))
    with pytest.raises(ShapeError):
        evaluate_retrieval(Y, Y, rng.standard_normal((20, 2)), RetrievalConfig(set_size=4))
    with pytest.raises(ArgumentError):
        RetrievalConfig(set_size=0)


def test_report_files(tmp_path, rng):
    Y = rng.standard_normal((20, 3))
    rep = evaluate_retrieval(Y + rng.standard_normal((20, 3)), Y, None, RetrievalConfig(set_size=10, num_sets=3))
    rep.write_json(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["num_sets"] == 3
    rep.write_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["set", "median_relative_rank", "topk_accuracy"] and len(rows) == 4
    assert float(rows[1][1]) == rep.per_set_values["median_relative_rank"][0]
