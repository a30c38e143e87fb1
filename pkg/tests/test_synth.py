import numpy as np
import pytest

from brainalign.errors import ArgumentError, ShapeError
from brainalign.fugw import FugwProblem, solve_fugw
from brainalign.preprocess import detrend_cosine
from brainalign.synth import LATENT_TYPE, SynthSpec, generate, oracle_align_quality
from brainalign.transport import apply_plan


def small(**kw):
    base = dict(width=4, height=4, n_train=40, n_test=20, train_segments=2, latent_dim=4)
    base.update(kw)
    return SynthSpec(**base)


def test_bitwise_reproducible_and_seeded():
    a, b = generate(small(seed=3)), generate(small(seed=3))
    for sid in a.features:
        for rid in a.features[sid]:
            assert a.features[sid][rid].tobytes() == b.features[sid][rid].tobytes()
    c = generate(small(seed=4))
    assert not np.array_equal(a.features["sub-01"]["train-seg0-rep0"], c.features["sub-01"]["train-seg0-rep0"])


def test_structure():
    d = generate(small())
    assert [r.id for r in d.runs][:3] == ["train-seg0-rep0", "train-seg0-rep1", "train-seg1-rep0"]
    assert list(d.segments("test")) == ["test-seg0"] and len(d.segments("test")["test-seg0"]) == 10
    assert d.latents[LATENT_TYPE]["train-seg0-rep0"].shape == (20, 4)
    assert d.forward.shape == (16, 4)
    for sid, pi in d.ground_truth_perms.items():
        assert sorted(pi.tolist()) == list(range(16))
    assert d.notes["grid"] == [4, 4]


def test_noise_free_limit():
    d = generate(small(snr=1e9))
    runs = d.features["sub-01"]
    r0, r1 = runs["train-seg0-rep0"], runs["train-seg0-rep1"]
    assert np.linalg.norm(r0 - r1) <= 1e-3 * np.linalg.norm(r0)
    pi = d.ground_truth_perms["sub-02"]
    clean = d.clean["train-seg0-rep0"]
    np.testing.assert_allclose(d.features["sub-02"]["train-seg0-rep0"], clean[:, pi],
                               atol=1e-3 * np.abs(clean).max())


def test_snr_definition():
    d = generate(small(width=8, height=8, n_train=4000, train_segments=1, snr=0.5))
    X = d.features["sub-01"]["train-seg0-rep0"]
    clean = d.clean["train-seg0-rep0"]
    signal = np.sum(d.forward**2, axis=1)
    noise = np.mean((X - clean) ** 2, axis=0)
    assert np.allclose(signal / noise, 0.5, rtol=0.1)


@pytest.mark.parametrize("r", [2, 10])
def test_averaging_repetitions_reduces_noise(r):
    spec = SynthSpec(width=8, height=8, n_train=500, n_test=500, train_segments=1,
                     repetitions={"train": 1, "test": r}, snr=1.0, seed=1)
    d = generate(spec)
    runs = [d.features["sub-01"][rid] for rid in d.segments("test")["test-seg0"]]
    clean = d.clean["test-seg0-rep0"]
    single = np.mean((runs[0] - clean) ** 2)
    avg = np.mean((np.mean(runs, axis=0) - clean) ** 2)
    assert single / avg == pytest.approx(r, rel=0.1)


def test_lag_injection():
    d = generate(small(lag=2))
    Y = d.latents[LATENT_TYPE]["train-seg0-rep0"]
    clean = d.clean["train-seg0-rep0"]
    np.testing.assert_allclose(clean[2:], Y[:-2] @ d.forward.T, atol=1e-12)


def test_drift_is_low_order_cosines():
    plain = generate(small())
    drifted = generate(small(drift=5.0))
    diff = drifted.features["sub-01"]["train-seg0-rep0"] - plain.features["sub-01"]["train-seg0-rep0"]
    assert np.abs(diff).max() > 0.1
    np.testing.assert_allclose(detrend_cosine(diff, 3), 0.0, atol=1e-10)


def test_spec_validation():
    for kw in ({"snr": 0}, {"latent_dim": 0}, {"lag": -1}, {"n_train": 1},
               {"subjects": [{"id": "a"}, {"id": "a"}]},
               {"subjects": [{"id": "a", "permutation": "mirror"}]},
               {"repetitions": {"train": 0, "test": 1}}):
        with pytest.raises(ArgumentError):
            small(**kw)
    assert SynthSpec.from_dict(small().to_dict()) == small()
    assert small(spacing=1.5).length_scale == 3.0


def test_random_permutation_subject():
    d = generate(small(subjects=[{"id": "a", "permutation": "random"}, {"id": "b", "permutation": "identity"}]))
    pi = d.ground_truth_perms["a"]
    assert sorted(pi.tolist()) == list(range(16)) and not np.array_equal(pi, np.arange(16))


def test_oracle_quality_examples():
    pi = np.random.default_rng(0).permutation(10)
    P = np.zeros((10, 10))
    P[np.arange(10), pi] = 0.1
    assert oracle_align_quality(P, pi) == {"argmax_accuracy": 1.0, "mass_on_truth": 1.0}
    q = oracle_align_quality(np.full((10, 10), 0.01), pi)
    assert q["mass_on_truth"] == pytest.approx(0.1)
    assert q["argmax_accuracy"] == np.mean(pi == 0)  # ties resolve to column 0
    with pytest.raises(ArgumentError):
        oracle_align_quality(np.ones((2, 3)), [0, 1])
    with pytest.raises(ShapeError):
        oracle_align_quality(np.ones((2, 2)), [0, 0])


def test_alignment_composes_with_truth():
    spec = SynthSpec(width=5, height=5, n_train=200, n_test=10, train_segments=1, snr=1e6, seed=2,
                     latent_dim=8, repetitions={"train": 1, "test": 1})
    d = generate(spec)
    rid = "train-seg0-rep0"
    X_ref, X_out = d.features["sub-01"][rid], d.features["sub-02"][rid]
    plan = solve_fugw(FugwProblem(X_out, X_ref, d.geometries["sub-02"], d.geometries["sub-01"]))
    pi = d.ground_truth_perms["sub-02"]
    clean_out = d.clean[rid][:, pi]
    back = apply_plan(plan, clean_out)
    # transporting undoes the permutation: out vertex i carries reference vertex pi[i]
    np.testing.assert_allclose(back, d.clean[rid], atol=1e-6 * np.abs(d.clean[rid]).max())
