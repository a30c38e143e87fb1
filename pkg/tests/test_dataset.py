import json

import numpy as np
import pytest

from brainalign.dataset import Dataset, RunInfo, load_dataset
from brainalign.errors import ValidationError
from brainalign.geometry import grid_geometry
from brainalign.synth import SynthSpec, generate


@pytest.fixture(scope="module")
def data():
    return generate(SynthSpec(width=3, height=3, n_train=20, n_test=12, train_segments=2, latent_dim=3,
                              repetitions={"train": 2, "test": 3}))


def test_roundtrip(tmp_path, data):
    path = data.write(tmp_path)
    back = load_dataset(path)
    assert [r.id for r in back.runs] == [r.id for r in data.runs]
    assert back.repetition_groups == data.repetition_groups
    for sid in data.features:
        assert np.array_equal(back.geometries[sid].distances, data.geometries[sid].distances)
        for rid, X in data.features[sid].items():
            assert back.features[sid][rid].tobytes() == X.tobytes()
    for rid, Y in data.latents["synthetic"].items():
        assert np.array_equal(back.latents["synthetic"][rid], Y)
    manifest = json.loads(path.read_text())
    # repetitions of one segment share a single latent file
    assert manifest["latents"]["synthetic"]["train-seg0-rep0"] == manifest["latents"]["synthetic"]["train-seg0-rep1"]
    assert back.notes["grid"] == [3, 3]


def test_manifest_errors(tmp_path, data):
    path = data.write(tmp_path)
    m = json.loads(path.read_text())
    m["subjects"][0]["runs"][0]["n_rows"] = 999
    path.write_text(json.dumps(m))
    with pytest.raises(ValidationError, match="999"):
        load_dataset(path)
    m["subjects"][0]["runs"][0]["features"] = "missing.fmat"
    path.write_text(json.dumps(m))
    with pytest.raises(ValidationError, match="does not exist"):
        load_dataset(path)
    path.write_text("{")
    with pytest.raises(ValidationError):
        load_dataset(path)


def test_repetition_group_lengths_must_match():
    g = grid_geometry(2, 1)
    runs = [RunInfo("a", "train", "s"), RunInfo("b", "train", "s", 1)]
    feats = {"x": {"a": np.zeros((3, 2)), "b": np.zeros((4, 2))}}
    with pytest.raises(ValidationError, match="mismatched"):
        Dataset(runs, {"x": g}, feats, {}, [["a", "b"]])


def test_validation_errors():
    g = grid_geometry(2, 1)
    runs = [RunInfo("a", "train", "s")]
    with pytest.raises(ValidationError):
        Dataset(runs + runs, {"x": g}, {"x": {}}, {})
    with pytest.raises(ValidationError):
        Dataset(runs, {}, {"x": {"a": np.zeros((3, 2))}}, {})
    with pytest.raises(ValidationError):
        Dataset(runs, {"x": g}, {"x": {"a": np.zeros((3, 3))}}, {})
    with pytest.raises(ValidationError):
        Dataset(runs, {"x": g}, {"x": {"zz": np.zeros((3, 2))}}, {})
    with pytest.raises(ValidationError):
        Dataset(runs, {"x": g}, {"x": {"a": np.zeros((3, 2))}}, {"lat": {"a": np.zeros((4, 1))}})
    d = Dataset(runs, {"x": g}, {"x": {"a": np.zeros((3, 2))}}, {})
    with pytest.raises(ValidationError):
        d.run("nope")
