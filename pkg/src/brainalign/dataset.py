"""Dataset manifests: subjects, runs, latents and repetition groups.

A manifest is a JSON file whose paths are relative to its own directory::

    {
      "tr": 2.0,
      "runs": [{"id": "train-seg0-rep0", "split": "train",
                "segment": "train-seg0", "repetition": 0}, ...],
      "subjects": [{"id": "sub-01",
                    "geometry": {"distances": "sub-01/D.fmat", "weights": "sub-01/w.fmat"},
                    "runs": [{"id": "train-seg0-rep0", "features": "sub-01/train-seg0-rep0.fmat",
                              "n_rows": 200}, ...]}],
      "latents": {"synthetic": {"train-seg0-rep0": "latents/train-seg0.fmat", ...}},
      "repetition_groups": [["train-seg0-rep0", "train-seg0-rep1"], ...],
      "notes": {...}
    }
"""

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import Geometry
from .matrixio import read_matrix, write_matrix


@dataclass(frozen=True)
class RunInfo:
    id: str
    split: str
    segment: str
    repetition: int = 0


@dataclass(eq=False)
class Dataset:
    """In-memory dataset: features per subject and run, shared latents per run."""

    runs: list
    geometries: dict
    features: dict
    latents: dict
    repetition_groups: list = field(default_factory=list)
    tr: float = 2.0
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def subject_ids(self):
        return list(self.features)

    @property
    def latent_types(self):
        return list(self.latents)

    def run(self, run_id):
        for r in self.runs:
            if r.id == run_id:
                return r
        raise ValidationError(f"unknown run {run_id!r}")

    def segments(self, split):
        """Ordered mapping segment id -> run ids (by repetition) for one split."""
        out = OrderedDict()
        for r in self.runs:
            if r.split == split:
                out.setdefault(r.segment, []).append(r)
        return OrderedDict(
            (seg, [r.id for r in sorted(rs, key=lambda r: r.repetition)]) for seg, rs in out.items()
        )

    def validate(self):
        run_ids = [r.id for r in self.runs]
        if len(set(run_ids)) != len(run_ids):
            raise ValidationError("duplicate run ids")
        for sid, runs in self.features.items():
            if sid not in self.geometries:
                raise ValidationError(f"subject {sid!r} has no geometry")
            v = self.geometries[sid].num_vertices
            for rid, X in runs.items():
                if rid not in run_ids:
                    raise ValidationError(f"subject {sid!r} references unknown run {rid!r}")
                if X.ndim != 2 or X.shape[1] != v:
                    raise ValidationError(f"{sid}/{rid}: expected {v} columns, got shape {X.shape}")
        for ltype, per_run in self.latents.items():
            for rid, Y in per_run.items():
                for sid, runs in self.features.items():
                    if rid in runs and runs[rid].shape[0] != Y.shape[0]:
                        raise ValidationError(
                            f"{sid}/{rid}: {runs[rid].shape[0]} volumes but {Y.shape[0]} latent rows ({ltype})"
                        )
        for group in self.repetition_groups:
            for sid, runs in self.features.items():
                lengths = {runs[rid].shape[0] for rid in group if rid in runs}
                if len(lengths) > 1:
                    raise ValidationError(
                        f"repetition group {group} has mismatched run lengths {sorted(lengths)} for {sid}"
                    )
            ylen = {Y[rid].shape[0] for Y in self.latents.values() for rid in group if rid in Y}
            if len(ylen) > 1:
                raise ValidationError(f"repetition group {group} has mismatched latent lengths")

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def write(self, directory):
        """Write the FMAT tree and ``manifest.json``; returns the manifest path."""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        (root / "latents").mkdir(exist_ok=True)
        subjects = []
        for sid, runs in self.features.items():
            sdir = root / sid
            sdir.mkdir(exist_ok=True)
            self.geometries[sid].save(sdir / "D.fmat", sdir / "w.fmat")
            recs = []
            for rid, X in runs.items():
                write_matrix(X, sdir / f"{rid}.fmat")
                recs.append({"id": rid, "features": f"{sid}/{rid}.fmat", "n_rows": int(X.shape[0])})
            subjects.append(
                {"id": sid, "geometry": {"distances": f"{sid}/D.fmat", "weights": f"{sid}/w.fmat"},
                 "runs": recs}
            )
        latents = {}
        for ltype, per_run in self.latents.items():
            latents[ltype] = {}
            written = {}
            for rid, Y in per_run.items():
                name = f"latents/{ltype}-{self.run(rid).segment}.fmat"
                if name in written and not np.array_equal(written[name], Y):
                    name = f"latents/{ltype}-{rid}.fmat"
                if name not in written:
                    write_matrix(Y, root / name)
                    written[name] = Y
                latents[ltype][rid] = name
        manifest = {
            "tr": self.tr,
            "runs": [asdict(r) for r in self.runs],
            "subjects": subjects,
            "latents": latents,
            "repetition_groups": [list(g) for g in self.repetition_groups],
            "notes": self.notes,
        }
        path = root / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2))
        return path


def load_dataset(manifest_path):
    """Load and validate a manifest and every matrix it references."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    try:
        m = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{manifest_path}: invalid JSON ({exc})") from exc

    def load(rel):
        p = root / rel
        if not p.exists():
            raise ValidationError(f"{manifest_path}: referenced file {rel} does not exist")
        return read_matrix(p, np.float64)

    runs = [RunInfo(r["id"], r.get("split", "train"), r.get("segment", r["id"]), int(r.get("repetition", 0)))
            for r in m["runs"]]
    geometries, features = {}, {}
    cache = {}
    for s in m["subjects"]:
        g = s["geometry"]
        geometries[s["id"]] = Geometry(load(g["distances"]), load(g["weights"]).ravel())
        features[s["id"]] = {}
        for r in s["runs"]:
            X = load(r["features"])
            if "n_rows" in r and X.shape[0] != r["n_rows"]:
                raise ValidationError(f"{r['features']}: manifest says {r['n_rows']} rows, file has {X.shape[0]}")
            features[s["id"]][r["id"]] = X
    latents = {}
    for ltype, per_run in m.get("latents", {}).items():
        latents[ltype] = {}
        for rid, rel in per_run.items():
            if rel not in cache:
                cache[rel] = load(rel)
            latents[ltype][rid] = cache[rel]
    return Dataset(
        runs=runs,
        geometries=geometries,
        features=features,
        latents=latents,
        repetition_groups=[list(g) for g in m.get("repetition_groups", [])],
        tr=float(m.get("tr", 2.0)),
        notes=m.get("notes", {}),
    )
