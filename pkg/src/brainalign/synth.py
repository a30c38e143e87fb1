"""Synthetic multi-subject datasets with a known forward model and known
inter-subject vertex permutations.

Latents ``Y`` are i.i.d. standard normal. A spatially smooth forward map
``A`` (v x m) turns them into clean reference responses ``Y A^T``; every
subject sees the same clean signal with its vertices permuted, plus
independent Gaussian noise in every run (repetition).
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset, RunInfo
from .errors import ArgumentError, ShapeError
from .fugw import TransportPlan
from .geometry import grid_geometry, rotation180
from .preprocess import cosine_drift_basis
from .seeding import rng_for

PERMUTATIONS = ("identity", "rotation180", "random")

LATENT_TYPE = "synthetic"


def _default_subjects():
    return [
        {"id": "sub-01", "permutation": "identity"},
        {"id": "sub-02", "permutation": "rotation180"},
    ]


@dataclass
class SynthSpec:
    width: int = 10
    height: int = 10
    spacing: float = 1.0
    n_train: int = 600
    n_test: int = 500
    train_segments: int = 3
    test_segments: int = 1
    latent_dim: int = 16
    smoothness: float = None  # defaults to 2 * spacing
    snr: float = 1.0
    subjects: list = field(default_factory=_default_subjects)
    repetitions: dict = field(default_factory=lambda: {"train": 2, "test": 10})
    lag: int = 0  # volumes between a stimulus and the response it drives
    drift: float = 0.0  # amplitude of injected low-order cosine drifts
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ArgumentError("grid dimensions must be >= 1")
        if not self.snr > 0:
            raise ArgumentError(f"snr must be positive, got {self.snr}")
        if self.latent_dim < 1:
            raise ArgumentError("latent_dim must be >= 1")
        if self.lag < 0 or self.drift < 0:
            raise ArgumentError("lag and drift must be non-negative")
        if self.train_segments < 1 or self.test_segments < 1:
            raise ArgumentError("need at least one train and one test segment")
        if self.n_train < self.train_segments or self.n_test < self.test_segments:
            raise ArgumentError("every segment needs at least one frame")
        if self.repetitions.get("train", 0) < 1 or self.repetitions.get("test", 0) < 1:
            raise ArgumentError("repetition counts must be >= 1")
        ids = [s["id"] for s in self.subjects]
        if not ids or len(set(ids)) != len(ids):
            raise ArgumentError("subject ids must be non-empty and unique")
        for s in self.subjects:
            if s.get("permutation", "identity") not in PERMUTATIONS:
                raise ArgumentError(f"unknown permutation {s['permutation']!r}")

    @property
    def length_scale(self):
        return 2.0 * self.spacing if self.smoothness is None else self.smoothness

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(eq=False)
class SynthDataset(Dataset):
    """A :class:`Dataset` plus the quantities only a simulator knows."""

    ground_truth_perms: dict = field(default_factory=dict)
    clean: dict = field(default_factory=dict)  # run id -> noise-free reference response
    forward: np.ndarray = None
    spec: SynthSpec = None


def _split_sizes(total, parts):
    base, extra = divmod(total, parts)
    return [base + (1 if k < extra else 0) for k in range(parts)]


def smooth_forward_map(coords, latent_dim, length_scale, rng):
    """Squared-exponential smoothing of white noise over vertex coordinates.

    Rows are scaled so the mean per-vertex signal power is 1.
    """
    sq = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=-1)
    kernel = np.exp(-sq / (2.0 * length_scale**2))
    A = kernel @ rng.standard_normal((coords.shape[0], latent_dim))
    return A / np.sqrt(np.mean(np.sum(A**2, axis=1)))


def generate(spec):
    """Draw a synthetic dataset from ``spec`` (bitwise reproducible per seed)."""
    geom = grid_geometry(spec.width, spec.height, spec.spacing)
    v, m, L = geom.num_vertices, spec.latent_dim, spec.lag
    A = smooth_forward_map(geom.coords, m, spec.length_scale, rng_for(spec.seed, "forward"))
    # expected per-vertex power of Y A^T for standard-normal Y
    noise_std = np.sqrt(np.sum(A**2, axis=1) / spec.snr)

    perms = {}
    for s in spec.subjects:
        kind = s.get("permutation", "identity")
        if kind == "identity":
            perms[s["id"]] = np.arange(v)
        elif kind == "rotation180":
            perms[s["id"]] = rotation180(spec.width, spec.height)
        else:
            perms[s["id"]] = rng_for(spec.seed, "perm", s["id"]).permutation(v)

    runs, groups = [], []
    latents, clean = {}, {}
    features = {s["id"]: {} for s in spec.subjects}
    reps = {"train": spec.repetitions["train"], "test": spec.repetitions["test"]}
    sizes = {"train": _split_sizes(spec.n_train, spec.train_segments),
             "test": _split_sizes(spec.n_test, spec.test_segments)}
    for split in ("train", "test"):
        for k, n in enumerate(sizes[split]):
            seg = f"{split}-seg{k}"
            lat_rng = rng_for(spec.seed, "latents", seg)
            Y = lat_rng.standard_normal((n, m))
            # volumes before the lag respond to stimuli shown before the run started
            driving = np.vstack([lat_rng.standard_normal((L, m)), Y])[:n]
            X_clean = driving @ A.T
            group = []
            for r in range(reps[split]):
                rid = f"{seg}-rep{r}"
                runs.append(RunInfo(rid, split, seg, r))
                group.append(rid)
                latents[rid] = Y
                clean[rid] = X_clean
                for s in spec.subjects:
                    sid = s["id"]
                    pi = perms[sid]
                    noise_rng = rng_for(spec.seed, "noise", sid, rid)
                    X = X_clean[:, pi] + noise_rng.standard_normal((n, v)) * noise_std[pi]
                    if spec.drift > 0 and n > 3:
                        basis = cosine_drift_basis(n, 3)[:, 1:]
                        X = X + spec.drift * basis @ noise_rng.standard_normal((3, v))
                    features[sid][rid] = X
            groups.append(group)

    return SynthDataset(
        runs=runs,
        geometries={s["id"]: geom for s in spec.subjects},
        features=features,
        latents={LATENT_TYPE: latents},
        repetition_groups=groups,
        tr=2.0,
        notes={"synthetic": spec.to_dict(), "grid": [spec.width, spec.height]},
        ground_truth_perms=perms,
        clean=clean,
        forward=A,
        spec=spec,
    )


def oracle_align_quality(plan, truth):
    """Agreement between a plan and a known vertex bijection ``truth`` (i -> truth[i]).

    Returns ``argmax_accuracy`` (rows whose heaviest entry sits on the truth,
    ties toward the lowest index) and ``mass_on_truth``.
    """
    P = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    truth = np.asarray(truth)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ArgumentError(f"oracle quality needs a square plan, got shape {P.shape}")
    if truth.shape != (P.shape[0],) or not np.array_equal(np.sort(truth), np.arange(P.shape[0])):
        raise ShapeError("truth must be a permutation of the plan's row indices")
    rows = np.arange(P.shape[0])
    return {
        "argmax_accuracy": float(np.mean(np.argmax(P, axis=1) == truth)),
        "mass_on_truth": float(P[rows, truth].sum() / P.sum()),
    }
