"""Decoding setups and sweeps: within/out-of-subject, single/multi-subject,
aligned/unaligned, plus data-size sweeps and the FIR grid search."""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr
from threadpoolctl import threadpool_limits

from . import __version__
from .config import RunConfig
from .decoder import fit_ridge, predict
from .errors import ArgumentError, BrainAlignError, LengthError, StageError, ValidationError
from .fugw import FugwProblem, plan_diagnostics, solve_fugw
from .preprocess import FirSpec, clean_run, fir_features
from .retrieval import evaluate_retrieval
from .transport import apply_plan, transport_colormap

logger = logging.getLogger(__name__)

REPETITION_MODES = ("stack_runs", "average_runs")


@dataclass(frozen=True)
class ExperimentSetup:
    """One decoding experiment.

    ``alignment`` is ``None`` (anatomical only) or
    ``{"reference": subject_id, "minutes": float | None}``; every subject
    other than the reference is then transported onto it. ``test_repetitions``
    is the number of test runs averaged per segment (``None`` = all) or
    ``"stack"`` to score every run separately.
    """

    train_subjects: tuple
    test_subject: str
    alignment: dict = None
    train_minutes: float = None
    test_repetitions: object = None
    train_repetition_mode: str = "stack_runs"
    latent_type: str = None
    fir: FirSpec = None

    def __post_init__(self):
        object.__setattr__(self, "train_subjects", tuple(self.train_subjects))
        if not self.train_subjects:
            raise ValidationError("at least one training subject is required")
        if self.alignment is not None:
            ref = self.alignment.get("reference")
            if ref not in self.train_subjects:
                raise ValidationError(f"alignment reference {ref!r} must be a training subject")
            minutes = self.alignment.get("minutes")
            if minutes is not None and not minutes > 0:
                raise ValidationError("alignment minutes must be positive")
        if self.train_minutes is not None and not self.train_minutes > 0:
            raise ValidationError("train_minutes must be positive")
        if self.train_repetition_mode not in REPETITION_MODES:
            raise ValidationError(f"train_repetition_mode must be one of {REPETITION_MODES}")
        tr = self.test_repetitions
        if not (tr is None or tr == "stack" or (isinstance(tr, int) and tr >= 1)):
            raise ValidationError("test_repetitions must be a positive count, None or 'stack'")
        if isinstance(self.fir, dict):
            object.__setattr__(self, "fir", FirSpec(**self.fir))

    @property
    def setup_kind(self):
        within = self.test_subject in self.train_subjects
        return "-".join([
            "within" if within else "out",
            "multi" if len(self.train_subjects) > 1 else "single",
            "aligned" if self.alignment else "unaligned",
        ])

    def to_dict(self):
        d = asdict(self)
        d["train_subjects"] = list(self.train_subjects)
        d["fir"] = self.fir.to_dict() if self.fir is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SweepResult:
    axes: dict
    cells: list
    trend: dict = field(default_factory=dict)
    selected: dict = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def minutes_to_frames(minutes, tr):
    return None if minutes is None else int(round(minutes * 60.0 / tr))


class Workspace:
    """A dataset plus a run config, caching cleaned runs and fitted plans.

    Sweeps reuse one workspace so every alignment is solved once per
    distinct (subject, reference, frames) key.
    """

    def __init__(self, dataset, config=None):
        self.dataset = dataset
        self.config = config or RunConfig()
        self._runs = {}
        self._plans = {}
        self._lock = threading.Lock()

    @property
    def tr(self):
        return self.config.preprocess.tr

    def latent_type(self, setup):
        return setup.latent_type or self.dataset.latent_types[0]

    def cleaned(self, sid, rid, n_frames=None):
        key = (sid, rid, n_frames)
        with self._lock:
            hit = self._runs.get(key)
        if hit is None:
            X = self.dataset.features[sid][rid]
            if n_frames is not None:
                X = X[:n_frames]
            p = self.config.preprocess
            hit = clean_run(X, p.tr, p.high_pass, p.detrend, p.standardize)
            with self._lock:
                self._runs[key] = hit
        return hit

    def _segment_budget(self, split, n_frames):
        """(segment, run ids, frames kept) in order until ``n_frames`` is spent."""
        out = []
        left = n_frames
        for seg, run_ids in self.dataset.segments(split).items():
            length = self.dataset.latents[self.dataset.latent_types[0]][run_ids[0]].shape[0]
            take = length if left is None else min(length, left)
            if take <= 0:
                break
            out.append((seg, run_ids, take))
            if left is not None:
                left -= take
        return out

    def available_frames(self, split="train"):
        return sum(t for _, _, t in self._segment_budget(split, None))

    # ------------------------------------------------------------------
    # alignment
    # ------------------------------------------------------------------

    def alignment_data(self, sid, n_frames=None):
        parts = [
            self.cleaned(sid, run_ids[0], take if take < self._run_length(run_ids[0]) else None)
            for _, run_ids, take in self._segment_budget("train", n_frames)
        ]
        return np.vstack(parts)

    def _run_length(self, rid):
        return self.dataset.latents[self.dataset.latent_types[0]][rid].shape[0]

    def plan(self, sid, reference, minutes=None):
        n_frames = minutes_to_frames(minutes, self.tr)
        available = self.available_frames("train")
        if n_frames is not None and n_frames > available:
            raise ValidationError(
                f"{minutes} minutes of alignment data requested, only {available * self.tr / 60:.2f} available"
            )
        key = (sid, reference, n_frames)
        with self._lock:
            hit = self._plans.get(key)
        if hit is None:
            problem = FugwProblem(
                self.alignment_data(sid, n_frames),
                self.alignment_data(reference, n_frames),
                self.dataset.geometries[sid],
                self.dataset.geometries[reference],
                self.config.fugw,
            )
            hit = solve_fugw(problem)
            hit.diagnostics = plan_diagnostics(hit, problem.geom_out, problem.geom_ref)
            hit.diagnostics["alignment_frames"] = problem.X_out.shape[0]
            with self._lock:
                self._plans[key] = hit
        return hit

    # ------------------------------------------------------------------
    # decoding data
    # ------------------------------------------------------------------

    def training_data(self, sid, setup, fir, plan=None):
        ltype = self.latent_type(setup)
        n_frames = minutes_to_frames(setup.train_minutes, self.tr)
        X_blocks, Y_blocks = [], []
        for _, run_ids, take in self._segment_budget("train", n_frames):
            if take < fir.lag + fir.window:
                continue
            full = take == self._run_length(run_ids[0])
            runs = [self.cleaned(sid, rid, None if full else take) for rid in run_ids]
            if setup.train_repetition_mode == "average_runs":
                runs = [np.mean(runs, axis=0)]
            Y = self.dataset.latents[ltype][run_ids[0]][:take]
            for X in runs:
                if plan is not None:
                    X = apply_plan(plan, X)
                F = fir_features(X, fir)
                X_blocks.append(F)
                Y_blocks.append(Y[: F.shape[0]])
        if not X_blocks:
            raise LengthError(f"no training run of {sid} is long enough for {fir}")
        return np.vstack(X_blocks), np.vstack(Y_blocks)

    def test_data(self, sid, setup, fir, plan=None, split="test"):
        """Features, truths, pool and truth indices for the test split."""
        ltype = self.latent_type(setup)
        X_blocks, Y_blocks, idx_blocks, pool_blocks = [], [], [], []
        offset = 0
        for _, run_ids, _ in self._segment_budget(split, None):
            Y = self.dataset.latents[ltype][run_ids[0]]
            reps = setup.test_repetitions
            if reps == "stack":
                runs = [self.cleaned(sid, rid) for rid in run_ids]
            else:
                k = len(run_ids) if reps is None else reps
                if k > len(run_ids):
                    raise ValidationError(f"{k} test repetitions requested, {len(run_ids)} available")
                runs = [np.mean([self.cleaned(sid, rid) for rid in run_ids[:k]], axis=0)]
            n_out = fir.n_frames(Y.shape[0])
            if n_out < 1:
                raise LengthError(f"test run of {Y.shape[0]} volumes is too short for {fir}")
            for X in runs:
                if plan is not None:
                    X = apply_plan(plan, X)
                X_blocks.append(fir_features(X, fir))
                Y_blocks.append(Y[:n_out])
                idx_blocks.append(offset + np.arange(n_out))
            pool_blocks.append(Y[:n_out])
            offset += n_out
        return np.vstack(X_blocks), np.vstack(Y_blocks), np.vstack(pool_blocks), np.concatenate(idx_blocks)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except BrainAlignError as exc:
        raise StageError(name, exc) from exc


def run_setup(setup, workspace, retrieval=None):
    """Preprocess, optionally align, fit a ridge decoder and score retrieval.

    Returns a :class:`~brainalign.retrieval.RetrievalReport` whose ``meta``
    records the setup, row counts and alignment diagnostics.
    """
    ws = workspace
    cfg = ws.config
    fir = setup.fir or cfg.fir
    retrieval = retrieval or cfg.retrieval
    for sid in set(setup.train_subjects) | {setup.test_subject}:
        if sid not in ws.dataset.features:
            raise ValidationError(f"unknown subject {sid!r}")

    plans = {}
    if setup.alignment is not None:
        ref = setup.alignment["reference"]
        for sid in sorted(set(setup.train_subjects) | {setup.test_subject}):
            if sid != ref:
                plans[sid] = _stage("align", ws.plan, sid, ref, setup.alignment.get("minutes"))

    X_parts, Y_parts = [], []
    for sid in setup.train_subjects:
        X, Y = _stage("features", ws.training_data, sid, setup, fir, plans.get(sid))
        X_parts.append(X)
        Y_parts.append(Y)
    X_train, Y_train = np.vstack(X_parts), np.vstack(Y_parts)
    model = _stage("decode", fit_ridge, X_train, Y_train, cfg.ridge.alpha_ridge, fir,
                   {"subjects": list(setup.train_subjects), "alignment": setup.alignment})

    X_test, Y_test, pool, idx = _stage("features", ws.test_data, setup.test_subject, setup, fir,
                                       plans.get(setup.test_subject))
    preds = _stage("decode", predict, model, X_test)
    report = _stage("evaluate", evaluate_retrieval, preds, Y_test, pool, retrieval, idx)
    report.meta = {
        "setup": setup.to_dict(),
        "kind": setup.setup_kind,
        "fir": fir.to_dict(),
        "n_train_rows": int(X_train.shape[0]),
        "n_test_rows": int(X_test.shape[0]),
        "train_frames": minutes_to_frames(setup.train_minutes, ws.tr),
        "alignment": {sid: p.diagnostics for sid, p in sorted(plans.items())},
    }
    return report


def _summary(report):
    return {
        "median_relative_rank": report.median_relative_rank,
        "topk_accuracy": report.topk_accuracy,
        "sem": report.sem,
        "n_train_rows": report.meta.get("n_train_rows"),
        "n_test_rows": report.meta.get("n_test_rows"),
    }


def _spearman(x, y):
    if len(x) < 2 or np.ptp(x) == 0:
        return float("nan")
    if np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)


def _run_cells(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    # one BLAS thread per worker: nested BLAS pools from several Python
    # threads oversubscribe and can crash the bundled OpenBLAS
    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def provenance(workspace, seeds=None):
    return {
        "config_hash": workspace.config.config_hash(),
        "config": workspace.config.to_dict(),
        "seeds": seeds or {"retrieval": workspace.config.retrieval.seed},
        "code_version": __version__,
    }


def sweep_alignment_data(template, workspace, minutes_grid, threads=1):
    """One ``run_setup`` per amount of alignment data; trend = Spearman(MR, minutes)."""
    minutes_grid = list(minutes_grid)
    if not minutes_grid:
        raise ArgumentError("minutes grid is empty")
    if template.alignment is None:
        raise ArgumentError("alignment sweep needs a functionally aligned template")
    setups = [replace(template, alignment={**template.alignment, "minutes": m}) for m in minutes_grid]
    reports = _run_cells(lambda s: run_setup(s, workspace), setups, threads)
    cells = [
        {"alignment_minutes": m,
         "alignment_frames": minutes_to_frames(m, workspace.tr),
         "setup": s.to_dict(), **_summary(r)}
        for m, s, r in zip(minutes_grid, setups, reports)
    ]
    mrs = [c["median_relative_rank"] for c in cells]
    return SweepResult(
        axes={"alignment_minutes": minutes_grid},
        cells=cells,
        trend={"spearman_mr_vs_minutes": _spearman(minutes_grid, mrs)},
        provenance=provenance(workspace),
    )


def sweep_training_size(template, workspace, size_grid, repetition_mode=None, test_repetitions=None,
                        threads=1):
    """Vary training minutes (x test-side repetition counts) for one repetition mode."""
    size_grid = list(size_grid)
    if not size_grid:
        raise ArgumentError("size grid is empty")
    mode = repetition_mode or template.train_repetition_mode
    test_reps = list(test_repetitions) if test_repetitions is not None else [template.test_repetitions]
    grid = [(size, reps) for reps in test_reps for size in size_grid]
    setups = [
        replace(template, train_minutes=size, train_repetition_mode=mode, test_repetitions=reps)
        for size, reps in grid
    ]
    reports = _run_cells(lambda s: run_setup(s, workspace), setups, threads)
    cells = [
        {"train_minutes": size, "train_frames": minutes_to_frames(size, workspace.tr),
         "test_repetitions": reps, "repetition_mode": mode, "setup": s.to_dict(), **_summary(r)}
        for (size, reps), s, r in zip(grid, setups, reports)
    ]
    trend = {}
    for reps in test_reps:
        row = [c for c in cells if c["test_repetitions"] == reps]
        trend[f"spearman_mr_vs_size[test_repetitions={reps}]"] = _spearman(
            [c["train_minutes"] for c in row], [c["median_relative_rank"] for c in row]
        )
    return SweepResult(
        axes={"train_minutes": size_grid, "test_repetitions": test_reps, "repetition_mode": mode},
        cells=cells,
        trend=trend,
        provenance=provenance(workspace),
    )


def _cv_score(workspace, subject, fir, folds, setup, retrieval):
    ltype = workspace.latent_type(setup)
    segments = workspace.dataset.segments("train")
    scores = []
    for held_out in folds:
        X_parts, Y_parts = [], []
        for seg, run_ids in segments.items():
            if seg == held_out:
                continue
            Y = workspace.dataset.latents[ltype][run_ids[0]]
            for rid in run_ids:
                F = fir_features(workspace.cleaned(subject, rid), fir)
                X_parts.append(F)
                Y_parts.append(Y[: F.shape[0]])
        model = fit_ridge(np.vstack(X_parts), np.vstack(Y_parts),
                          workspace.config.ridge.alpha_ridge, fir)
        run_ids = segments[held_out]
        X = np.mean([workspace.cleaned(subject, rid) for rid in run_ids], axis=0)
        F = fir_features(X, fir)
        truths = workspace.dataset.latents[ltype][run_ids[0]][: F.shape[0]]
        cfg = replace(retrieval, set_size=min(retrieval.set_size, truths.shape[0] - 1))
        scores.append(evaluate_retrieval(predict(model, F), truths, None, cfg).median_relative_rank)
    return float(np.mean(scores))


def gridsearch_fir(workspace, subject, lags, windows, aggregations=("average", "stack"),
                   setup=None, threads=1):
    """Cross-validated MR per (lag, window, aggregation) on training segments only.

    Folds leave one training segment (with all its repetitions) out.
    Retrieval sets shrink to the held-out fold size when it is smaller than
    the configured set size. The argmin is selected with ties broken toward
    the smaller lag, then the smaller window, then the aggregation order given.
    """
    lags, windows, aggregations = list(lags), list(windows), list(aggregations)
    if not (lags and windows and aggregations):
        raise ArgumentError("lag, window and aggregation ranges must be non-empty")
    setup = setup or ExperimentSetup((subject,), subject)
    folds = list(workspace.dataset.segments("train"))
    if len(folds) < 2:
        raise ArgumentError("FIR cross-validation needs at least 2 training segments")
    grid = [(lag, w, agg) for lag in lags for w in windows for agg in aggregations]

    def score(cell):
        lag, w, agg = cell
        try:
            return {"mr": _cv_score(workspace, subject, FirSpec(lag, w, agg), folds, setup,
                                    workspace.config.retrieval), "error": None}
        except BrainAlignError as exc:
            return {"mr": None, "error": f"{type(exc).__name__}: {exc}"}

    results = _run_cells(score, grid, threads)
    cells = [{"lag": lag, "window": w, "aggregation": agg, "median_relative_rank": r["mr"],
              "error": r["error"]} for (lag, w, agg), r in zip(grid, results)]
    valid = [c for c in cells if c["median_relative_rank"] is not None]
    if not valid:
        raise LengthError("every FIR cell failed")
    best = min(valid, key=lambda c: (c["median_relative_rank"], c["lag"], c["window"],
                                     aggregations.index(c["aggregation"])))
    return SweepResult(
        axes={"lag": lags, "window": windows, "aggregation": aggregations},
        cells=cells,
        selected={"lag": best["lag"], "window": best["window"], "aggregation": best["aggregation"],
                  "median_relative_rank": best["median_relative_rank"]},
        provenance=provenance(workspace),
    )


# ----------------------------------------------------------------------
# visual export
# ----------------------------------------------------------------------


def grid_colormap(width, height):
    """Smooth RGB colouring of a lattice: red along x, green along y."""
    ys, xs = np.divmod(np.arange(width * height), width)
    r = xs / max(width - 1, 1)
    g = ys / max(height - 1, 1)
    b = 1.0 - 0.5 * (r + g)
    return np.column_stack([r, g, b])


def write_ppm(path, rgb, width, height, scale=1):
    """Binary P6 raster; vertex ``y * width + x`` is pixel ``(x, y)``."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape != (width * height, 3):
        raise ArgumentError(f"colormap of shape {rgb.shape} does not fit a {width}x{height} grid")
    img = np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8).reshape(height, width, 3)
    if scale > 1:
        img = img.repeat(scale, axis=0).repeat(scale, axis=1)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def export_plan_visual(plan, grid_shape, colormap_out, csv_path, ppm_path, scale=1,
                       allow_dead_vertices=False):
    """Transport a colouring and write it as CSV (vertex, r, g, b) and a PPM image."""
    width, height = grid_shape
    out = transport_colormap(plan, colormap_out, allow_dead_vertices=allow_dead_vertices)
    if out.shape[0] != width * height:
        raise ArgumentError(f"reference has {out.shape[0]} vertices, grid is {width}x{height}")
    with open(csv_path, "w") as fh:
        fh.write("vertex,r,g,b\n")
        for j, (r, g, b) in enumerate(out):
            fh.write(f"{j},{r!r},{g!r},{b!r}\n")
    write_ppm(ppm_path, out, width, height, scale)
    return out

