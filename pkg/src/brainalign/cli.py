"""Command-line entry point.

Every command writes its outputs under ``--out`` and a JSON report that
embeds the resolved configuration, its hash and every seed used. Reports
carry no timestamps, so repeating a command with the same inputs and
``--threads 1`` reproduces them byte for byte.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import RunConfig
from .dataset import load_dataset
from .decoder import fit_dummy, fit_ridge, predict
from .errors import NumericalError, StageError, ValidationError
from .experiments import (
    ExperimentSetup,
    Workspace,
    export_plan_visual,
    grid_colormap,
    gridsearch_fir,
    run_setup,
    sweep_alignment_data,
    sweep_training_size,
)
from .fugw import TransportPlan
from .matrixio import read_matrix, write_matrix
from .retrieval import evaluate_retrieval
from .synth import SynthSpec, generate
from .transport import apply_plan

logger = logging.getLogger("brainalign")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------


def _resolved_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(retrieval={"seed": args.seed})
    return cfg


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(args, cfg, name, result, seeds=None):
    report = {
        "command": args.command,
        "code_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seeds": seeds or {"retrieval": cfg.retrieval.seed},
        "result": result,
    }
    path = _out_dir(args) / name
    path.write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


def _test_repetitions(value):
    if value is None or value == "stack":
        return value
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"--test-repetitions must be an integer or 'stack', got {value!r}") from None


def _setup_from_args(args):
    if args.setup:
        try:
            d = json.loads(Path(args.setup).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.setup}: invalid JSON ({exc})") from exc
        return ExperimentSetup.from_dict(d)
    if not args.train_subjects or not args.test_subject:
        raise ValidationError("give --setup or both --train-subjects and --test-subject")
    alignment = None
    if args.reference:
        alignment = {"reference": args.reference, "minutes": args.alignment_minutes}
    return ExperimentSetup(
        train_subjects=tuple(args.train_subjects),
        test_subject=args.test_subject,
        alignment=alignment,
        train_minutes=args.train_minutes,
        test_repetitions=_test_repetitions(args.test_repetitions),
        train_repetition_mode=args.repetition_mode,
        latent_type=args.latent_type,
    )


def _workspace(args, cfg):
    return Workspace(load_dataset(args.manifest), cfg)


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------


def cmd_simulate(args, cfg):
    spec = SynthSpec()
    if args.spec:
        spec = SynthSpec.from_dict(json.loads(Path(args.spec).read_text()))
    overrides = {k: getattr(args, k) for k in ("width", "height", "n_train", "n_test", "snr", "lag", "drift")
                 if getattr(args, k) is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    spec = replace(spec, **overrides)
    data = generate(spec)
    out = _out_dir(args)
    manifest = data.write(out)
    perms = {sid: p.tolist() for sid, p in data.ground_truth_perms.items()}
    (out / "ground_truth.json").write_text(json.dumps(perms, indent=2, sort_keys=True) + "\n")
    write_matrix(data.forward, out / "forward.fmat")
    _write_report(args, cfg, "simulate.json",
                  {"manifest": str(manifest), "spec": spec.to_dict()},
                  seeds={"synthetic": spec.seed, "retrieval": cfg.retrieval.seed})


def cmd_align(args, cfg):
    ws = _workspace(args, cfg)
    for sid in (args.subject, args.reference):
        if sid not in ws.dataset.features:
            raise ValidationError(f"unknown subject {sid!r}")
    plan = ws.plan(args.subject, args.reference, args.minutes)
    out = _out_dir(args)
    plan.save(out / "plan.fmat")
    _write_report(args, cfg, "align.json", {
        "subject": args.subject,
        "reference": args.reference,
        "minutes": args.minutes,
        "plan": "plan.fmat",
        "diagnostics": plan.diagnostics,
        "loss_trace": plan.loss_trace,
    })


def cmd_transport(args, cfg):
    plan = TransportPlan.load(args.plan)
    if args.inverse:
        plan = plan.transposed()
    X = read_matrix(args.features, np.float64)
    Z = apply_plan(plan, X, allow_dead_vertices=args.allow_dead_vertices)
    out = _out_dir(args)
    write_matrix(Z, out / "transported.fmat")
    _write_report(args, cfg, "transport.json", {
        "plan": str(args.plan),
        "inverse": args.inverse,
        "input_shape": list(X.shape),
        "output_shape": list(Z.shape),
        "output": "transported.fmat",
    })


def cmd_decode(args, cfg):
    ws = _workspace(args, cfg)
    setup = ExperimentSetup(tuple(args.train_subjects), args.test_subject or args.train_subjects[0],
                            test_repetitions=_test_repetitions(args.test_repetitions),
                            train_repetition_mode=args.repetition_mode, latent_type=args.latent_type)
    fir = cfg.fir
    parts = [ws.training_data(sid, setup, fir) for sid in setup.train_subjects]
    X_train = np.vstack([p[0] for p in parts])
    Y_train = np.vstack([p[1] for p in parts])
    if args.dummy:
        model = fit_dummy(Y_train, 0, fir)
    else:
        model = fit_ridge(X_train, Y_train, cfg.ridge.alpha_ridge, fir,
                          {"subjects": list(setup.train_subjects)})
    X_test, truths, pool, idx = ws.test_data(setup.test_subject, setup, fir)
    preds = predict(model, X_test)
    out = _out_dir(args)
    model.save(out / "decoder")
    write_matrix(preds, out / "predictions.fmat")
    write_matrix(truths, out / "truths.fmat")
    write_matrix(pool, out / "pool.fmat")
    write_matrix(idx.astype(np.float64), out / "truth_indices.fmat")
    _write_report(args, cfg, "decode.json", {
        "setup": setup.to_dict(),
        "dummy": args.dummy,
        "n_train_rows": int(X_train.shape[0]),
        "n_test_rows": int(X_test.shape[0]),
        "outputs": ["decoder/", "predictions.fmat", "truths.fmat", "pool.fmat", "truth_indices.fmat"],
    })


def cmd_evaluate(args, cfg):
    preds = read_matrix(args.predictions, np.float64)
    truths = read_matrix(args.truths, np.float64)
    pool = read_matrix(args.pool, np.float64) if args.pool else None
    idx = None
    if args.truth_indices:
        idx = read_matrix(args.truth_indices, np.float64).ravel().astype(np.int64)
    report = evaluate_retrieval(preds, truths, pool, cfg.retrieval, idx)
    out = _out_dir(args)
    report.write_csv(out / "retrieval.csv")
    _write_report(args, cfg, "retrieval.json", report.to_dict())


def cmd_run_setup(args, cfg):
    ws = _workspace(args, cfg)
    setup = _setup_from_args(args)
    report = run_setup(setup, ws)
    out = _out_dir(args)
    report.write_csv(out / "report.csv")
    _write_report(args, cfg, "report.json", report.to_dict())


def cmd_sweep(args, cfg):
    ws = _workspace(args, cfg)
    template = _setup_from_args(args)
    if args.axis == "alignment":
        result = sweep_alignment_data(template, ws, args.grid, args.threads)
    else:
        reps = [_test_repetitions(r) for r in args.test_repetitions_grid] if args.test_repetitions_grid else None
        result = sweep_training_size(template, ws, args.grid, args.repetition_mode, reps, args.threads)
    axis_key = "alignment_minutes" if args.axis == "alignment" else "train_minutes"
    _write_rows(
        _out_dir(args) / "sweep.csv",
        [axis_key, "test_repetitions", "median_relative_rank", "topk_accuracy", "n_train_rows"],
        [[c[axis_key], c["setup"]["test_repetitions"], c["median_relative_rank"], c["topk_accuracy"],
          c["n_train_rows"]] for c in result.cells],
    )
    _write_report(args, cfg, "sweep.json", result.to_dict())


def cmd_gridsearch_fir(args, cfg):
    ws = _workspace(args, cfg)
    result = gridsearch_fir(ws, args.subject, args.lags, args.windows, args.aggregations, threads=args.threads)
    _write_rows(
        _out_dir(args) / "gridsearch.csv",
        ["lag", "window", "aggregation", "median_relative_rank", "error"],
        [[c["lag"], c["window"], c["aggregation"], c["median_relative_rank"], c["error"]] for c in result.cells],
    )
    _write_report(args, cfg, "gridsearch.json", result.to_dict())


def cmd_export_visual(args, cfg):
    plan = TransportPlan.load(args.plan)
    if args.grid:
        width, height = args.grid
    elif args.manifest:
        grid = json.loads(Path(args.manifest).read_text()).get("notes", {}).get("grid")
        if not grid:
            raise ValidationError(f"{args.manifest} records no grid shape; pass --grid")
        width, height = grid
    else:
        raise ValidationError("give --grid W H or a synthetic --manifest")
    v_out = plan.shape[0]
    if v_out != width * height:
        raise ValidationError(f"plan has {v_out} source vertices, grid is {width}x{height}")
    out = _out_dir(args)
    export_plan_visual(plan, (width, height), grid_colormap(width, height), out / "visual.csv",
                       out / "visual.ppm", args.scale, args.allow_dead_vertices)
    _write_report(args, cfg, "export-visual.json", {
        "plan": str(args.plan), "grid": [width, height], "scale": args.scale,
        "outputs": ["visual.csv", "visual.ppm"],
    })


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------


def _common(suppress):
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=default, help="root seed (retrieval sets, simulation)")
    p.add_argument("--out", default=argparse.SUPPRESS if suppress else ".", help="output directory")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="worker threads for sweeps and BLAS")
    return p


def _setup_args(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--setup", help="ExperimentSetup as JSON")
    p.add_argument("--train-subjects", nargs="+")
    p.add_argument("--test-subject")
    p.add_argument("--reference", help="functional alignment onto this subject")
    p.add_argument("--alignment-minutes", type=float)
    p.add_argument("--train-minutes", type=float)
    p.add_argument("--test-repetitions", help="count to average, or 'stack'")
    p.add_argument("--repetition-mode", choices=["stack_runs", "average_runs"], default="stack_runs")
    p.add_argument("--latent-type")


def build_parser():
    parser = argparse.ArgumentParser(prog="brainalign", parents=[_common(False)],
                                     description="Functional alignment and decoding experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("simulate", cmd_simulate, "generate a synthetic dataset")
    p.add_argument("--spec", help="SynthSpec as JSON")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--snr", type=float)
    p.add_argument("--lag", type=int)
    p.add_argument("--drift", type=float)

    p = add("align", cmd_align, "solve FUGW between two subjects")
    p.add_argument("--manifest", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--minutes", type=float, help="alignment data budget (default: all)")

    p = add("transport", cmd_transport, "map features through a plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--inverse", action="store_true", help="use the transposed plan (ref -> out)")
    p.add_argument("--allow-dead-vertices", action="store_true")

    p = add("decode", cmd_decode, "fit a decoder and predict the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-subjects", nargs="+", required=True)
    p.add_argument("--test-subject")
    p.add_argument("--test-repetitions")
    p.add_argument("--repetition-mode", choices=["stack_runs", "average_runs"], default="stack_runs")
    p.add_argument("--latent-type")
    p.add_argument("--dummy", action="store_true", help="predict the training mean")

    p = add("evaluate", cmd_evaluate, "retrieval metrics for stored predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truths", required=True)
    p.add_argument("--pool")
    p.add_argument("--truth-indices")

    p = add("run-setup", cmd_run_setup, "run one decoding setup end to end")
    _setup_args(p)

    p = add("sweep", cmd_sweep, "alignment-data or training-size sweep")
    _setup_args(p)
    p.add_argument("--axis", choices=["alignment", "training"], required=True)
    p.add_argument("--grid", type=float, nargs="+", required=True, help="minutes per cell")
    p.add_argument("--test-repetitions-grid", nargs="+")

    p = add("gridsearch-fir", cmd_gridsearch_fir, "cross-validated FIR lag/window search")
    p.add_argument("--manifest", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--lags", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--windows", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--aggregations", nargs="+", default=["average", "stack"],
                   choices=["average", "stack"])

    p = add("export-visual", cmd_export_visual, "transport a grid colouring and write CSV + PPM")
    p.add_argument("--plan", required=True)
    p.add_argument("--grid", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--manifest", help="read the grid shape from a synthetic manifest")
    p.add_argument("--scale", type=int, default=8)
    p.add_argument("--allow-dead-vertices", action="store_true")
    return parser


def _exit_code(exc):
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_VALIDATION


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        cfg = _resolved_config(args)
        with threadpool_limits(limits=args.threads):
            args.func(args, cfg)
    except (ValidationError, StageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
