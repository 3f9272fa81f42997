"""Batch command-line surface: simulate, gridsearch, experiment, tune.

Each command writes its artifacts plus a run manifest recording the command
line, seed, config hash, and content hashes of inputs and outputs. The
manifest is the only artifact allowed to contain wall-clock information;
everything else is byte-reproducible for a fixed seed.

Exit codes: 0 success, 2 usage error, 3 IO failure, 4 partial experiment
failure, 5 tuning failure.
"""

import argparse
from dataclasses import asdict
import hashlib
import json
import os
from pathlib import Path
import sys
import time

import numpy as np

from .core import (GestureSet, PipelineConfig, SEGMENTATION_MODES,
                   load_dataset, save_dataset, validate_config)
from .dsp import stft_grid_search
from .errors import AirwareError, NoSuccessfulTrial, TooFewUsers
from .evaluate import (EvalConfig, MODALITIES, MODEL_FAMILIES, STRATEGIES,
                       evaluate_reduced, inner_cv_score, run_experiment)
from .simulate import simulate_dataset
from .tune import SearchSpace, TpeConfig, tune
from . import report as report_mod

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARTIAL = 4
EXIT_TUNE = 5

CNN_FAMILIES = ("m1", "m2", "m3", "m4")


class DataUnusable(AirwareError):
    """The dataset on disk lacks something this command requires."""


# ---------------------------------------------------------------------------
# run manifests

def _sha256_bytes(blob: bytes) -> str:
    return "sha256:" + hashlib.sha256(blob).hexdigest()


def _sha256_file(path: Path) -> str:
    return _sha256_bytes(Path(path).read_bytes())


def _tree_hash(root: Path) -> str:
    """One hash for a directory: digest of its sorted (path, digest) lines."""
    root = Path(root)
    lines = sorted("%s %s" % (p.relative_to(root).as_posix(), _sha256_file(p))
                   for p in root.rglob("*") if p.is_file())
    return _sha256_bytes("\n".join(lines).encode())


def _config_hash(cfg: PipelineConfig) -> str:
    return _sha256_bytes(json.dumps(asdict(cfg), sort_keys=True).encode())


def write_run_manifest(dest: Path, argv, seed, cfg, inputs, output_files,
                       started: float) -> Path:
    """Record what ran: command, seed, config, and content hashes.

    `dest` is the manifest path itself; output hashes cover `output_files`
    (the manifest never hashes itself). Timings are the one permitted
    non-reproducible field.
    """
    dest = Path(dest)
    outputs = {}
    for p in output_files:
        p = Path(p)
        rel = p.relative_to(dest.parent).as_posix() if dest.parent in p.parents \
            or p.parent == dest.parent else p.as_posix()
        outputs[rel] = _sha256_file(p)
    manifest = {
        "command": list(argv),
        "config_hash": _config_hash(cfg) if cfg is not None else None,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "timings": {"total_s": round(time.time() - started, 3)},
    }
    dest.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return dest


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    started = time.time()
    cfg = validate_config(PipelineConfig(rng_seed=args.seed))
    rng = np.random.default_rng(args.seed)
    ds = simulate_dataset(args.users, args.reps, args.mode, cfg, rng,
                          keep_raw=args.raw)
    out = Path(args.out)
    save_dataset(ds, out)
    written = [p for p in out.rglob("*")
               if p.is_file() and p.name != "run_manifest.json"]
    write_run_manifest(out / "run_manifest.json", args.argv, args.seed, cfg,
                       inputs={}, output_files=written, started=started)
    print("simulated %d records (%d users x %d reps, %s) -> %s"
          % (len(ds.records), args.users, args.reps, args.mode, out))
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    started = time.time()
    ds = load_dataset(args.data)
    if any(r.wave is None for r in ds.records):
        raise DataUnusable(
            "grid search refeaturizes raw waveforms; simulate with --raw")
    cfg = EvalConfig(n_trees=args.trees, jobs=args.jobs)

    def evaluator(featurized):
        rep = run_experiment(featurized, "rf", "loso", "fused", cfg, args.seed)
        if not rep.complete:
            raise RuntimeError("fold failures: %s" % (rep.failures,))
        return rep.overall_mean

    rows = stft_grid_search(ds, evaluator)
    written = report_mod.write_gridsearch_report(rows, args.out)
    write_run_manifest(Path(args.out).with_suffix(".run_manifest.json"),
                       args.argv, args.seed, ds.config,
                       inputs={str(args.data): _tree_hash(args.data)},
                       output_files=written, started=started)
    best = rows[0]
    if best["ok"]:
        print("winner: window=%d overlap=%.2f half_width=%d score=%.4f"
              % (best["window"], best["overlap"], best["half_width"],
                 best["score"]))
    else:
        print("no grid cell succeeded; see %s" % args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    started = time.time()
    ds = load_dataset(args.data)
    cfg = EvalConfig(epochs=args.epochs, n_trees=args.trees, jobs=args.jobs)
    if args.set == GestureSet.FULL.value:
        report = run_experiment(ds, args.model, args.strategy, args.modality,
                                cfg, args.seed)
    else:
        report = evaluate_reduced(ds, args.set, args.model, args.modality,
                                  cfg, args.seed)
    out = Path(args.out)
    written = report_mod.write_experiment_report(report, out)
    write_run_manifest(out / "run_manifest.json", args.argv, args.seed,
                       ds.config,
                       inputs={str(args.data): _tree_hash(args.data)},
                       output_files=written, started=started)
    print("macro TPR %.4f +- %.4f over %d users -> %s"
          % (report.overall_mean, report.std_error, len(report.per_user), out))
    if not report.complete:
        print("WARNING: %d folds failed; report flagged incomplete"
              % len(report.failures))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_tune(args) -> int:
    started = time.time()
    ds = load_dataset(args.data)

    def objective(hp):
        cfg = EvalConfig(hparams=hp, epochs=args.epochs, jobs=args.jobs)
        return inner_cv_score(ds, args.model, "fused", cfg, args.seed)

    rng = np.random.default_rng(args.seed)
    best, history = tune(objective, SearchSpace(), args.budget,
                         TpeConfig(), rng=rng)
    written = report_mod.write_tune_report(history, best, args.out, args.seed)
    write_run_manifest(Path(args.out).with_suffix(".run_manifest.json"),
                       args.argv, args.seed, ds.config,
                       inputs={str(args.data): _tree_hash(args.data)},
                       output_files=written, started=started)
    hp = best.hparams
    print("best score %.4f: l2=%g lr_exponent=%d n_filters=%d kernel_size=%d "
          "dropout_p=%.3f hidden_units=%d initializer=%s"
          % (best.score, hp.l2, hp.lr_exponent, hp.n_filters, hp.kernel_size,
             hp.dropout_p, hp.hidden_units, hp.initializer))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airware",
        description="In-air gesture recognition workbench: synthesize "
                    "datasets, search STFT parameters, run evaluation "
                    "protocols, and tune hyperparameters.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a labeled dataset")
    p.add_argument("--users", type=int, default=13,
                   help="number of simulated users (default 13)")
    p.add_argument("--reps", type=int, default=8,
                   help="repetitions per gesture per user (default 8)")
    p.add_argument("--mode", choices=SEGMENTATION_MODES,
                   default="ir-required", help="segmentation mode")
    p.add_argument("--seed", type=int, default=0, help="root RNG seed")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.add_argument("--raw", action="store_true",
                   help="keep raw waveforms (needed for gridsearch)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gridsearch",
                       help="score all 18 STFT parameter combinations")
    p.add_argument("--data", required=True, help="dataset directory (raw)")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.add_argument("--seed", type=int, default=0, help="evaluation seed")
    p.add_argument("--trees", type=int, default=50,
                   help="forest size for the per-cell evaluator (default 50)")
    p.add_argument("--jobs", type=int, default=1, help="worker process cap")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("experiment",
                       help="train and score one model under one protocol")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, choices=MODEL_FAMILIES,
                   help="model family")
    p.add_argument("--strategy", default="user-calibrated",
                   choices=STRATEGIES, help="cross-validation protocol")
    p.add_argument("--modality", default="fused", choices=MODALITIES,
                   help="input branches to use")
    p.add_argument("--set", default=GestureSet.FULL.value,
                   choices=[s.value for s in GestureSet],
                   help="gesture vocabulary (subsets use user-calibrated)")
    p.add_argument("--out", required=True, help="report directory to write")
    p.add_argument("--seed", type=int, default=0, help="evaluation seed")
    p.add_argument("--epochs", type=int, default=100,
                   help="conv-net epoch cap (default 100)")
    p.add_argument("--trees", type=int, default=100,
                   help="forest size (default 100)")
    p.add_argument("--jobs", type=int, default=1, help="worker process cap")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("tune",
                       help="TPE hyperparameter search for a conv net")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, choices=CNN_FAMILIES,
                   help="conv-net family to tune")
    p.add_argument("--budget", type=int, default=60,
                   help="number of trials (default 60)")
    p.add_argument("--out", required=True, help="history CSV file to write")
    p.add_argument("--seed", type=int, default=0, help="tuning seed")
    p.add_argument("--epochs", type=int, default=30,
                   help="epoch cap per trial (default 30)")
    p.add_argument("--jobs", type=int, default=1, help="worker process cap")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    args = build_parser().parse_args(argv)
    args.argv = list(argv)
    if "AIRWARE_SEED" in os.environ and hasattr(args, "seed"):
        try:
            args.seed = int(os.environ["AIRWARE_SEED"])
        except ValueError:
            print("error: AIRWARE_SEED must be an integer", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except TooFewUsers as exc:
        print("error: TooFewUsers: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except NoSuccessfulTrial as exc:
        print("error: no successful trial: %s" % exc, file=sys.stderr)
        return EXIT_TUNE
    except (DataUnusable, OSError, json.JSONDecodeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    except (AirwareError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
