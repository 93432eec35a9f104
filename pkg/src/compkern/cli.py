"""Command-line surface.

Subcommands
-----------
- ``prep``    — ingest, preprocess, and subsample a dataset into .npz files.
- ``kernel``  — compute train and test Gram matrices for an architecture.
- ``solve``   — regularization sweep, final fit, predictions, accuracy.
- ``eval``    — aggregate run summaries into a metrics report.
- ``verify``  — run the oracle gate suite (quick or full).

Every run is driven by a config file (see :mod:`compkern.config`); the
``--threads``, ``--tile``, ``--cache-dir``, ``--out-dir``, and ``--seed``
flags override it.  Exit codes: 0 success, 1 runtime failure, 2 validation
failure.  Identical config and seed produce byte-identical CSV outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data as data_mod
from . import metrics, ridge
from .arch import ArchError, load_arch
from .config import ConfigError, ExperimentConfig, derive_seed
from .data import DataFormatError, ImageDataset
from .engine import compose_kernel
from .formats import FormatError, read_gram, write_gram, write_model

_PREDICTION_HEADER = "index,true,pred\n"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compkern",
        description="Compositional kernel computation, solving, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--threads", type=int, help="worker processes")
        p.add_argument("--tile", type=int, help="tile edge for the Gram computation")
        p.add_argument("--cache-dir", help="tile cache directory")
        p.add_argument("--out-dir", help="output directory")
        p.add_argument("--seed", type=int, help="master seed override")

    p_prep = sub.add_parser("prep", help="ingest, preprocess, and subsample a dataset")
    add_common(p_prep)
    p_prep.set_defaults(func=cmd_prep)

    p_kernel = sub.add_parser("kernel", help="compute train/test Gram matrices")
    add_common(p_kernel)
    p_kernel.set_defaults(func=cmd_kernel)

    p_solve = sub.add_parser("solve", help="sweep regularization, fit, and predict")
    add_common(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_eval = sub.add_parser("eval", help="aggregate run summaries into a report")
    p_eval.add_argument("summaries", nargs="+", help="summary.json files from solve runs")
    p_eval.add_argument("--out-dir", default=".", help="where to write report.csv/json")
    p_eval.add_argument("--conf", type=float, default=0.95, help="CI confidence level")
    p_eval.set_defaults(func=cmd_eval)

    p_verify = sub.add_parser("verify", help="run the oracle gate suite")
    p_verify.add_argument("--level", choices=("quick", "full"), default="quick")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def _load_experiment(args) -> ExperimentConfig:
    """Config file plus command-line overrides (flags beat file and env)."""
    cfg = config_mod.load_config(args.config)
    overrides = {}
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        overrides["threads"] = args.threads
    if args.tile is not None:
        if args.tile < 1:
            raise ConfigError(f"--tile must be >= 1, got {args.tile}")
        overrides["tile"] = args.tile
    if args.cache_dir is not None:
        overrides["cache_dir"] = args.cache_dir
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# Dataset assembly shared by prep and kernel
# ---------------------------------------------------------------------------

def _require(*paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise DataFormatError(f"dataset file(s) missing: {', '.join(missing)}")


def _load_splits(cfg: ExperimentConfig) -> tuple[ImageDataset, ImageDataset]:
    ds = cfg.dataset
    base = Path(ds.source)
    if ds.type == "cifar10":
        return (data_mod.load_cifar10(base, "train"),
                data_mod.load_cifar10(base, "test"))
    if ds.type == "mnist":
        paths = (base / "train-images-idx3-ubyte", base / "train-labels-idx1-ubyte",
                 base / "t10k-images-idx3-ubyte", base / "t10k-labels-idx1-ubyte")
        _require(*paths)
        return (data_mod.load_mnist_idx(paths[0], paths[1]),
                data_mod.load_mnist_idx(paths[2], paths[3]))
    if ds.type == "npz":
        if not base.is_dir():
            raise DataFormatError(
                f"npz source must be a directory holding train.npz and test.npz, got {base}"
            )
        _require(base / "train.npz", base / "test.npz")
        return (data_mod.load_dataset_npz(base / "train.npz"),
                data_mod.load_dataset_npz(base / "test.npz"))
    raise ConfigError(
        f"dataset type {ds.type!r} is tabular; the kernel pipeline needs image data"
    )


def _select_test(cfg: ExperimentConfig, test_full: ImageDataset) -> ImageDataset:
    count = cfg.dataset.test_count
    if count and count < len(test_full):
        seed = derive_seed(cfg.seed, config_mod.SEED_TEST_SPLIT)
        return data_mod.subsample_balanced(test_full, count, seed)
    return test_full


def _trial_counters(cfg: ExperimentConfig) -> tuple:
    return cfg.dataset.seeds if cfg.dataset.seeds else (0,)


def _prepare_trial(cfg: ExperimentConfig, counter: int, train_full: ImageDataset,
                   test: ImageDataset) -> tuple[ImageDataset, ImageDataset]:
    """Subsample, augment, and preprocess one trial (statistics fit on train)."""
    ds = cfg.dataset
    train = train_full
    if ds.subsample is not None:
        seed = derive_seed(cfg.seed, config_mod.SEED_SUBSAMPLE_BASE + counter)
        train = data_mod.subsample_balanced(train_full, ds.subsample, seed)
    if ds.flip:
        train = data_mod.flip_augment(train)
    for step in ds.preprocess:
        name, _, arg = step.partition(":")
        if name == "standardize":
            pixels = train.pixels.astype(np.float64)
            mean = pixels.mean(axis=(0, 1, 2))
            std = np.maximum(pixels.std(axis=(0, 1, 2)), 1e-8)

            def apply(d):
                out = ((d.pixels.astype(np.float64) - mean) / std).astype(np.float32)
                return replace(d, pixels=out,
                               provenance=d.provenance + ("standardize",))

            train, test = apply(train), apply(test)
        elif name == "zca":
            transform = data_mod.zca_fit(train)
            train = data_mod.zca_apply(transform, train)
            test = data_mod.zca_apply(transform, test)
        elif name == "pad":
            size = int(arg)
            train = data_mod.pad_to(train, (size, size))
            test = data_mod.pad_to(test, (size, size))
        elif name == "flatten":
            train = data_mod.flatten_spatial(train)
            test = data_mod.flatten_spatial(test)
        else:
            raise ConfigError(f"unknown preprocess step {step!r}")
    return train, test


# ---------------------------------------------------------------------------
# prep
# ---------------------------------------------------------------------------

def cmd_prep(args) -> int:
    cfg = _load_experiment(args)
    out = Path(cfg.out_dir)

    if cfg.dataset.type == "csv":
        table = data_mod.load_csv_tabular(cfg.dataset.source,
                                          label_col=cfg.dataset.label_col)
        if "standardize" in cfg.dataset.preprocess:
            table = data_mod.standardize(table)
        out.mkdir(parents=True, exist_ok=True)
        np.savez(out / "tabular.npz", rows=table.rows, labels=table.labels)
        print(f"wrote {out / 'tabular.npz'} "
              f"({table.rows.shape[0]} rows, {table.rows.shape[1]} features)")
        return 0

    train_full, test_full = _load_splits(cfg)
    test = _select_test(cfg, test_full)
    out.mkdir(parents=True, exist_ok=True)
    for counter in _trial_counters(cfg):
        train, test_t = _prepare_trial(cfg, counter, train_full, test)
        data_mod.save_dataset_npz(out / f"trial{counter}_train.npz", train)
        data_mod.save_dataset_npz(out / f"trial{counter}_test.npz", test_t)
        print(f"trial {counter}: wrote {len(train)} train / {len(test_t)} test "
              f"images {train.spatial[0]}x{train.spatial[1]}")
    return 0


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

def cmd_kernel(args) -> int:
    cfg = _load_experiment(args)
    arch = load_arch(cfg.arch_path)
    train_full, test_full = _load_splits(cfg)
    test = _select_test(cfg, test_full)
    out = Path(cfg.out_dir)

    for counter in _trial_counters(cfg):
        train, test_t = _prepare_trial(cfg, counter, train_full, test)
        trial_dir = out / f"trial{counter}"
        trial_dir.mkdir(parents=True, exist_ok=True)

        for tag, images_a, images_b in (
            ("train", train.pixels, None),
            ("test", test_t.pixels, train.pixels),
        ):
            counts = {"cached": 0, "computed": 0}
            start = time.perf_counter()

            def progress(done, total, from_cache):
                counts["cached" if from_cache else "computed"] += 1
                print(f"\r{tag} tile {done}/{total}", end="", flush=True)

            gram = compose_kernel(
                images_a, images_b, arch, tile=cfg.tile,
                workers=cfg.threads, cache=cfg.cache_dir, progress=progress,
            )
            elapsed = time.perf_counter() - start
            path = trial_dir / f"{tag}.ckgm"
            write_gram(path, gram.values, gram.row_ids, gram.col_ids,
                       gram.symmetric)
            print(f"\rtrial {counter} {tag}: {gram.values.shape[0]}x"
                  f"{gram.values.shape[1]} Gram in {elapsed:.1f}s "
                  f"({counts['cached']} tiles cached, "
                  f"{counts['computed']} computed) -> {path}")
        np.save(trial_dir / "train_labels.npy", train.labels)
        np.save(trial_dir / "test_labels.npy", test_t.labels)
    return 0


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _load_trial_grams(trial_dir: Path):
    train_values, train_rows, train_cols, symmetric, _ = read_gram(
        trial_dir / "train.ckgm"
    )
    test_values, test_rows, test_cols, _, _ = read_gram(trial_dir / "test.ckgm")
    train_labels = np.load(trial_dir / "train_labels.npy")
    test_labels = np.load(trial_dir / "test_labels.npy")
    if not symmetric:
        raise ValueError(f"{trial_dir}/train.ckgm is not marked symmetric")
    if train_values.shape[0] != train_labels.shape[0]:
        raise ValueError(
            f"train Gram has {train_values.shape[0]} rows but "
            f"{train_labels.shape[0]} labels"
        )
    if test_values.shape[0] != test_labels.shape[0]:
        raise ValueError(
            f"test Gram has {test_values.shape[0]} rows but "
            f"{test_labels.shape[0]} labels"
        )
    if not np.array_equal(test_cols, train_rows):
        raise ValueError(
            f"test Gram columns do not line up with train Gram rows in {trial_dir}"
        )
    return (train_values.astype(np.float64), test_values.astype(np.float64),
            train_labels, test_labels)


def cmd_solve(args) -> int:
    cfg = _load_experiment(args)
    out = Path(cfg.out_dir)
    arch_name = Path(cfg.arch_path).stem
    dataset_name = Path(cfg.dataset.source).name
    trial_dirs = sorted(p for p in out.glob("trial*") if (p / "train.ckgm").exists())
    if not trial_dirs:
        raise ConfigError(
            f"no trial directories with train.ckgm under {out}; run the kernel command first"
        )

    accuracies = []
    for trial_dir in trial_dirs:
        train_k, test_k, train_labels, test_labels = _load_trial_grams(trial_dir)
        classes, encoded = np.unique(train_labels, return_inverse=True)
        onehot = np.zeros((train_labels.shape[0], classes.size))
        onehot[np.arange(train_labels.shape[0]), encoded] = 1.0
        test_encoded = np.searchsorted(classes, test_labels)
        clipped = np.minimum(test_encoded, classes.size - 1)
        test_encoded = np.where(classes[clipped] == test_labels, clipped, -1)

        sweep = ridge.lambda_sweep(
            train_k, onehot, ("holdout", test_k, test_encoded),
            grid=cfg.lambda_grid, tilt=cfg.tilt,
        )
        model = (
            ridge.tilted_fit(train_k, onehot, sweep.best_lambda, cfg.tilt)
            if cfg.tilt
            else ridge.ridge_fit(train_k, onehot, sweep.best_lambda)
        )
        pred_encoded, _ = ridge.predict(model, test_k)
        pred = classes[pred_encoded]

        result = metrics.accuracy(pred, test_labels)
        lo, hi = metrics.clopper_pearson(result.correct, result.total)
        write_model(trial_dir / "model.ckrm", model.alpha, model.lam, model.tilt)
        with open(trial_dir / "predictions.csv", "w", encoding="utf-8") as handle:
            handle.write(_PREDICTION_HEADER)
            for index, (truth, guess) in enumerate(zip(test_labels, pred)):
                handle.write(f"{index},{truth},{guess}\n")
        summary = {
            "dataset": dataset_name,
            "classifier": arch_name,
            "trial": trial_dir.name,
            "n_train": int(train_labels.shape[0]),
            "n_eval": result.total,
            "correct": result.correct,
            "accuracy_pct": round(100.0 * result.fraction, 2),
            "ci_lo_pct": round(100.0 * lo, 2),
            "ci_hi_pct": round(100.0 * hi, 2),
            "best_lambda": sweep.best_lambda,
            "lambda_accuracies": {f"{lam:g}": round(acc, 6)
                                  for lam, acc in sorted(sweep.accuracies.items())},
            "lambda_errors": {f"{lam:g}": msg
                              for lam, msg in sorted(sweep.errors.items())},
            "tilt": cfg.tilt,
        }
        with open(trial_dir / "summary.json", "w", encoding="utf-8") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write("\n")
        accuracies.append(100.0 * result.fraction)
        print(f"{trial_dir.name}: accuracy {100 * result.fraction:.2f}% "
              f"[{100 * lo:.2f}, {100 * hi:.2f}] "
              f"(lambda {sweep.best_lambda:g}, tilt {cfg.tilt:g}, "
              f"n={result.total})")

    arr = np.asarray(accuracies)
    spread = arr.std(ddof=1) if arr.size > 1 else 0.0
    print(f"mean accuracy over {arr.size} trial(s): {arr.mean():.2f}% "
          f"(+/- {spread:.2f})")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    pooled: dict = {}
    for path in args.summaries:
        with open(path, "r", encoding="utf-8") as handle:
            summary = json.load(handle)
        try:
            key = (summary["dataset"], summary["classifier"])
            correct, n_eval = int(summary["correct"]), int(summary["n_eval"])
        except KeyError as exc:
            raise ValueError(f"{path}: summary is missing field {exc}") from exc
        entry = pooled.setdefault(key, [0, 0])
        entry[0] += correct
        entry[1] += n_eval

    datasets = sorted({key[0] for key in pooled})
    classifiers = sorted({key[1] for key in pooled})
    missing = [
        f"{d}/{c}" for d in datasets for c in classifiers if (d, c) not in pooled
    ]
    if missing:
        raise ValueError(
            "the report needs every (dataset, classifier) pair; missing: "
            + ", ".join(missing)
        )
    successes = np.array([[pooled[(d, c)][0] for c in classifiers] for d in datasets])
    counts_table = np.array([[pooled[(d, c)][1] for c in classifiers] for d in datasets])
    if not np.all(counts_table == counts_table[:, :1]):
        raise ValueError("classifiers disagree on n_eval for the same dataset")

    report = metrics.build_report(successes, counts_table[:, 0], datasets,
                                  classifiers, conf=args.conf)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "report.csv", out / "report.json"
    csv_path.write_text(metrics.report_to_csv(report), encoding="utf-8")
    json_path.write_text(metrics.report_to_json(report), encoding="utf-8")
    for name in classifiers:
        agg = report.aggregates[name]
        print(f"{name}: rank {agg.friedman_rank:.2f}, P90 {agg.p90:.1f}, "
              f"P95 {agg.p95:.1f}, PMA {agg.pma_mean:.1f} +/- {agg.pma_std:.1f}")
    print(f"wrote {csv_path} and {json_path}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from .verify import run_gates

    results = run_gates(level=args.level)
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ArchError, DataFormatError, FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 — boundary: map failures to exit 1
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
