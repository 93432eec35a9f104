"""Experiment configuration: flat INI files with sectioned key = value pairs.

A config fully describes an experiment — dataset source and preprocessing,
architecture file, tiling, regularization grid, tilt, and run directories —
so a run is reproducible from the file plus one master seed.  Only the cache
and output directories may come from the environment (COMPKERN_CACHE_DIR,
COMPKERN_OUT_DIR); everything else must be written down.

All randomness derives from the single master seed through counter-based
splitting (:func:`derive_seed`), so results do not depend on thread count or
evaluation order.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

import numpy as np

ENV_CACHE_DIR = "COMPKERN_CACHE_DIR"
ENV_OUT_DIR = "COMPKERN_OUT_DIR"

#: Counter namespaces for seed splitting (trial counters start at their base).
SEED_SUBSAMPLE_BASE = 100
SEED_TEST_SPLIT = 1
SEED_MEDIAN = 2
SEED_FOLDS = 3

_DATASET_TYPES = ("cifar10", "mnist", "csv", "npz")
_PREPROCESS_STEPS = ("standardize", "zca", "flatten")


class ConfigError(ValueError):
    """A config file failed to parse or validate."""


def derive_seed(master: int, counter: int) -> int:
    """Split one master seed into an independent stream seed.

    Uses a spawn-key derivation, so any (master, counter) pair yields a
    statistically independent, reproducible integer seed.

    Parameters
    ----------
    master : int
        The experiment's single source of randomness.
    counter : int
        Role/trial counter (see the SEED_* constants).

    Returns
    -------
    int
    """
    seq = np.random.SeedSequence(entropy=master, spawn_key=(counter,))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class DatasetConfig:
    """Dataset source and preprocessing description."""

    source: str
    type: str
    preprocess: tuple = ()
    subsample: int | None = None
    seeds: tuple = ()
    flip: bool = False
    test_count: int = 0
    label_col: int = -1


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, fully described.

    Parameters
    ----------
    dataset : DatasetConfig
    arch_path : str
        Path to the architecture file.
    tile : int or None
        Tile edge; None lets the engine pick from its memory budget.
    lambda_grid : tuple of float or None
        Regularization grid; None uses the solver default.
    tilt : float
        Leave-one-out tilt for the final fit (0 disables).
    out_dir : str
    cache_dir : str or None
    threads : int
    seed : int
        Master seed; all per-trial seeds derive from it.
    """

    dataset: DatasetConfig
    arch_path: str
    tile: int | None = None
    lambda_grid: tuple | None = None
    tilt: float = 0.0
    out_dir: str = "out"
    cache_dir: str | None = None
    threads: int = 1
    seed: int = 0

    def trial_seeds(self) -> tuple:
        """Effective subsample seed per trial counter."""
        return tuple(
            derive_seed(self.seed, SEED_SUBSAMPLE_BASE + c) for c in self.dataset.seeds
        )


def _get(parser, section, key, cast, default, errors: list):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    try:
        return cast(raw)
    except (ValueError, TypeError):
        errors.append(f"[{section}] {key}: cannot parse {raw!r}")
        return default


def _csv_list(cast):
    def parse(raw: str):
        items = [part.strip() for part in raw.split(",") if part.strip()]
        return tuple(cast(item) for item in items)

    return parse


def _boolean(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config file.

    Parameters
    ----------
    path : str or Path
        INI-style file with sections [dataset], [arch], [solve], [run].

    Returns
    -------
    ExperimentConfig

    Raises
    ------
    ConfigError
        Listing every parse/validation problem with its section and key.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    errors: list = []
    for section in ("dataset", "arch"):
        if not parser.has_section(section):
            errors.append(f"missing required section [{section}]")
    if errors:
        raise ConfigError("; ".join(errors))

    dataset = DatasetConfig(
        source=_get(parser, "dataset", "source", str, "", errors),
        type=_get(parser, "dataset", "type", str, "", errors).lower(),
        preprocess=_get(parser, "dataset", "preprocess", _csv_list(str), (), errors),
        subsample=_get(parser, "dataset", "subsample", int, None, errors),
        seeds=_get(parser, "dataset", "seeds", _csv_list(int), (), errors),
        flip=_get(parser, "dataset", "flip", _boolean, False, errors),
        test_count=_get(parser, "dataset", "test_count", int, 0, errors),
        label_col=_get(parser, "dataset", "label_col", int, -1, errors),
    )
    config = ExperimentConfig(
        dataset=dataset,
        arch_path=_get(parser, "arch", "file", str, "", errors),
        tile=_get(parser, "run", "tile", int, None, errors),
        lambda_grid=_get(parser, "solve", "lambda_grid", _csv_list(float), None, errors),
        tilt=_get(parser, "solve", "tilt", float, 0.0, errors),
        out_dir=_get(parser, "run", "out_dir", str, "out", errors),
        cache_dir=_get(parser, "run", "cache_dir", str, None, errors),
        threads=_get(parser, "run", "threads", int, 1, errors),
        seed=_get(parser, "run", "seed", int, 0, errors),
    )
    config = apply_env_overrides(config)
    errors.extend(_validate(config))
    if errors:
        raise ConfigError("; ".join(errors))
    return config


def apply_env_overrides(config: ExperimentConfig) -> ExperimentConfig:
    """Apply the only permitted environment overrides: cache and out dirs."""
    from dataclasses import replace

    cache = os.environ.get(ENV_CACHE_DIR)
    out = os.environ.get(ENV_OUT_DIR)
    if cache:
        config = replace(config, cache_dir=cache)
    if out:
        config = replace(config, out_dir=out)
    return config


def _validate(config: ExperimentConfig) -> list:
    errors: list = []
    ds = config.dataset
    if ds.type not in _DATASET_TYPES:
        errors.append(
            f"[dataset] type: {ds.type!r} is not one of {', '.join(_DATASET_TYPES)}"
        )
    if not ds.source:
        errors.append("[dataset] source: required")
    elif not os.path.exists(ds.source):
        errors.append(f"[dataset] source: path does not exist: {ds.source}")
    for step in ds.preprocess:
        name = step.split(":", 1)[0]
        if name not in _PREPROCESS_STEPS and name != "pad":
            errors.append(
                f"[dataset] preprocess: unknown step {step!r} "
                f"(expected {', '.join(_PREPROCESS_STEPS)}, pad:<size>)"
            )
        if name == "pad":
            try:
                int(step.split(":", 1)[1])
            except (IndexError, ValueError):
                errors.append(f"[dataset] preprocess: pad needs pad:<size>, got {step!r}")
    if ds.subsample is not None:
        if ds.subsample <= 0:
            errors.append(f"[dataset] subsample: must be > 0, got {ds.subsample}")
        if not ds.seeds:
            errors.append("[dataset] seeds: required (nonempty) when subsampling")
    if ds.test_count < 0:
        errors.append(f"[dataset] test_count: must be >= 0, got {ds.test_count}")
    if not config.arch_path:
        errors.append("[arch] file: required")
    elif not os.path.exists(config.arch_path):
        errors.append(f"[arch] file: path does not exist: {config.arch_path}")
    if config.tile is not None and config.tile < 1:
        errors.append(f"[run] tile: must be >= 1, got {config.tile}")
    if config.threads < 1:
        errors.append(f"[run] threads: must be >= 1, got {config.threads}")
    if config.lambda_grid is not None and any(l < 0 for l in config.lambda_grid):
        errors.append("[solve] lambda_grid: values must be >= 0")
    if not 0.0 <= config.tilt < 1.0:
        errors.append(f"[solve] tilt: must lie in [0, 1), got {config.tilt}")
    return errors
