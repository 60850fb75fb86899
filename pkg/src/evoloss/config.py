"""Run configuration and manifests for the command-line tool.

A run is configured by one JSON document with the sections below; unknown
keys anywhere are errors. Command-line ``--set section.key=value`` overrides
take precedence over the file, and dedicated flags take precedence over
both. All randomness derives from ``run_seed`` through named sub-seeds.

Sections and defaults::

    run_seed: 0          workers: 1
    dataset:  kind=blobs  (blobs | digits | idx | csv) + source fields,
              train_n/val_n/test_n/split_seed, portion, portion_seed
    model:    hidden_layers=[128], dropout=0.4
    train:    batch_size=100, learning_rate=0.01, steps=2000,
              eval_every=null, clip_epsilon=1e-7
    ga:       population_size=80, elites_per_generation=6,
              recombination_probability=0.8, mutation_rate=0.05,
              replace_with_leaf_rate=0.025, leaf_to_subtree_rate=0.025,
              initial_max_depth=2, generations=50, max_tree_size=64,
              crossover_retries=5
    weights:  generation weights by node kind (defaults as documented)
    cmaes:    sigma0=1.5, lam=null, mu=null, max_evaluations=2000,
              target_fitness=null

The manifest written at the start of every run records the command, the
fully-merged config and the derived sub-seeds; re-running from a manifest
reproduces the run's outputs bitwise.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from . import __version__
from .cmaes import CmaesConfig
from .evolution import GaConfig
from .expressions import DEFAULT_WEIGHTS, GenerationWeights
from .seeding import derive_seed
from .training import (
    BlobsSource,
    CsvSource,
    DigitsSource,
    IdxSource,
    TaskDescriptor,
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


_DATASET_COMMON = {
    "kind": "blobs",
    "train_n": 1000,
    "val_n": 300,
    "test_n": 300,
    "split_seed": 0,
    "portion": 1.0,
    "portion_seed": 0,
}

_SOURCE_FIELDS = {
    "blobs": {
        "classes": 4,
        "samples_per_class": 400,
        "dim": 16,
        "separation": 0.8,
        "noise_sigma": 0.15,
        "seed": 0,
    },
    "digits": {
        "samples": 4000,
        "image_size": 28,
        "noise_sigma": 0.25,
        "pixel_dropout": 0.2,
        "seed": 0,
    },
    "idx": {"images": "", "labels": ""},
    "csv": {"path": ""},
}

DEFAULT_CONFIG = {
    "run_seed": 0,
    "workers": 1,
    "dataset": dict(_DATASET_COMMON, **_SOURCE_FIELDS["blobs"]),
    "model": {"hidden_layers": [128], "dropout": 0.4},
    "train": {
        "batch_size": 100,
        "learning_rate": 0.01,
        "steps": 2000,
        "eval_every": None,
        "clip_epsilon": 1e-7,
    },
    "ga": {
        "population_size": 80,
        "elites_per_generation": 6,
        "recombination_probability": 0.8,
        "mutation_rate": 0.05,
        "replace_with_leaf_rate": 0.025,
        "leaf_to_subtree_rate": 0.025,
        "initial_max_depth": 2,
        "generations": 50,
        "max_tree_size": 64,
        "crossover_retries": 5,
    },
    "weights": dict(DEFAULT_WEIGHTS),
    "cmaes": {
        "sigma0": 1.5,
        "lam": None,
        "mu": None,
        "max_evaluations": 2000,
        "target_fitness": None,
    },
}


def _merge_section(defaults: dict, given: dict, path: str) -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in merged:
            raise ConfigError(f"unknown key {path + key!r}")
        if isinstance(merged[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key} must be an object")
            merged[key] = _merge_section(merged[key], value, f"{path}{key}.")
        else:
            merged[key] = value
    return merged


def merge_config(given: dict) -> dict:
    """Layer a (possibly partial) config over the defaults, strictly."""
    if not isinstance(given, dict):
        raise ConfigError("config root must be a JSON object")
    ds_given = given.get("dataset", {})
    if not isinstance(ds_given, dict):
        raise ConfigError("dataset must be an object")
    kind = ds_given.get("kind", "blobs")
    if kind not in _SOURCE_FIELDS:
        raise ConfigError(
            f"dataset.kind {kind!r} unknown; expected one of {sorted(_SOURCE_FIELDS)}"
        )
    defaults = copy.deepcopy(DEFAULT_CONFIG)
    defaults["dataset"] = dict(_DATASET_COMMON, kind=kind, **_SOURCE_FIELDS[kind])
    return _merge_section(defaults, given, "")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return merge_config(raw)


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values parse as JSON, falling
    back to bare strings."""
    config = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key_path, raw_value = item.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = config
        parts = key_path.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown key {key_path!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown key {key_path!r}")
        node[parts[-1]] = value
    # re-validate dataset-kind consistency after overrides
    return merge_config(config)


# ---------------------------------------------------------------------------
# Builders


def _require_positive_probability(value: float, path: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{path} must be in [0, 1], got {value}")


def task_descriptor(config: dict) -> TaskDescriptor:
    ds = config["dataset"]
    kind = ds["kind"]
    try:
        if kind == "blobs":
            source = BlobsSource(
                classes=ds["classes"],
                samples_per_class=ds["samples_per_class"],
                dim=ds["dim"],
                separation=ds["separation"],
                noise_sigma=ds["noise_sigma"],
                seed=ds["seed"],
            )
        elif kind == "digits":
            source = DigitsSource(
                samples=ds["samples"],
                image_size=ds["image_size"],
                noise_sigma=ds["noise_sigma"],
                pixel_dropout=ds["pixel_dropout"],
                seed=ds["seed"],
            )
        elif kind == "idx":
            source = IdxSource(images=ds["images"], labels=ds["labels"])
        else:
            source = CsvSource(path=ds["path"])
        return TaskDescriptor(
            source=source,
            train_n=ds["train_n"],
            val_n=ds["val_n"],
            test_n=ds["test_n"],
            split_seed=ds["split_seed"],
            portion=ds["portion"],
            portion_seed=ds["portion_seed"],
            hidden_layers=tuple(config["model"]["hidden_layers"]),
            dropout=config["model"]["dropout"],
            batch_size=config["train"]["batch_size"],
            learning_rate=config["train"]["learning_rate"],
            steps=config["train"]["steps"],
            eval_every=config["train"]["eval_every"],
            clip_epsilon=config["train"]["clip_epsilon"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def ga_config(config: dict) -> GaConfig:
    ga = config["ga"]
    for name in (
        "recombination_probability",
        "mutation_rate",
        "replace_with_leaf_rate",
        "leaf_to_subtree_rate",
    ):
        _require_positive_probability(ga[name], f"ga.{name}")
    try:
        return GaConfig(rng_seed=derive_seed(config["run_seed"], "gp"), **ga)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ga: {exc}") from exc


def generation_weights(config: dict) -> GenerationWeights:
    try:
        return GenerationWeights({k: float(v) for k, v in config["weights"].items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"weights: {exc}") from exc


def cmaes_config(config: dict, dimension: int) -> CmaesConfig:
    cm = config["cmaes"]
    try:
        return CmaesConfig(
            dimension=dimension,
            sigma0=cm["sigma0"],
            lam=cm["lam"],
            mu=cm["mu"],
            max_evaluations=cm["max_evaluations"],
            target_fitness=cm["target_fitness"],
            rng_seed=derive_seed(config["run_seed"], "cmaes"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cmaes: {exc}") from exc


def named_seeds(config: dict) -> dict:
    root = config["run_seed"]
    return {
        "gp": derive_seed(root, "gp"),
        "cmaes": derive_seed(root, "cmaes"),
        "fitness": derive_seed(root, "fitness"),
        "trainer": derive_seed(root, "trainer"),
        "data": derive_seed(root, "data"),
    }


# ---------------------------------------------------------------------------
# Manifests


def write_manifest(out_dir: Path, command: str, config: dict, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seeds": named_seeds(config),
        "package_version": __version__,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    with open(path) as fh:
        manifest = json.load(fh)
    if "command" not in manifest or "config" not in manifest:
        raise ConfigError(f"{path} is not a run manifest")
    manifest["config"] = merge_config(manifest["config"])
    return manifest
