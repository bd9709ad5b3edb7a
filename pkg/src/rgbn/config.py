"""TOML configuration loading for the CLI.

A config file is a key-value tree with up to three tables:

    [train]     -> TrainConfig fields
    [pipeline]  -> PipelineConfig fields
    [scene]     -> SceneSpec fields

Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .errors import DataError
from .pipeline import PipelineConfig, TrainConfig
from .synth import SceneSpec

_TUPLE_FIELDS = {"leaf_count", "leaf_radius", "split_ratios", "background_rgb", "classes"}


def load_config(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise DataError(f"malformed config {path}: {e}") from e


def _build(cls, table: dict, section: str, required=(), **extra):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - fields
    if unknown:
        raise DataError(f"unknown [{section}] config keys: {sorted(unknown)}")
    kwargs = dict(table)
    for key in _TUPLE_FIELDS & set(kwargs):
        if isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    kwargs.update(extra)
    for key in required:
        if key not in kwargs or kwargs[key] is None:
            raise DataError(f"[{section}] config requires {key!r}")
    return cls(**kwargs)


def make_train_config(doc: dict, **overrides) -> TrainConfig:
    table = dict(doc.get("train", {}))
    table.update({k: v for k, v in overrides.items() if v is not None})
    return _build(TrainConfig, table, "train")


def make_pipeline_config(doc: dict, **overrides) -> PipelineConfig:
    table = dict(doc.get("pipeline", {}))
    table.update({k: v for k, v in overrides.items() if v is not None})
    return _build(PipelineConfig, table, "pipeline", required=("mode", "seg_archive"))


def make_scene_spec(doc: dict, **overrides) -> SceneSpec:
    table = dict(doc.get("scene", {}))
    table.update({k: v for k, v in overrides.items() if v is not None})
    return _build(SceneSpec, table, "scene")
