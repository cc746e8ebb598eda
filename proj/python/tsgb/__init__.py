"""Python bindings for the TSGB saliency engine."""

import json

from ._tsgb import (
    ArgumentError,
    DataError,
    Error,
    InvariantError,
    IoError,
    Model,
    ShapeError,
    argmax_point,
    bbox,
    deletion,
    forward,
    load_model,
    make_synthetic_dataset,
    model_from_bytes,
    random_deletion_auc,
    read_image,
    render,
    saliency,
    spearman,
    synthetic_detector,
    truncate,
    write_image,
)
from . import _tsgb


def _parse(jsonl):
    return [json.loads(line) for line in jsonl.splitlines() if line]


def pointing_game(model, dataset, margin=15, alpha=None, rule_set="tsgb"):
    """Per-image records followed by the aggregate line, as dicts."""
    return _parse(_tsgb.pointing_game_jsonl(model, str(dataset), margin, alpha, rule_set))


def sanity(model, dataset, mode="all-at-once", seed=0, layers=None):
    return _parse(_tsgb.sanity_jsonl(model, str(dataset), mode, seed, layers))


__all__ = [name for name in dir() if not name.startswith("_") and name != "json"]
