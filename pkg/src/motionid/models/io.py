"""Lossless, byte-deterministic model files (JSON with base64 array payloads)."""

from __future__ import annotations

import base64
import json
import math

import numpy as np

from ..pipeline import Pipeline
from ..sampling import Scaler
from ..take import atomic_write_text
from .forest import DecisionTree
from .train import EpochRecord, TrainConfig, TrainedModel, config_from_json, config_to_json

FORMAT_VERSION = 1


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {"dtype": a.dtype.str, "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def _num(x):
    return None if isinstance(x, float) and not math.isfinite(x) else x


def model_to_json(model: TrainedModel) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "family": model.family,
        "config": config_to_json(model.config),
        "classes": list(model.classes),
        "scaler": None if model.scaler is None else {
            "mean": encode_array(model.scaler.mean), "std": encode_array(model.scaler.std)},
        "snapshot": {k: _num(v) for k, v in model.snapshot.items()},
        "history": [{k: _num(v) for k, v in vars(r).items() if k != "seconds"} for r in model.history],
        "pipeline": None if model.pipeline is None else model.pipeline.to_json(),
    }
    if model.params is not None:
        doc["params"] = {k: encode_array(v) for k, v in sorted(model.params.items())}
    if model.trees is not None:
        doc["trees"] = [{name: encode_array(getattr(t, name))
                         for name in ("feature", "threshold", "left", "right", "value")}
                        for t in model.trees]
    return doc


def model_from_json(doc: dict) -> TrainedModel:
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')!r}")
    scaler = None
    if doc.get("scaler") is not None:
        scaler = Scaler(decode_array(doc["scaler"]["mean"]), decode_array(doc["scaler"]["std"]))
    params = {k: decode_array(v) for k, v in doc["params"].items()} if "params" in doc else None
    trees = [DecisionTree(**{k: decode_array(v) for k, v in t.items()}) for t in doc["trees"]] \
        if "trees" in doc else None
    history = [EpochRecord(seconds=0.0, **{k: (math.nan if v is None else v) for k, v in r.items()})
               for r in doc.get("history", [])]
    pipeline = Pipeline.from_json(doc["pipeline"]) if doc.get("pipeline") else None
    return TrainedModel(doc["family"], config_from_json(doc["config"]), list(doc["classes"]), scaler,
                        params=params, trees=trees, snapshot=dict(doc.get("snapshot", {})),
                        history=history, pipeline=pipeline)


def dumps_model(model: TrainedModel) -> str:
    return json.dumps(model_to_json(model), sort_keys=True, indent=1) + "\n"


def save_model(model: TrainedModel, path) -> None:
    atomic_write_text(path, dumps_model(model))


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        return model_from_json(json.load(fh))


__all__ = ["save_model", "load_model", "dumps_model", "model_to_json", "model_from_json",
           "encode_array", "decode_array", "TrainConfig"]
