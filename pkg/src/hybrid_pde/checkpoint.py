"""Versioned corrector checkpoints (JSON with little-endian float64 payload)."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .network import LayerSpec, NeuralParams

FORMAT = "hybrid-pde-corrector"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_dict(params: NeuralParams) -> dict:
    payload = np.ascontiguousarray(params.theta, dtype="<f8").tobytes()
    return {
        "format": FORMAT,
        "version": VERSION,
        "features": list(params.features),
        "layers": [
            {"cin": l.cin, "cout": l.cout, "width": l.width, "activation": l.activation}
            for l in params.layers
        ],
        "dtype": "<f8",
        "theta": base64.b64encode(payload).decode("ascii"),
    }


def from_dict(d: dict) -> NeuralParams:
    if d.get("format") != FORMAT:
        raise CheckpointError("not a corrector checkpoint")
    if d.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
    if d.get("dtype") != "<f8":
        raise CheckpointError("checkpoint payload must be little-endian float64")
    layers = tuple(LayerSpec(**l) for l in d["layers"])
    theta = np.frombuffer(base64.b64decode(d["theta"]), dtype="<f8").astype(float)
    return NeuralParams(layers, theta, tuple(d["features"]))


def save(params: NeuralParams, path) -> None:
    text = json.dumps(to_dict(params), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def load(path) -> NeuralParams:
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
