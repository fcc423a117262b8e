"""JSON checkpoints with hex-encoded float64 values (bit-exact round trip)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .backbone import ModelConfig, ParamSet
from .numkernel import ShapeError

FORMAT = "clora-ts-checkpoint"
VERSION = 1


def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v).hex() for v in a.reshape(-1)]}


def _decode(entry: dict) -> np.ndarray:
    shape = tuple(entry["shape"])
    data = np.array([float.fromhex(v) for v in entry["data"]], dtype=np.float64)
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"declared shape {shape} does not hold {data.size} values")
    return data.reshape(shape)


def params_to_dict(params: ParamSet, adapters_only: bool = False) -> dict:
    names = params.adapter_names() if adapters_only else list(params.tensors)
    if adapters_only and not names:
        raise ValueError("model has no adapter tensors")
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": "adapters" if adapters_only else "full",
        "config": params.config.to_dict(),
        "tensors": {k: _encode(params[k]) for k in names},
    }


def save(params: ParamSet, path: str | Path, adapters_only: bool = False) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params, adapters_only)) + "\n", encoding="utf-8")


def load_dict(path: str | Path) -> dict:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    return blob


def load(path: str | Path) -> ParamSet:
    blob = load_dict(path)
    if blob["kind"] != "full":
        raise ValueError(f"{path}: adapter-only checkpoint; use load_adapters with a backbone")
    config = ModelConfig(**blob["config"])
    return ParamSet(config, {k: _decode(v) for k, v in blob["tensors"].items()})


def load_adapters(path: str | Path, backbone: ParamSet) -> ParamSet:
    """Attach an adapter-only checkpoint to ``backbone``'s shared tensors."""
    blob = load_dict(path)
    config = ModelConfig(**blob["config"])
    base = backbone.config.replace(C=config.C)
    if base != config:
        raise ValueError(f"adapter checkpoint config {config} does not fit backbone {backbone.config}")
    tensors = {k: backbone[k].copy() for k in backbone.backbone_names()}
    tensors.update({k: _decode(v) for k, v in blob["tensors"].items()})
    return ParamSet(config, tensors)
