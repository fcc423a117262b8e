import json

import numpy as np
import pytest

from clora_ts import checkpoint
from clora_ts.backbone import ModelConfig, init_params
from helpers import SMALL


@pytest.mark.parametrize("kw", [dict(), dict(mixing_mode="attention", adapter_enabled=True),
                                dict(embedding_mode="per_channel", mixing_mode="mlp_mix")])
def test_round_trip_bit_exact(tmp_path, kw):
    p = init_params(ModelConfig(**{**SMALL, **kw}), 3)
    p.tensors["proj.bias"][0] = np.nextafter(1.0, 2.0)
    p.tensors["proj.bias"][1] = -0.0
    p.tensors["proj.bias"][2] = 5e-324
    path = tmp_path / "m.json"
    checkpoint.save(p, path)
    q = checkpoint.load(path)
    assert q.config == p.config
    for k in p.tensors:
        assert q[k].tobytes() == p[k].tobytes()


def test_checkpoint_declares_shapes(tmp_path):
    p = init_params(ModelConfig(**SMALL), 0)
    checkpoint.save(p, tmp_path / "m.json")
    blob = json.loads((tmp_path / "m.json").read_text())
    assert blob["tensors"]["embed.weight"]["shape"] == [24, 16]
    assert blob["config"]["T"] == 24


def test_adapter_only_checkpoint(tmp_path):
    p = init_params(ModelConfig(**{**SMALL, "adapter_enabled": True}), 1)
    checkpoint.save(p, tmp_path / "a.json", adapters_only=True)
    blob = json.loads((tmp_path / "a.json").read_text())
    assert set(blob["tensors"]) == {"adapter.phi", "adapter.W"}
    with pytest.raises(ValueError):
        checkpoint.load(tmp_path / "a.json")
    backbone = init_params(p.config, 9)
    merged = checkpoint.load_adapters(tmp_path / "a.json", backbone)
    assert merged["adapter.phi"].tobytes() == p["adapter.phi"].tobytes()
    assert merged["embed.weight"].tobytes() == backbone["embed.weight"].tobytes()


def test_adapter_only_requires_adapter(tmp_path):
    with pytest.raises(ValueError):
        checkpoint.save(init_params(ModelConfig(**SMALL), 0), tmp_path / "x.json", adapters_only=True)


def test_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(ValueError):
        checkpoint.load(tmp_path / "x.json")
