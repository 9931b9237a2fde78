import struct

import pytest
import torch

from hbvid import params
from hbvid.unet import UNetConfig, init_params


def test_checkpoint_round_trip_bit_exact(tmp_path, mini_config):
    store = init_params(mini_config, 3)
    path = tmp_path / "m.ckpt"
    params.save_checkpoint(path, store, mini_config)
    back, cfg = params.load_checkpoint(path)
    assert cfg == mini_config
    assert params.stores_equal(store, back)


def test_checkpoint_preserves_tuple_fields(tmp_path):
    cfg = UNetConfig(blocks_per_level=(2, 2), up_blocks_per_level=(1, 1),
                     middle_blocks=0)
    path = tmp_path / "m.ckpt"
    params.save_checkpoint(path, init_params(cfg, 0), cfg)
    _, back = params.load_checkpoint(path)
    assert back == cfg
    assert isinstance(back.up_blocks_per_level, tuple)


def test_checkpoint_header_layout(tmp_path, mini_config):
    path = tmp_path / "m.ckpt"
    params.save_checkpoint(path, init_params(mini_config, 0), mini_config)
    raw = path.read_bytes()
    assert raw[:4] == b"HBCK"
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header = raw[12:12 + hlen].decode("utf-8")
    assert header.startswith("{") and '"config"' in header and '"params"' in header


def test_save_is_deterministic(tmp_path, mini_config):
    store = init_params(mini_config, 1)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    params.save_checkpoint(a, store, mini_config)
    params.save_checkpoint(b, store, mini_config)
    assert a.read_bytes() == b.read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(params.CheckpointError):
        params.load_checkpoint(path)


def test_store_helpers():
    store = {"a": torch.ones(2, 2), "b": torch.zeros(3)}
    assert params.count_params(store) == 7
    clone = params.clone_store(store)
    assert params.stores_equal(store, clone)
    clone["a"][0, 0] = 5.0
    assert not params.stores_equal(store, clone)
    assert not params.stores_equal(store, {"a": store["a"]})
