import struct

import numpy as np
import pytest

from acunet.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from acunet.errors import CheckpointError, DimensionError
from acunet.model import ModelConfig, build_model
from acunet.training import model_from_checkpoint


def make_checkpoint(film="C-G", seed=0):
    cfg = ModelConfig(base_filters=2, film_blocks=film)
    model = build_model(cfg, seed)
    history = [{"epoch": 1, "train_loss": 0.1 + 1e-17, "val_loss": 1 / 3, "lr": 1e-3}]
    return Checkpoint(cfg, model.state_dict(), {"seed": seed, "learning_rate": 1e-3}, 1, 1 / 3, history)


def test_round_trip_is_bit_exact(tmp_path):
    cp = make_checkpoint()
    save_checkpoint(tmp_path / "m.acun", cp)
    back = load_checkpoint(tmp_path / "m.acun")
    assert back.model_config == cp.model_config
    assert list(back.params) == list(cp.params)
    for k, v in cp.params.items():
        assert back.params[k].dtype == np.float64
        assert back.params[k].tobytes() == np.ascontiguousarray(v).tobytes()
    assert (back.epoch, back.val_loss, back.history, back.train_config) == (
        cp.epoch, cp.val_loss, cp.history, cp.train_config,
    )


def test_save_load_save_identical_bytes(tmp_path):
    save_checkpoint(tmp_path / "a.acun", make_checkpoint())
    save_checkpoint(tmp_path / "b.acun", load_checkpoint(tmp_path / "a.acun"))
    assert (tmp_path / "a.acun").read_bytes() == (tmp_path / "b.acun").read_bytes()


def test_header_layout(tmp_path):
    save_checkpoint(tmp_path / "m.acun", make_checkpoint())
    raw = (tmp_path / "m.acun").read_bytes()
    assert raw[:4] == b"ACUN"
    assert struct.unpack("<I", raw[4:8]) == (1,)


def test_bad_magic(tmp_path):
    save_checkpoint(tmp_path / "m.acun", make_checkpoint())
    raw = bytearray((tmp_path / "m.acun").read_bytes())
    raw[:4] = b"NOPE"
    (tmp_path / "x.acun").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "x.acun")


def test_wrong_version(tmp_path):
    save_checkpoint(tmp_path / "m.acun", make_checkpoint())
    raw = bytearray((tmp_path / "m.acun").read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    (tmp_path / "x.acun").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "x.acun")


@pytest.mark.parametrize("cut", [6, 40, 500, -3])
def test_truncated(tmp_path, cut):
    save_checkpoint(tmp_path / "m.acun", make_checkpoint())
    raw = (tmp_path / "m.acun").read_bytes()
    (tmp_path / "x.acun").write_bytes(raw[:cut])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.acun")


def test_trailing_bytes(tmp_path):
    save_checkpoint(tmp_path / "m.acun", make_checkpoint())
    (tmp_path / "x.acun").write_bytes((tmp_path / "m.acun").read_bytes() + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "x.acun")


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_checkpoint(tmp_path / "none.acun")


def test_mismatched_config_names_parameter():
    cp = make_checkpoint()
    model = build_model(ModelConfig(base_filters=4, film_blocks="C-G"))
    with pytest.raises(DimensionError, match="parameter '"):
        model.load_state_dict(cp.params)


def test_restored_model_predicts_identically(tmp_path):
    cp = make_checkpoint(film="A,E", seed=3)
    save_checkpoint(tmp_path / "m.acun", cp)
    original = build_model(cp.model_config, 3)
    restored = model_from_checkpoint(load_checkpoint(tmp_path / "m.acun"))
    rng = np.random.default_rng(0)
    page, ex = rng.random((1, 32, 16)), rng.random((1, 78, 40))
    assert np.array_equal(original(page, ex).data, restored(page, ex).data)
