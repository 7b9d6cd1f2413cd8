"""Checkpoint format: byte-exact round trips and corruption detection."""

import numpy as np
import pytest

from sparsesr.checkpoint import load_checkpoint, save_checkpoint
from sparsesr.errors import ConfigError, DataError
from sparsesr.model import ModelConfig, SparseSRModel
from sparsesr.numerics import AdamState, Tensor, adam_step, mean, square


def small_model(seed=0, **overrides):
    base = dict(scale=2, num_atoms=4, num_blocks=1, width=4, coeff_depth=1)
    base.update(overrides)
    return SparseSRModel.initialize(ModelConfig(**base), seed=seed)


def test_save_load_save_is_byte_identical(tmp_path):
    model = small_model(seed=3)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, model, epoch=7, step=123)
    loaded, adam, meta = load_checkpoint(p1)
    assert adam is None
    assert meta == {"epoch": 7, "step": 123}
    save_checkpoint(p2, loaded, epoch=7, step=123)
    assert p1.read_bytes() == p2.read_bytes()


def test_parameters_restored_exactly(tmp_path):
    model = small_model(seed=4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    loaded, _, _ = load_checkpoint(path)
    assert set(loaded.params) == set(model.params)
    for name, t in model.params.items():
        np.testing.assert_array_equal(loaded.params[name].data, t.data)
        assert loaded.params[name].data.dtype == np.float32


def test_config_restored(tmp_path):
    model = small_model(seed=5, stochastic_atoms=True, cem_iters=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    loaded, _, _ = load_checkpoint(path)
    assert loaded.config == model.config


def test_adam_state_round_trip(tmp_path):
    model = small_model(seed=6)
    adam = AdamState.init(model.params, lr=3e-4)
    # Take one real step so the moment buffers are nonzero.
    loss = mean(square(model.params["basis.head.w"]))
    loss.backward()
    grads = {"basis.head.w": model.params["basis.head.w"].grad}
    for name, t in model.params.items():
        if t.grad is None:
            grads[name] = np.zeros_like(t.data)
    adam_step(model.params, grads, adam)

    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, adam=adam, epoch=1, step=1)
    loaded, adam2, meta = load_checkpoint(path)
    assert meta == {"epoch": 1, "step": 1}
    assert adam2 is not None
    assert adam2.lr == adam.lr
    assert adam2.step == adam.step
    for name in model.params:
        np.testing.assert_array_equal(adam2.m[name], adam.m[name])
        np.testing.assert_array_equal(adam2.v[name], adam.v[name])


def test_truncated_payload_raises(tmp_path):
    model = small_model(seed=7)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_trailing_garbage_raises(tmp_path):
    model = small_model(seed=7)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_wrong_magic_raises(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"NOT-A-CHECKPOINT v9\n[config]\n")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_tensor_shape_mismatch_raises(tmp_path):
    # Rewrite the declared width so the manifest no longer matches the
    # shapes implied by the config.
    model = small_model(seed=8)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    blob = path.read_bytes()
    head, _, tail = blob.partition(b"\n[data]\n")
    head = head.replace(b"width=4", b"width=8", 1)
    path.write_bytes(head + b"\n[data]\n" + tail)
    with pytest.raises((ConfigError, DataError)):
        load_checkpoint(path)


def test_missing_file_raises(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_float64_model_saved_as_float32(tmp_path):
    from sparsesr.numerics import precision

    with precision(np.float64):
        model = small_model(seed=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    loaded, _, _ = load_checkpoint(path)
    for t in loaded.params.values():
        assert t.data.dtype == np.float32
