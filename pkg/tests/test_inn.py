import math

import numpy as np
import pytest

from keystego import diffcore as dc
from keystego.diffcore import Tensor
from keystego.errors import ConfigError, ShapeError
from keystego.inn import (
    MAGIC,
    Model,
    ModelConfig,
    block_forward,
    block_inverse,
    checkpoint_bytes,
    decay_weight,
    load_checkpoint,
    model_forward,
    model_from_bytes,
    model_inverse,
    save_checkpoint,
)
from keystego.keying import identity_schedule, schedule_from_passphrase

from gradhelpers import block_errors, small_model, subnet_errors

SHAPE = (12, 8, 8)


def coeffs(rng, b=2):
    return Tensor(rng.normal(size=(b,) + SHAPE)), Tensor(rng.normal(size=(b,) + SHAPE))


def test_decay_weight_values():
    assert decay_weight(0, 0.6) == 1.0
    assert decay_weight(2, 0.6) == pytest.approx(0.36)
    assert decay_weight(15, 0.6) == pytest.approx(4.70185e-4, rel=1e-5)
    assert decay_weight(7, 1.0) == 1.0
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(ConfigError):
            decay_weight(1, bad)
    with pytest.raises(ConfigError):
        decay_weight(-1, 0.5)


def test_block_weights_follow_decay():
    m = Model(ModelConfig(n_blocks=4, decay_rate=0.5))
    assert [b.weight for b in m.blocks] == [1.0, 0.5, 0.25, 0.125]


def test_zero_initialised_block_with_identity_key(rng):
    # fresh subnets output zero: host untouched, secret scaled by exp(sigmoid(0)) = exp(0.5)
    m = Model(ModelConfig(n_blocks=1))
    key = identity_schedule(1, SHAPE)[0]
    x_h, x_s = coeffs(rng)
    out_h, out_s = block_forward(x_h, x_s, key, m.blocks[0])
    np.testing.assert_array_equal(out_h.data, x_h.data)
    np.testing.assert_allclose(out_s.data, x_s.data * math.exp(0.5), rtol=1e-6)
    back_h, back_s = block_inverse(out_h, out_s, key, m.blocks[0])
    np.testing.assert_allclose(back_s.data, x_s.data, rtol=1e-6, atol=1e-6)


def test_centered_scale_mode(rng):
    m = Model(ModelConfig(n_blocks=1, scale_mode="centered", centered_alpha=0.5))
    key = identity_schedule(1, SHAPE)[0]
    x_h, x_s = coeffs(rng)
    _, out_s = block_forward(x_h, x_s, key, m.blocks[0])
    np.testing.assert_allclose(out_s.data, x_s.data, rtol=1e-6)  # 0.5 * (2 * 0.5 - 1) = 0


def test_zero_initialised_block_with_key(rng):
    m = Model(ModelConfig(n_blocks=1))
    key = schedule_from_passphrase("k", 1, SHAPE)[0]
    x_h, x_s = coeffs(rng)
    from keystego.keying import encode_array
    _, out_s = block_forward(x_h, x_s, key, m.blocks[0])
    np.testing.assert_allclose(out_s.data, encode_array(x_s.data, key) * math.exp(0.5), rtol=1e-6)


@pytest.mark.parametrize("n_blocks,r", [(1, 1.0), (3, 0.7)])
def test_round_trip_random_params(rng, n_blocks, r):
    m = Model(ModelConfig(n_blocks=n_blocks, decay_rate=r), seed=3).randomize(3, 0.05)
    sched = schedule_from_passphrase("pass", n_blocks, SHAPE)
    x_h, x_s = coeffs(rng)
    c, missing = model_forward(x_h, x_s, sched, m)
    h, s = model_inverse(c, missing, sched, m)
    assert np.max(np.abs(h.data - x_h.data)) < 1e-4
    assert np.max(np.abs(s.data - x_s.data)) < 1e-4


def test_wrong_key_breaks_round_trip(rng):
    m = Model(ModelConfig(n_blocks=2), seed=1).randomize(1, 0.05)
    right = schedule_from_passphrase("right", 2, SHAPE)
    wrong = schedule_from_passphrase("wrong", 2, SHAPE)
    x_h, x_s = coeffs(rng)
    c, missing = model_forward(x_h, x_s, right, m)
    _, s = model_inverse(c, missing, wrong, m)
    assert np.mean(np.abs(s.data - x_s.data)) > 0.5


def test_unkeyed_model_ignores_key(rng):
    m = Model(ModelConfig(n_blocks=2, keyed=False), seed=1).randomize(1, 0.05)
    x_h, x_s = coeffs(rng)
    a, _ = model_forward(x_h, x_s, schedule_from_passphrase("a", 2, SHAPE), m)
    b, _ = model_forward(x_h, x_s, identity_schedule(2, SHAPE), m)
    np.testing.assert_array_equal(a.data, b.data)


def test_schedule_length_mismatch(rng):
    m = Model(ModelConfig(n_blocks=3))
    x_h, x_s = coeffs(rng)
    with pytest.raises(ConfigError):
        model_forward(x_h, x_s, identity_schedule(2, SHAPE), m)
    with pytest.raises(ShapeError):
        model_inverse(x_h, Tensor(np.zeros((1,) + SHAPE)), identity_schedule(3, SHAPE), m)


def test_trace_collects_every_state(rng):
    m = Model(ModelConfig(n_blocks=3))
    x_h, x_s = coeffs(rng)
    trace = []
    model_forward(x_h, x_s, identity_schedule(3, SHAPE), m, trace=trace)
    assert len(trace) == 4 and trace[0] is x_s


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(n_blocks=0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(mean=[0.5]).validate()
    with pytest.raises(ConfigError):
        ModelConfig(preprocess="whiten").validate()


def test_parameter_names():
    m = Model(ModelConfig(n_blocks=2, layers=3))
    assert "block1.g.conv2.weight" in m.params
    assert len(m.params) == 2 * 3 * 3 * 2


def test_checkpoint_round_trip_is_byte_exact(tmp_path):
    m = Model(ModelConfig(n_blocks=2, decay_rate=0.8), seed=5).randomize(5)
    blob = checkpoint_bytes(m)
    assert blob.startswith(MAGIC)
    again = model_from_bytes(blob)
    assert checkpoint_bytes(again) == blob
    assert again.config == m.config
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    assert path.read_bytes() == blob
    assert checkpoint_bytes(load_checkpoint(path)) == blob


def test_checkpoint_rejects_garbage(tmp_path):
    from keystego.errors import KeystegoError
    with pytest.raises(KeystegoError):
        model_from_bytes(b"not a checkpoint at all")
    blob = checkpoint_bytes(Model(ModelConfig(n_blocks=1)))
    with pytest.raises(KeystegoError):
        model_from_bytes(blob[:-4])


def test_subnet_gradients(rng):
    m = small_model()
    for name in ("f", "g", "h"):
        assert max(subnet_errors(m.blocks[0].subnets[name], rng)) < 1e-3, name


def test_block_gradients(rng):
    assert max(block_errors(small_model(decay_rate=0.6), rng)) < 1e-3


def test_gradient_reaches_every_parameter(rng):
    m = small_model()
    sched = schedule_from_passphrase("g", 2, (4, 4, 4), 2)
    x = Tensor(rng.normal(size=(1, 4, 4, 4)))
    with dc.recording():
        c, s = model_forward(x, x, sched, m)
        dc.backward(dc.add(dc.sum(dc.square(c)), dc.sum(dc.square(s))), m.params)
    assert all(np.any(p.grad != 0) for p in m.params.values())
