import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

from socialav.error_handler import CheckpointError, ShapeError, ValidationError
from socialav.nn import (
    GRU,
    MLP,
    Adam,
    AdamConfig,
    GRUCell,
    Linear,
    MultiHeadAttention,
    Parameter,
    Tensor,
    adam_step,
    grad_check,
    load_checkpoint,
    load_into,
    save_checkpoint,
    square,
    tsum,
)
from socialav.nn.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def test_linear_init_bounds_and_zero_bias():
    layer = Linear(16, 8, np.random.default_rng(0))
    assert np.all(np.abs(layer.weight.data) <= 1.0 / math.sqrt(16))
    assert np.all(layer.bias.data == 0.0)
    assert layer.weight.dtype == np.float32


def test_linear_rejects_wrong_width():
    with pytest.raises(ShapeError):
        Linear(4, 2, np.random.default_rng(0))(Tensor(np.ones((3, 5))))


def test_linear_gradient():
    rng = np.random.default_rng(1)
    layer = Linear(5, 4, rng).astype(np.float64)
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True, dtype=np.float64)
    assert grad_check(lambda: tsum(square(layer(x))), [x, *layer.parameters()]) < 1e-4


def test_gru_cell_with_zero_weights_halves_the_state():
    cell = GRUCell(3, 4, np.random.default_rng(0)).zero_()
    h = Tensor(np.array([[1.0, -2.0, 0.5, 4.0]], dtype=np.float32))
    out, z = cell(Tensor(np.ones((1, 3), dtype=np.float32)), h)
    np.testing.assert_array_equal(out.data, 0.5 * h.data)
    np.testing.assert_array_equal(z.data, np.full((1, 4), 0.5, dtype=np.float32))

    zero_state, _ = cell(Tensor(np.ones((1, 3), dtype=np.float32)), Tensor(np.zeros((1, 4), dtype=np.float32)))
    assert np.all(zero_state.data == 0.0)


def test_gru_gradient_over_five_steps():
    rng = np.random.default_rng(2)
    gru = GRU(3, 6, rng).astype(np.float64)
    x = Tensor(rng.standard_normal((2, 5, 3)), requires_grad=True, dtype=np.float64)

    def fn():
        hs, _ = gru(x)
        return tsum(square(hs[-1]))

    assert grad_check(fn, [x, *gru.parameters()], h=1e-5) < 1e-4


def test_gru_rejects_mismatched_hidden_state():
    cell = GRUCell(3, 4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        cell(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 5))))


def test_attention_single_row_gets_all_weight():
    att = MultiHeadAttention(4, 8, 2, 3, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).standard_normal((1, 5, 4)).astype(np.float32))
    mask = np.array([[True, False, False, False, False]])
    _, weights = att(x, mask)
    np.testing.assert_allclose(weights[0, :, 0], 1.0)
    assert np.all(weights[0, :, 1:] == 0.0)


def test_attention_identical_rows_give_uniform_weights():
    att = MultiHeadAttention(4, 8, 2, 3, np.random.default_rng(0))
    row = np.random.default_rng(1).standard_normal(4)
    x = Tensor(np.tile(row, (1, 5, 1)).astype(np.float32))
    mask = np.array([[True, True, True, False, True]])
    _, weights = att(x, mask)
    np.testing.assert_allclose(weights[0, :, mask[0]].T, 0.25, atol=1e-6)
    assert np.all(weights[0, :, 3] == 0.0)


def test_attention_matches_dense_formula():
    rng = np.random.default_rng(4)
    att = MultiHeadAttention(6, 8, 2, 5, rng).astype(np.float64)
    x = rng.standard_normal((3, 4, 6))
    mask = np.array([[True, True, True, True], [True, False, True, False], [True, False, False, False]])
    out, _ = att(Tensor(x, dtype=np.float64), mask)

    expected = np.zeros((3, 5))
    d = 4
    for b in range(3):
        rows = x[b][mask[b]]
        for m in range(2):
            q = x[b, 0] @ att.query[m].weight.data
            k = rows @ att.key[m].weight.data
            v = rows @ att.value[m].weight.data
            w = _softmax(k @ q / math.sqrt(d))
            expected[b] += (w @ v) @ att.proj[m].weight.data + att.proj[m].bias.data
    np.testing.assert_allclose(out.data, expected, atol=1e-6)


def test_attention_never_masks_the_ego_row():
    att = MultiHeadAttention(4, 8, 2, 3, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        att(Tensor(np.ones((1, 3, 4))), np.array([[False, True, True]]))


def test_attention_heads_must_divide_width():
    with pytest.raises(ShapeError):
        MultiHeadAttention(4, 9, 2, 3, np.random.default_rng(0))


def test_mlp_output_width():
    mlp = MLP(4, [8, 6], np.random.default_rng(0))
    assert mlp(Tensor(np.ones((2, 4)))).shape == (2, 6)
    assert mlp.out_features == 6


def test_named_parameters_are_unique():
    att = MultiHeadAttention(4, 8, 2, 3, np.random.default_rng(0))
    names = [name for name, _ in att.named_parameters()]
    assert len(names) == len(set(names))
    assert "query.0.weight" in names
    assert "proj.1.bias" in names


# -- Adam ------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameters():
    p = Parameter(np.array([1.0, -2.0]))
    before = p.data.copy()
    adam_step([p], AdamConfig(lr=0.1), 1)
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_moves_by_learning_rate():
    p = Parameter(np.array([0.0]), dtype=np.float64)
    p.grad = np.array([3.7])
    adam_step([p], AdamConfig(lr=0.01), 1)
    assert p.data[0] == pytest.approx(-0.01, rel=1e-6)
    assert np.all(p.grad == 0.0)


def test_adam_minimizes_a_quadratic():
    w = Parameter(np.array([0.0]), dtype=np.float64)
    opt = Adam([w], lr=0.05)
    for _ in range(200):
        tsum(square(w - 3.0)).backward()
        opt.step()
    assert abs(w.data[0] - 3.0) < 0.1


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    att = MultiHeadAttention(4, 8, 2, 3, rng)
    path = tmp_path / "att.nnckpt"
    save_checkpoint(str(path), att)

    restored = load_into(MultiHeadAttention(4, 8, 2, 3, np.random.default_rng(99)), str(path))
    for (name, a), (_, b) in zip(att.named_parameters(), restored.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes(), name


def test_checkpoint_bytes_are_deterministic():
    arrays = {"b": np.ones((2, 2), dtype=np.float32), "a": np.arange(3, dtype=np.float32)}
    blob = encode_checkpoint(arrays)
    assert blob.startswith(MAGIC)
    assert blob == encode_checkpoint(dict(arrays))
    decoded = decode_checkpoint(blob)
    assert list(decoded) == ["b", "a"]
    np.testing.assert_array_equal(decoded["a"], arrays["a"])


def test_bad_checkpoints_raise(tmp_path):
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"not a checkpoint")
    blob = encode_checkpoint({"w": np.ones(10, dtype=np.float32)})
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "missing.nnckpt"))


def test_loading_into_a_different_architecture_fails(tmp_path):
    path = tmp_path / "linear.nnckpt"
    save_checkpoint(str(path), Linear(4, 3, np.random.default_rng(0)))
    with pytest.raises(CheckpointError):
        load_into(Linear(4, 5, np.random.default_rng(0)), str(path))
    with pytest.raises(CheckpointError):
        load_into(MLP(4, [3], np.random.default_rng(0)), str(path))
