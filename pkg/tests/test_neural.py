import json
import struct

import numpy as np
import pytest

from mobipower.errors import CheckpointError
from mobipower.models import Activation
from mobipower.neural import (
    CHECKPOINT_MAGIC,
    Adam,
    MlpParams,
    checkpoint_load,
    checkpoint_save,
    mlp_backward,
    mlp_forward,
)


def _net(
    dims=(4, 6, 5, 2), seed=0, activation=Activation.TANH, output=Activation.IDENTITY
):
    rng = np.random.default_rng(seed)
    return MlpParams.initialize(list(dims), rng, activation, output)


def test_initialization_bounds():
    params = _net((100, 30, 1), activation=Activation.RELU)

    assert params.weights[0].shape == (100, 30)
    assert np.abs(params.weights[0]).max() <= 0.1
    assert np.abs(params.weights[1]).max() <= 1 / np.sqrt(30)
    assert params.parameter_count == 100 * 30 + 30 + 30 + 1


def test_forward_accepts_single_and_batched_inputs():
    params = _net()
    x = np.random.default_rng(1).normal(size=(3, 4))

    batched = mlp_forward(params, x)

    assert batched.shape == (3, 2)
    assert np.allclose(mlp_forward(params, x[1]), batched[1])


def test_forward_rejects_wrong_input_dimension():
    with pytest.raises(ValueError):
        mlp_forward(_net(), np.zeros(5))


def test_sigmoid_output_is_bounded():
    params = _net((3, 8, 1), output=Activation.SIGMOID)

    out = mlp_forward(params, np.random.default_rng(2).normal(scale=50, size=(100, 3)))

    assert ((out >= 0) & (out <= 1)).all()


@pytest.mark.parametrize("output", [Activation.IDENTITY, Activation.SIGMOID])
@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed, output):
    rng = np.random.default_rng(100 + seed)
    params = _net(seed=seed, output=output)
    x = rng.normal(size=(7, 4))
    upstream = rng.normal(size=(7, 2))

    gradients, input_gradient = mlp_backward(params, x, upstream)

    def objective():
        return float(np.sum(upstream * mlp_forward(params, x)))

    eps = 1e-6
    for p, g in zip(params.parameters(), gradients):
        numeric = np.zeros_like(p)
        for index in np.ndindex(p.shape):
            saved = p[index]
            p[index] = saved + eps
            plus = objective()
            p[index] = saved - eps
            minus = objective()
            p[index] = saved
            numeric[index] = (plus - minus) / (2 * eps)
        scale = max(np.linalg.norm(numeric) + np.linalg.norm(g), 1e-12)
        error = np.linalg.norm(numeric - g) / scale
        assert error < 1e-6

    numeric_input = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        shifted = x.copy()
        shifted[index] += eps
        plus = float(np.sum(upstream * mlp_forward(params, shifted)))
        shifted[index] -= 2 * eps
        minus = float(np.sum(upstream * mlp_forward(params, shifted)))
        numeric_input[index] = (plus - minus) / (2 * eps)
    assert np.allclose(input_gradient, numeric_input, atol=1e-6)


def test_backward_rejects_mismatched_upstream():
    with pytest.raises(ValueError):
        mlp_backward(_net(), np.zeros((3, 4)), np.zeros((3, 1)))


def test_adam_minimizes_a_quadratic():
    x = np.array([5.0, -4.0])
    optimizer = Adam(lr=0.01)

    for _ in range(3000):
        optimizer.step([x], [2 * (x - np.array([3.0, 1.0]))])

    assert x == pytest.approx([3.0, 1.0], abs=5e-2)


def test_copy_is_independent_and_assign_copies_values():
    params = _net()
    clone = params.copy()

    clone.weights[0][0, 0] += 1.0
    assert clone.weights[0][0, 0] != params.weights[0][0, 0]

    params.assign(clone)
    assert np.array_equal(params.flat(), clone.flat())
    assert params.weights[0] is not clone.weights[0]


def test_assign_rejects_other_shapes():
    with pytest.raises(ValueError):
        _net().assign(_net((4, 3, 2)))


def test_checkpoint_restores_parameters_and_metadata(tmp_path):
    params = _net((6, 5, 1), output=Activation.SIGMOID)
    path = tmp_path / "policy_ep1.ckpt"

    checkpoint_save(params, path, {"episode": 1})
    loaded, metadata = checkpoint_load(path, expected_layer_dims=[6, 5, 1])

    assert metadata == {"episode": 1}
    assert loaded.layer_dims == [6, 5, 1]
    assert loaded.activation == Activation.TANH
    assert loaded.output_activation == Activation.SIGMOID
    assert np.array_equal(loaded.flat(), params.flat())


def test_checkpoint_layout(tmp_path):
    params = _net((2, 1), output=Activation.SIGMOID)
    path = tmp_path / "tiny.ckpt"
    checkpoint_save(params, path)

    data = path.read_bytes()
    (length,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + length])

    assert data[:4] == CHECKPOINT_MAGIC
    assert header["format_version"] == 1
    assert header["parameter_count"] == 3
    assert np.array_equal(np.frombuffer(data[8 + length :], dtype="<f8"), params.flat())


def _corrupt(path, transform):
    path.write_bytes(transform(path.read_bytes()))


@pytest.mark.parametrize(
    "transform",
    [
        lambda data: b"XXXX" + data[4:],
        lambda data: data[:-8],
        lambda data: data[:6],
        lambda data: data[:8] + b"{" * (len(data) - 8),
        lambda data: data + b"\x00" * 8,
    ],
)
def test_corrupted_checkpoint_is_rejected(tmp_path, transform):
    path = tmp_path / "policy.ckpt"
    checkpoint_save(_net(), path)
    _corrupt(path, transform)

    with pytest.raises(CheckpointError):
        checkpoint_load(path)


def test_checkpoint_version_is_checked(tmp_path):
    path = tmp_path / "future.ckpt"
    header = json.dumps(
        {
            "format_version": 2,
            "layer_dims": [1, 1],
            "activation": "relu",
            "output_activation": "identity",
            "parameter_count": 2,
            "metadata": {},
        }
    ).encode()
    length = struct.pack("<I", len(header))
    path.write_bytes(CHECKPOINT_MAGIC + length + header + bytes(16))

    with pytest.raises(CheckpointError, match="version"):
        checkpoint_load(path)


def test_checkpoint_dimension_mismatch(tmp_path):
    path = tmp_path / "policy.ckpt"
    checkpoint_save(_net((56, 8, 1)), path)

    with pytest.raises(CheckpointError, match="layer_dims"):
        checkpoint_load(path, expected_layer_dims=[26, 8, 1])


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint_load(tmp_path / "nothing.ckpt")


def test_non_finite_checkpoint_is_rejected(tmp_path):
    params = _net((2, 1))
    params.biases[0][0] = np.nan
    path = tmp_path / "nan.ckpt"
    checkpoint_save(params, path)

    with pytest.raises(CheckpointError, match="non-finite"):
        checkpoint_load(path)
