"""
Multilayer perceptrons on numpy with hand-written reverse mode, an Adam optimizer
and a self-describing checkpoint format.

Checkpoint byte layout (all integers little-endian):

    offset 0   4 bytes   magic b"MPCK"
    offset 4   4 bytes   uint32 header length L
    offset 8   L bytes   UTF-8 JSON header:
                         {"format_version": 1, "layer_dims": [...],
                          "activation": "relu", "output_activation": "sigmoid",
                          "parameter_count": P, "metadata": {...}}
    offset 8+L P*8 bytes float64 ('<f8') parameters, layer by layer: the weight
                         matrix (fan_in x fan_out, row-major) then the bias vector.
"""
import json
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from mobipower.errors import CheckpointError
from mobipower.models import Activation

CHECKPOINT_MAGIC = b"MPCK"
CHECKPOINT_VERSION = 1


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind == Activation.RELU:
        return np.maximum(z, 0)
    if kind == Activation.TANH:
        return np.tanh(z)
    if kind == Activation.SIGMOID:
        return expit(z)
    return z


def _derivative(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == Activation.RELU:
        return (z > 0).astype(float)
    if kind == Activation.TANH:
        return 1 - a**2
    if kind == Activation.SIGMOID:
        return a * (1 - a)
    return np.ones_like(z)


class MlpParams:
    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: Activation
    output_activation: Activation

    def __init__(
        self,
        layer_dims: Sequence[int],
        weights: List[np.ndarray],
        biases: List[np.ndarray],
        activation: Activation = Activation.RELU,
        output_activation: Activation = Activation.IDENTITY,
    ):
        self.layer_dims = list(layer_dims)
        self.weights = weights
        self.biases = biases
        self.activation = activation
        self.output_activation = output_activation

        if len(weights) != len(self.layer_dims) - 1 or len(biases) != len(weights):
            raise ValueError("one weight matrix and one bias vector per layer expected")
        for i, (w, b) in enumerate(zip(weights, biases)):
            expected = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ValueError(
                    f"layer {i}: expected {expected}, got {w.shape} and {b.shape}"
                )

    @classmethod
    def initialize(
        cls,
        layer_dims: Sequence[int],
        rng: np.random.Generator,
        activation: Activation = Activation.RELU,
        output_activation: Activation = Activation.IDENTITY,
    ) -> "MlpParams":
        """
        Symmetric uniform initialization in +-1/sqrt(fan_in).
        """
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, fan_out))
        return cls(layer_dims, weights, biases, activation, output_activation)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.output_activation,
        )

    def assign(self, other: "MlpParams"):
        """
        Hard copy of `other`'s values into this network's arrays.
        """
        if other.layer_dims != self.layer_dims:
            raise ValueError(f"cannot assign {other.layer_dims} to {self.layer_dims}")
        for mine, theirs in zip(self.parameters(), other.parameters()):
            mine[...] = theirs

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def load_flat(self, vector: np.ndarray):
        offset = 0
        for p in self.parameters():
            p[...] = vector[offset : offset + p.size].reshape(p.shape)
            offset += p.size

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


def _as_batch(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ValueError(
            f"input dimension {x.shape} does not match layer_dims[0]={params.input_dim}"
        )
    return batch, single


def _forward_cache(params: MlpParams, batch: np.ndarray):
    inputs, pre_activations = [], []
    a = batch
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w + b
        pre_activations.append(z)
        a = _activate(params.output_activation if i == last else params.activation, z)
    return inputs, pre_activations, a


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    batch, single = _as_batch(params, x)
    _, _, out = _forward_cache(params, batch)
    return out[0] if single else out


def mlp_backward(
    params: MlpParams, x: np.ndarray, upstream: np.ndarray
) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Reverse-mode gradients of sum(upstream * forward(x)).

    Returns the parameter gradients in `params.parameters()` order (summed over the
    batch) and the gradient with respect to the input.
    """
    batch, single = _as_batch(params, x)
    upstream = np.asarray(upstream, dtype=float)
    delta = upstream[None, :] if upstream.ndim == 1 else upstream
    if delta.shape != (batch.shape[0], params.output_dim):
        raise ValueError(
            f"upstream gradient {upstream.shape} does not match output "
            f"({batch.shape[0]}, {params.output_dim})"
        )

    inputs, pre_activations, out = _forward_cache(params, batch)
    last = len(params.weights) - 1
    gradients: List[np.ndarray] = [None] * (2 * len(params.weights))

    a = out
    for i in range(last, -1, -1):
        kind = params.output_activation if i == last else params.activation
        delta = delta * _derivative(kind, pre_activations[i], a)
        gradients[2 * i] = inputs[i].T @ delta
        gradients[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        a = inputs[i]

    return gradients, (delta[0] if single else delta)


class Adam:
    lr: float
    beta1: float
    beta2: float
    eps: float

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Optional[List[np.ndarray]] = None
        self.v: Optional[List[np.ndarray]] = None

    def step(self, parameters: List[np.ndarray], gradients: List[np.ndarray]):
        """
        One descent step, in place. Pass negated gradients to ascend.
        """
        if self.m is None:
            self.m = [np.zeros_like(p) for p in parameters]
            self.v = [np.zeros_like(p) for p in parameters]

        self.t += 1
        correction1 = 1 - self.beta1**self.t
        correction2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(parameters, gradients, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g**2
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def checkpoint_save(
    params: MlpParams, path: Union[str, Path], metadata: Optional[Dict] = None
):
    header = json.dumps(
        {
            "format_version": CHECKPOINT_VERSION,
            "layer_dims": params.layer_dims,
            "activation": params.activation.value,
            "output_activation": params.output_activation.value,
            "parameter_count": params.parameter_count,
            "metadata": metadata or {},
        },
        sort_keys=True,
    ).encode("utf-8")

    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(params.flat().astype("<f8").tobytes())


def checkpoint_load(
    path: Union[str, Path], expected_layer_dims: Optional[Sequence[int]] = None
) -> Tuple[MlpParams, Dict]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")

    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")

    (header_length,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + header_length:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[8 : 8 + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: malformed header")

    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} is not supported"
        )

    try:
        layer_dims = [int(d) for d in header["layer_dims"]]
        activation = Activation(header["activation"])
        output_activation = Activation(header["output_activation"])
        count = int(header["parameter_count"])
    except (KeyError, TypeError, ValueError):
        raise CheckpointError(f"{path}: incomplete header")

    if expected_layer_dims is not None and list(expected_layer_dims) != layer_dims:
        raise CheckpointError(
            f"{path}: layer_dims {layer_dims} do not match {list(expected_layer_dims)}"
        )

    payload = data[8 + header_length :]
    if len(payload) != 8 * count:
        raise CheckpointError(
            f"{path}: expected {8 * count} payload bytes, found {len(payload)}"
        )

    params = MlpParams(
        layer_dims,
        [np.zeros((i, o)) for i, o in zip(layer_dims[:-1], layer_dims[1:])],
        [np.zeros(o) for o in layer_dims[1:]],
        activation,
        output_activation,
    )
    if params.parameter_count != count:
        raise CheckpointError(
            f"{path}: parameter_count {count} inconsistent with layer_dims {layer_dims}"
        )
    params.load_flat(np.frombuffer(payload, dtype="<f8").astype(float))
    if not params.is_finite():
        raise CheckpointError(f"{path}: non-finite parameters")

    return params, header["metadata"]
