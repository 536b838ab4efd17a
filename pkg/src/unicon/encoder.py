"""Dense encoder with unit-sphere projection and exact backpropagation.

Layers are affine maps ``h @ W.T + b``; every layer but the last is
followed by the activation. The last layer is the projection head, its
output is divided by its Euclidean norm. The input to the projection head
is the representation used by the linear probe.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateEmbeddingError, UniconError

ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_MAGIC = b"UNICKPT1"


class CheckpointError(UniconError, ValueError):
    pass


@dataclass
class EncoderParams:
    weights: list
    biases: list
    activation: str = "relu"
    seed: int | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not self.weights or len(self.weights) != len(self.biases):
            raise ConfigError("need one bias per weight matrix and at least one layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigError(f"layer {l}: bias shape {b.shape} does not match weight {w.shape}")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ConfigError(f"layer {l}: input width {w.shape[1]} does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigError(f"layer {l}: non-finite parameters")

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def arrays(self):
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def names(self):
        out = []
        for l in range(len(self.weights)):
            out += [f"W{l}", f"b{l}"]
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        total = sum(a.size for a in self.arrays())
        if vector.shape != (total,):
            raise ConfigError(f"expected {total} parameters, got shape {vector.shape}")
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(vector[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return EncoderParams(arrays[0::2], arrays[1::2], self.activation, self.seed)

    def copy(self):
        return EncoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                             self.activation, self.seed)


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    raw: np.ndarray | None = None
    norms: np.ndarray | None = None
    embeddings: np.ndarray | None = None

    @property
    def representation(self):
        """Input to the projection head (penultimate activations)."""
        return self.post[-1] if self.post else self.inputs


def init(widths, activation="relu", seed=0) -> EncoderParams:
    """Glorot-uniform weights in ``+-sqrt(6 / (fan_in + fan_out))``, zero biases."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ConfigError("widths need an input and at least one output width, all positive")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights, biases, activation, seed)


def _act(kind, x):
    return np.maximum(x, 0.0) if kind == "relu" else np.tanh(x)


def _act_grad(kind, pre, post):
    return (pre > 0).astype(np.float64) if kind == "relu" else 1.0 - post * post


def forward(params: EncoderParams, inputs):
    """Embed rows of ``inputs``; returns ``(embeddings, trace)``."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[1]:
        raise ConfigError(f"input shape {x.shape} does not match first layer {params.weights[0].shape}")
    trace = ForwardTrace(inputs=x)
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w.T + b
        trace.pre.append(a)
        if l < last:
            h = _act(params.activation, a)
            trace.post.append(h)
        else:
            h = a
    norms = np.sqrt(np.einsum("ij,ij->i", h, h))
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError("encoder output has zero norm; cannot project to the sphere")
    trace.raw = h
    trace.norms = norms
    trace.embeddings = h / norms[:, None]
    return trace.embeddings, trace


def representations(params: EncoderParams, inputs):
    """Penultimate activations without projection (used by the linear probe)."""
    h = np.asarray(inputs, dtype=np.float64)
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = _act(params.activation, h @ w.T + b)
    return h


def backward(params: EncoderParams, trace: ForwardTrace, grad_embeddings, input_grad=False):
    """Reverse-mode gradients of a scalar w.r.t. weights and biases.

    ``grad_embeddings`` is the gradient w.r.t. the normalized embeddings.
    Returns ``(grad_weights, grad_biases)`` and, when ``input_grad`` is
    set, the gradient w.r.t. the inputs as a third element.
    """
    g = np.asarray(grad_embeddings, dtype=np.float64)
    z = trace.embeddings
    if g.shape != z.shape:
        raise ConfigError(f"gradient shape {g.shape} does not match embeddings {z.shape}")
    # Jacobian of v / |v| is (I - z z^T) / |v|
    radial = np.einsum("ij,ij->i", g, z)
    g = (g - z * radial[:, None]) / trace.norms[:, None]

    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        if l < n_layers - 1:
            g = g * _act_grad(params.activation, trace.pre[l], trace.post[l])
        h_in = trace.post[l - 1] if l > 0 else trace.inputs
        gw[l] = g.T @ h_in
        gb[l] = g.sum(axis=0)
        if l > 0 or input_grad:
            g = g @ params.weights[l]
    if input_grad:
        return gw, gb, g
    return gw, gb


def save_checkpoint(params: EncoderParams, path, epoch=None, extra=None):
    """JSON header plus flat little-endian float64 payload.

    Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
    header, then all parameters in :meth:`EncoderParams.arrays` order.
    """
    header = {
        "widths": params.widths,
        "activation": params.activation,
        "seed": params.seed,
        "epoch": epoch,
        "dtype": "<f8",
        "count": int(sum(a.size for a in params.arrays())),
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = params.flat().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path):
    """Return ``(params, header)``; validates magic, shape chain and payload size."""
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (length,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + length].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    widths = header.get("widths")
    if not isinstance(widths, list) or len(widths) < 2 or any(int(w) < 1 for w in widths):
        raise CheckpointError(f"{path}: invalid widths {widths!r}")
    expected = sum(o * i + o for i, o in zip(widths[:-1], widths[1:]))
    payload = np.frombuffer(data[16 + length:], dtype="<f8")
    if payload.size != expected or header.get("count", expected) != expected:
        raise CheckpointError(f"{path}: payload has {payload.size} values, widths imply {expected}")
    template = init(widths, header.get("activation", "relu"), 0)
    params = template.with_flat(payload.astype(np.float64))
    params.seed = header.get("seed")
    return params, header
