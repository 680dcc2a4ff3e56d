"""Recurrent cells and basic layers.

Two cell kinds: the plain recurrent unit h = f(W x + W_r h_prev + b), and
the single-gate memory cell whose sigmoid gate interpolates between a
candidate input and the previous cell state. The gate cell keeps its
forward and recurrent connections stacked in single matrices (input-unit
block on top, gate block below) so rank reduction treats them as one.

All step functions accept either a single vector (D,) or a batch (B, D).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TANH = "tanh"
SIGMOID = "sigmoid"
IDENTITY = "identity"
RELU = "relu"
ACTIVATIONS = (TANH, SIGMOID, IDENTITY, RELU)


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == TANH:
        return np.tanh(z)
    if kind == SIGMOID:
        return 1.0 / (1.0 + np.exp(-z))
    if kind == IDENTITY:
        return z
    if kind == RELU:
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(kind: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact derivative dy/dz, using whichever of z or y is cheaper."""
    if kind == TANH:
        return 1.0 - y * y
    if kind == SIGMOID:
        return y * (1.0 - y)
    if kind == IDENTITY:
        return np.ones_like(z)
    if kind == RELU:
        return (z > 0.0).astype(np.float64)
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    return activate(SIGMOID, z)


def _check_dim(name: str, got: int, want: int) -> None:
    if got != want:
        raise ValueError(f"{name}: expected dim {want}, got {got}")


@dataclass
class RnnLayer:
    """h = f(w @ x + wr @ h_prev + bias)."""

    w: np.ndarray       # (hidden, input)
    wr: np.ndarray      # (hidden, hidden)
    bias: np.ndarray    # (hidden,)
    activation: str = TANH

    def __post_init__(self):
        h = self.w.shape[0]
        if self.wr.shape != (h, h):
            raise ValueError(f"recurrent matrix must be {h}x{h}, got {self.wr.shape}")
        if self.bias.shape != (h,):
            raise ValueError(f"bias must have length {h}")

    @property
    def hidden(self) -> int:
        return self.w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w.shape[1]


@dataclass
class MgruLayer:
    """Single-gate memory cell; wf and wr stack the input-unit block over the gate block.

    a_c = sigmoid(gate block), a_i = f(input block),
    s = a_c * a_i + (1 - a_c) * s_prev.
    The gate always goes through the sigmoid regardless of input_activation.
    """

    wf: np.ndarray       # (2*hidden, input)
    wr: np.ndarray       # (2*hidden, hidden)
    bias: np.ndarray     # (2*hidden,)
    input_activation: str = TANH

    def __post_init__(self):
        rows = self.wf.shape[0]
        if rows % 2 != 0:
            raise ValueError("stacked matrices must have an even row count")
        h = rows // 2
        if self.wr.shape != (rows, h):
            raise ValueError(f"recurrent matrix must be {rows}x{h}, got {self.wr.shape}")
        if self.bias.shape != (rows,):
            raise ValueError(f"bias must have length {rows}")

    @property
    def hidden(self) -> int:
        return self.wf.shape[0] // 2

    @property
    def input_dim(self) -> int:
        return self.wf.shape[1]


@dataclass
class DenseLayer:
    w: np.ndarray       # (out, in)
    bias: np.ndarray    # (out,)
    activation: str = IDENTITY

    def __post_init__(self):
        if self.bias.shape != (self.w.shape[0],):
            raise ValueError("bias length must match output rows")

    def apply(self, x: np.ndarray) -> np.ndarray:
        return activate(self.activation, x @ self.w.T + self.bias)


@dataclass
class Embedding:
    """Row-lookup table, (vocab, embed_dim); no activation."""

    table: np.ndarray

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if np.any(ids < 0) or np.any(ids >= self.table.shape[0]):
            raise ValueError("token id out of range")
        return self.table[ids]


def rnn_step(layer: RnnLayer, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    _check_dim("x", x.shape[-1], layer.input_dim)
    _check_dim("h_prev", h_prev.shape[-1], layer.hidden)
    z = x @ layer.w.T + h_prev @ layer.wr.T + layer.bias
    return activate(layer.activation, z)


def mgru_step(layer: MgruLayer, x: np.ndarray, s_prev: np.ndarray):
    """One gated step; returns (s, a_c, a_i) so the gates can be inspected."""
    x = np.asarray(x, dtype=np.float64)
    s_prev = np.asarray(s_prev, dtype=np.float64)
    _check_dim("x", x.shape[-1], layer.input_dim)
    _check_dim("s_prev", s_prev.shape[-1], layer.hidden)
    h = layer.hidden
    z = x @ layer.wf.T + s_prev @ layer.wr.T + layer.bias
    a_i = activate(layer.input_activation, z[..., :h])
    a_c = sigmoid(z[..., h:])
    s = a_c * a_i + (1.0 - a_c) * s_prev
    return s, a_c, a_i


def forward_sequence(layer, inputs, initial=None):
    """Unroll a cell over a sequence of input vectors.

    inputs: (T, D) or (T, B, D). Returns (outputs, states) where states
    includes the initial state at index 0 and outputs == states[1:].
    """
    xs = np.asarray(inputs, dtype=np.float64)
    if xs.shape[0] < 1:
        raise ValueError("sequence must be non-empty")
    lead = xs.shape[1:-1]
    h = layer.hidden
    state = np.zeros(lead + (h,)) if initial is None else np.asarray(initial, dtype=np.float64)
    states = [state]
    for t in range(xs.shape[0]):
        if isinstance(layer, MgruLayer):
            state, _, _ = mgru_step(layer, xs[t], state)
        else:
            state = rnn_step(layer, xs[t], state)
        states.append(state)
    states = np.stack(states)
    return states[1:], states
