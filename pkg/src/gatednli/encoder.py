"""Stacked bidirectional LSTM encoder with shortcut connections.

The encoder runs a forward and a backward LSTM over each sentence and
concatenates their states per position. Layers above the first receive the
word embeddings concatenated with the previous layer's hidden states. The
top layer's input, forget, and output gate activations are returned next to
the hidden states so that pooling can weight positions by gate norms.

All recurrence state is carried as (1, d) row vectors. Weight matrices are
stored input-side first, so a step computes row @ W rather than W @ column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

LSTM_INIT_SIGMA = 0.01
FORGET_BIAS = 1.0


@dataclass
class LstmParams:
    """One direction of one layer.

    w: (input_dim, 4d), u: (d, 4d), b: (4d,). The 4d axis holds the four
    gate blocks in the fixed order [input; forget; update; output].
    """

    w: Tensor
    u: Tensor
    b: Tensor

    @property
    def input_dim(self) -> int:
        return self.w.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.u.shape[0]


@dataclass
class CellGates:
    """Gate activations of a single LSTM step, each (1, d)."""

    i: Tensor
    f: Tensor
    o: Tensor


@dataclass
class EncodedSentence:
    """Top-layer states and gates for one sentence.

    h and each gate matrix are (n, 2d) with the forward direction in the
    first d columns. Rows at masked positions are all zeros. mask is the
    (n,) 0/1 array the encoder was called with.
    """

    h: Tensor
    gates_i: Tensor
    gates_f: Tensor
    gates_o: Tensor
    mask: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    @property
    def state_dim(self) -> int:
        return self.h.shape[1]


def init_lstm_params(input_dim: int, hidden_dim: int, rng) -> LstmParams:
    """Gaussian weights, zero biases except a +1 forget-gate bias."""
    d4 = 4 * hidden_dim
    w = rng.normal(0.0, LSTM_INIT_SIGMA, size=(input_dim, d4))
    u = rng.normal(0.0, LSTM_INIT_SIGMA, size=(hidden_dim, d4))
    b = np.zeros(d4)
    b[hidden_dim : 2 * hidden_dim] = FORGET_BIAS
    return LstmParams(
        w=Tensor(w, requires_grad=True),
        u=Tensor(u, requires_grad=True),
        b=Tensor(b, requires_grad=True),
    )


@dataclass
class EncoderParams:
    """Per-layer (forward, backward) LSTM parameters."""

    layers: list[tuple[LstmParams, LstmParams]]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden_dim(self) -> int:
        return self.layers[0][0].hidden_dim

    def named_tensors(self) -> dict[str, Tensor]:
        out = {}
        for k, (fwd, bwd) in enumerate(self.layers, start=1):
            for tag, p in (("fwd", fwd), ("bwd", bwd)):
                out[f"encoder.l{k}.{tag}.w"] = p.w
                out[f"encoder.l{k}.{tag}.u"] = p.u
                out[f"encoder.l{k}.{tag}.b"] = p.b
        return out


def init_encoder_params(
    embed_dim: int, hidden_dim: int, n_layers: int, rng
) -> EncoderParams:
    """Layer 1 reads embeddings; upper layers read [embedding; prev states]."""
    if n_layers < 1:
        raise ValueError(f"encoder needs at least 1 layer, got {n_layers}")
    layers = []
    for k in range(n_layers):
        input_dim = embed_dim if k == 0 else embed_dim + 2 * hidden_dim
        layers.append(
            (
                init_lstm_params(input_dim, hidden_dim, rng),
                init_lstm_params(input_dim, hidden_dim, rng),
            )
        )
    return EncoderParams(layers=layers)


def _split_gates(pre: Tensor, d: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    i = T.sigmoid(T.slice_axis(pre, 1, 0, d))
    f = T.sigmoid(T.slice_axis(pre, 1, d, 2 * d))
    u = T.tanh(T.slice_axis(pre, 1, 2 * d, 3 * d))
    o = T.sigmoid(T.slice_axis(pre, 1, 3 * d, 4 * d))
    return i, f, u, o


def lstm_cell(
    x_t: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams
) -> tuple[Tensor, Tensor, CellGates]:
    """One recurrence step: gates from x and h, then the state update."""
    pre = T.add(
        T.add(T.matmul(x_t, params.w), T.matmul(h_prev, params.u)), params.b
    )
    i, f, u, o = _split_gates(pre, params.hidden_dim)
    c_t = T.add(T.mul(f, c_prev), T.mul(i, u))
    h_t = T.mul(o, T.tanh(c_t))
    return h_t, c_t, CellGates(i=i, f=f, o=o)


def _scan(xs: Tensor, params: LstmParams, reverse: bool):
    """Run one direction over all rows of xs, states indexed by position.

    The input projection for every step is a single matmul; the recurrent
    projection stays inside the loop.
    """
    n = xs.shape[0]
    d = params.hidden_dim
    pre_x = T.add(T.matmul(xs, params.w), params.b)
    h = Tensor(np.zeros((1, d)))
    c = Tensor(np.zeros((1, d)))
    h_rows: list = [None] * n
    i_rows: list = [None] * n
    f_rows: list = [None] * n
    o_rows: list = [None] * n
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        pre = T.add(T.slice_axis(pre_x, 0, t, t + 1), T.matmul(h, params.u))
        i, f, u, o = _split_gates(pre, d)
        c = T.add(T.mul(f, c), T.mul(i, u))
        h = T.mul(o, T.tanh(c))
        h_rows[t] = h
        i_rows[t] = i
        f_rows[t] = f
        o_rows[t] = o
    return h_rows, i_rows, f_rows, o_rows


def valid_length(mask: np.ndarray) -> int:
    """Number of leading ones; padding must be a contiguous tail of zeros."""
    mask = np.asarray(mask)
    n_valid = int(mask.sum())
    if not (np.all(mask[:n_valid] == 1) and np.all(mask[n_valid:] == 0)):
        raise ValueError(f"mask must be ones followed by zeros, got {mask}")
    if n_valid == 0:
        raise ValueError("all positions are masked")
    return n_valid


def _pad_rows(m: Tensor, n_pad: int) -> Tensor:
    if n_pad == 0:
        return m
    zeros = Tensor(np.zeros((n_pad, m.shape[1])))
    return T.concat([m, zeros], axis=0)


def bilstm(
    inputs: Tensor,
    mask: np.ndarray,
    params_fwd: LstmParams,
    params_bwd: LstmParams,
) -> EncodedSentence:
    """Both directions over the valid prefix, concatenated per position.

    Rows at masked positions come out as zeros for the states and all three
    gate matrices, so downstream pooling can rely on zero contribution.
    """
    n = inputs.shape[0]
    if len(mask) != n:
        raise ValueError(f"mask length {len(mask)} != input rows {n}")
    n_valid = valid_length(mask)
    xs = inputs if n_valid == n else T.slice_axis(inputs, 0, 0, n_valid)
    f_h, f_i, f_f, f_o = _scan(xs, params_fwd, reverse=False)
    b_h, b_i, b_f, b_o = _scan(xs, params_bwd, reverse=True)

    def stack(fwd_rows, bwd_rows):
        both = T.concat(
            [T.concat(fwd_rows, axis=0), T.concat(bwd_rows, axis=0)], axis=1
        )
        return _pad_rows(both, n - n_valid)

    return EncodedSentence(
        h=stack(f_h, b_h),
        gates_i=stack(f_i, b_i),
        gates_f=stack(f_f, b_f),
        gates_o=stack(f_o, b_o),
        mask=np.asarray(mask),
    )


def stacked_encode(
    e: Tensor, mask: np.ndarray, params: EncoderParams
) -> EncodedSentence:
    """Stack of BiLSTMs; upper layers see [e; previous states].

    Only the top layer's gates survive in the result.
    """
    enc = None
    for k, (fwd, bwd) in enumerate(params.layers):
        layer_in = e if k == 0 else T.concat([e, enc.h], axis=1)
        enc = bilstm(layer_in, mask, fwd, bwd)
    return enc
