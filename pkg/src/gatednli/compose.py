"""Fixed-length sentence vectors from encoded states.

Three pools over the valid positions of an encoded sentence: an attention
pool whose position weights are the l2 norms of a chosen gate's activations,
an average pool, and a coordinatewise max pool. Their concatenation in the
fixed order [gated; average; max] is the sentence vector handed to the
classifier.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import tensor as T
from .encoder import EncodedSentence
from .tensor import Tensor

WEIGHT_EPS = 1e-12


class GateKind(Enum):
    INPUT = "input"
    FORGET = "forget"
    OUTPUT = "output"


@dataclass
class SentenceVector:
    """Pool outputs for one sentence, each a (1, 2d) row; v concatenates
    them. v_g is None when the attention pool is ablated away."""

    v_g: Optional[Tensor]
    v_a: Tensor
    v_m: Tensor
    v: Tensor


def _valid_rows(m: Tensor, n_valid: int) -> Tensor:
    if n_valid == m.shape[0]:
        return m
    return T.slice_axis(m, 0, 0, n_valid)


def _gate_scores(enc: EncodedSentence, kind: GateKind) -> Tensor:
    """The vectors whose norms weight each position, valid rows only.

    The forget variant scores a position by how much its forget gate lets
    go, so it uses the elementwise complement 1 - f.
    """
    n = enc.n_valid
    if kind is GateKind.INPUT:
        return _valid_rows(enc.gates_i, n)
    if kind is GateKind.OUTPUT:
        return _valid_rows(enc.gates_o, n)
    f = _valid_rows(enc.gates_f, n)
    ones = Tensor(np.ones(f.shape))
    return T.sub(ones, f)


def _attention_weights(enc: EncodedSentence, kind: GateKind) -> Tensor:
    """Normalized per-position weights, (n_valid, 1).

    Positions whose gate norms all vanish get uniform weights; that branch
    carries no gradient into the gates.
    """
    scores = _gate_scores(enc, kind)
    norms = T.l2norm(scores, axis=1, keepdims=True)
    denom = T.sum_axis(norms, axis=0, keepdims=True)
    if float(denom.data.reshape(())) < WEIGHT_EPS:
        n = enc.n_valid
        return Tensor(np.full((n, 1), 1.0 / n))
    return T.div(norms, denom)


def attention_weights(enc: EncodedSentence, kind: GateKind) -> np.ndarray:
    """Full-length weight vector; masked positions are exactly zero."""
    w = _attention_weights(enc, kind).data.reshape(-1)
    out = np.zeros(len(enc.mask))
    out[: enc.n_valid] = w
    return out


def gated_attention_pool(enc: EncodedSentence, kind: GateKind) -> Tensor:
    """Weighted sum of hidden states, weights from gate norms."""
    weights = _attention_weights(enc, kind)
    h = _valid_rows(enc.h, enc.n_valid)
    return T.sum_axis(T.mul(weights, h), axis=0, keepdims=True)


def avg_pool(enc: EncodedSentence) -> Tensor:
    """Mean of hidden states over valid positions."""
    h = _valid_rows(enc.h, enc.n_valid)
    return T.div(T.sum_axis(h, axis=0, keepdims=True), float(enc.n_valid))


def max_pool(enc: EncodedSentence) -> Tensor:
    """Coordinatewise max of hidden states over valid positions."""
    h = _valid_rows(enc.h, enc.n_valid)
    return T.max_axis(h, axis=0, keepdims=True)


def compose(
    enc: EncodedSentence, kind: GateKind, use_gated: bool = True
) -> SentenceVector:
    """All pools concatenated; without the attention pool, v = [v_a; v_m]."""
    v_a = avg_pool(enc)
    v_m = max_pool(enc)
    if not use_gated:
        return SentenceVector(
            v_g=None, v_a=v_a, v_m=v_m, v=T.concat([v_a, v_m], axis=1)
        )
    v_g = gated_attention_pool(enc, kind)
    return SentenceVector(
        v_g=v_g, v_a=v_a, v_m=v_m, v=T.concat([v_g, v_a, v_m], axis=1)
    )
