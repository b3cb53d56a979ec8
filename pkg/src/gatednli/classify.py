"""Matching features over a sentence-vector pair and the MLP classifier.

The pair (premise vector, hypothesis vector) is expanded into matching
features, pushed through two ReLU hidden layers, and read out by a softmax
over the three relation classes. Hidden layers after the first see the
original feature vector next to the previous hidden activations, echoing
the encoder's shortcut wiring; a flag drops that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

N_CLASSES = 3
PROB_FLOOR = 1e-12


@dataclass
class ClassifierParams:
    """Two hidden layers plus the output layer.

    With the shortcut on, layer 2 reads (input_dim + hidden) columns;
    without it, just hidden.
    """

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w_out: Tensor
    b_out: Tensor
    shortcut: bool

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            "classify.w1": self.w1,
            "classify.b1": self.b1,
            "classify.w2": self.w2,
            "classify.b2": self.b2,
            "classify.w_out": self.w_out,
            "classify.b_out": self.b_out,
        }


def init_classifier_params(
    input_dim: int, hidden_dim: int, rng, shortcut: bool = True
) -> ClassifierParams:
    """Fan-in scaled Gaussian weights, zero biases."""

    def dense(n_in, n_out):
        w = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))
        return Tensor(w, requires_grad=True), Tensor(
            np.zeros(n_out), requires_grad=True
        )

    w1, b1 = dense(input_dim, hidden_dim)
    dim2 = input_dim + hidden_dim if shortcut else hidden_dim
    w2, b2 = dense(dim2, hidden_dim)
    w_out, b_out = dense(hidden_dim, N_CLASSES)
    return ClassifierParams(
        w1=w1, b1=b1, w2=w2, b2=b2, w_out=w_out, b_out=b_out, shortcut=shortcut
    )


def matching_features(
    v_p: Tensor, v_h: Tensor, use_absdiff_product: bool = True
) -> Tensor:
    """[v_p; v_h; |v_p - v_h|; v_p * v_h], or just [v_p; v_h] when ablated."""
    if v_p.shape != v_h.shape:
        raise ShapeError(
            f"matching_features: shapes differ, {v_p.shape} vs {v_h.shape}"
        )
    if not use_absdiff_product:
        return T.concat([v_p, v_h], axis=1)
    diff = T.absolute(T.sub(v_p, v_h))
    prod = T.mul(v_p, v_h)
    return T.concat([v_p, v_h, diff, prod], axis=1)


def mlp_forward(v_inp: Tensor, params: ClassifierParams) -> tuple[Tensor, Tensor]:
    """Class probabilities and the pre-softmax logits, each (1, 3)."""
    h1 = T.relu(T.add(T.matmul(v_inp, params.w1), params.b1))
    in2 = T.concat([v_inp, h1], axis=1) if params.shortcut else h1
    h2 = T.relu(T.add(T.matmul(in2, params.w2), params.b2))
    logits = T.add(T.matmul(h2, params.w_out), params.b_out)
    return T.softmax(logits), logits


def cross_entropy(probs: Tensor, label: int) -> Tensor:
    """-log probs[label] as a (1,) tensor, probability floored at 1e-12.

    The floor is an elementwise max against a constant, so the gradient
    routes to the probability whenever it is above the floor.
    """
    if not 0 <= label < probs.shape[1]:
        raise ValueError(f"label {label} outside [0, {probs.shape[1]})")
    pick = T.slice_axis(probs, 1, label, label + 1)
    floor = Tensor(np.full((1, 1), PROB_FLOOR))
    clamped = T.max_axis(T.concat([pick, floor], axis=1), axis=1)
    return T.mul(T.log(clamped), Tensor(np.asarray(-1.0)))


def mean_loss(losses: list[Tensor]) -> Tensor:
    """Average of per-example (1,) losses as a scalar tensor."""
    if not losses:
        raise ValueError("mean_loss: empty batch")
    total = T.sum_axis(T.concat(losses, axis=0), axis=0)
    return T.div(total, float(len(losses)))
