"""Optimization, the training loop, evaluation, checkpoints, ensembling.

Training runs seeded shuffled minibatches under Adam with global-norm
gradient clipping, evaluates on the dev set once per epoch, and keeps the
checkpoint with the best dev accuracy. Checkpoints are self-describing
binary files that rebuild the exact model, bit for bit. Ensembles average
class probability vectors across models sharing one architecture.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import classify as CL
from .data import DataError, NLIExample, Vocab, batchify, encode_sentence_ids
from .model import Model, ModelConfig, ModelParams
from .tensor import Graph, Tensor

CHECKPOINT_MAGIC = b"GNLICKP1"
CHECKPOINT_VERSION = 1
_DTYPE_F64 = 0


class NumericError(Exception):
    """A gradient or loss stopped being finite."""


class DivergenceError(NumericError):
    """Training diverged; carries the last checkpoint that was still good."""

    def __init__(self, message: str, checkpoint: Optional["Checkpoint"]):
        super().__init__(message)
        self.checkpoint = checkpoint


class Adam:
    """Adam over named tensors, reading .grad and updating .data in place.

    A missing gradient counts as zero (the parameter sat out the forward
    pass); a non-finite gradient aborts the step before anything changes.
    """

    def __init__(
        self,
        named: dict[str, Tensor],
        lr: float = 4e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.named = dict(named)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in self.named.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.named.items()}

    def _grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, tensor in self.named.items():
            g = tensor.grad
            if g is None:
                g = np.zeros_like(tensor.data)
            elif not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in {name}")
            out[name] = g
        return out

    def step(self):
        grads = self._grads()
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, tensor in self.named.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            tensor.data -= update

    def zero_grad(self):
        for tensor in self.named.values():
            tensor.grad = None


def clip_global_norm(named: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint norm is at most max_norm.

    Returns the pre-clip norm. Tensors without gradients are skipped.
    """
    total = 0.0
    grads = [t.grad for t in named.values() if t.grad is not None]
    for g in grads:
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


@dataclass
class Checkpoint:
    """Everything needed to rebuild a trained model."""

    config: ModelConfig
    vocab: Vocab
    tensors: dict[str, np.ndarray]
    metadata: dict

    @classmethod
    def from_model(
        cls, model: Model, vocab: Vocab, metadata: Optional[dict] = None
    ) -> "Checkpoint":
        tensors = {
            name: t.data.copy()
            for name, t in model.params.named_tensors().items()
        }
        return cls(
            config=model.config,
            vocab=vocab,
            tensors=tensors,
            metadata=dict(metadata or {}),
        )

    def build_model(self) -> Model:
        """Fresh skeleton of the saved architecture, then overwrite every
        tensor with the stored values."""
        placeholder = np.zeros((self.vocab.n_words, self.config.word_dim))
        model = Model.initialize(
            self.config,
            self.vocab.n_chars,
            placeholder,
            np.random.default_rng(0),
        )
        named = model.params.named_tensors()
        missing = set(named) - set(self.tensors)
        extra = set(self.tensors) - set(named)
        if missing or extra:
            raise DataError(
                f"checkpoint tensors do not match architecture: "
                f"missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for name, arr in self.tensors.items():
            if named[name].data.shape != arr.shape:
                raise DataError(
                    f"checkpoint tensor {name} has shape {arr.shape}, "
                    f"expected {named[name].data.shape}"
                )
            named[name].data[:] = arr
        return model

    def save(self, path: str):
        header = json.dumps(
            {
                "config": self.config.to_dict(),
                "vocab": self.vocab.to_json(),
                "metadata": self.metadata,
                "n_tensors": len(self.tensors),
            }
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for name in sorted(self.tensors):
                arr = np.ascontiguousarray(self.tensors[name], dtype="<f8")
                name_b = name.encode("utf-8")
                payload = arr.tobytes()
                fh.write(struct.pack("<H", len(name_b)))
                fh.write(name_b)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                fh.write(struct.pack("<B", _DTYPE_F64))
                fh.write(struct.pack("<Q", len(payload)))
                fh.write(payload)

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as err:
            raise DataError(f"cannot read checkpoint {path}: {err}") from err
        view = memoryview(blob)
        if bytes(view[:8]) != CHECKPOINT_MAGIC:
            raise DataError(f"{path} is not a checkpoint file (bad magic)")
        (version,) = struct.unpack_from("<I", view, 8)
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack_from("<I", view, 12)
        pos = 16
        header = json.loads(bytes(view[pos : pos + header_len]))
        pos += header_len
        tensors = {}
        for _ in range(header["n_tensors"]):
            (name_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos : pos + name_len]).decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", view, pos)
            pos += 8 * ndim
            (dtype_code,) = struct.unpack_from("<B", view, pos)
            pos += 1
            if dtype_code != _DTYPE_F64:
                raise DataError(f"unknown dtype code {dtype_code} in {path}")
            (n_bytes,) = struct.unpack_from("<Q", view, pos)
            pos += 8
            arr = np.frombuffer(view[pos : pos + n_bytes], dtype="<f8")
            pos += n_bytes
            tensors[name] = arr.reshape(shape).astype(np.float64).copy()
        return cls(
            config=ModelConfig.from_dict(header["config"]),
            vocab=Vocab.from_json(header["vocab"]),
            tensors=tensors,
            metadata=header["metadata"],
        )


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # (3, 3), rows gold, columns predicted
    n: int


def _encoded_pair(ex: NLIExample, vocab: Vocab):
    pw, pc = encode_sentence_ids(ex.premise_tokens, vocab)
    hw, hc = encode_sentence_ids(ex.hypothesis_tokens, vocab)
    return pw, pc, hw, hc


def evaluate_model(
    model: Model, examples: Sequence[NLIExample], vocab: Vocab
) -> EvalResult:
    if not examples:
        raise DataError("evaluate: empty dataset")
    confusion = np.zeros((CL.N_CLASSES, CL.N_CLASSES), dtype=np.int64)
    for ex in examples:
        if ex.label is None:
            raise DataError("evaluate: dataset contains unlabeled examples")
        probs = model.predict_probs(*_encoded_pair(ex, vocab))
        confusion[ex.label, int(probs.argmax())] += 1
    n = len(examples)
    return EvalResult(
        accuracy=float(np.trace(confusion)) / n, confusion=confusion, n=n
    )


def evaluate(checkpoint: Checkpoint, examples: Sequence[NLIExample]) -> EvalResult:
    return evaluate_model(checkpoint.build_model(), examples, checkpoint.vocab)


@dataclass
class TrainSettings:
    lr: float = 4e-4
    batch_size: int = 32
    epochs: int = 10
    clip_norm: float = 10.0
    stop_train_acc: Optional[float] = None


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    dev_acc: float


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[HistoryRow]
    model: Model  # final-epoch parameters, not necessarily the best


def _epoch_seed(base_seed: int, epoch: int) -> int:
    return int(
        np.random.SeedSequence([base_seed, epoch]).generate_state(1)[0]
    )


def train(
    model: Model,
    vocab: Vocab,
    train_set: Sequence[NLIExample],
    dev_set: Sequence[NLIExample],
    settings: TrainSettings,
    log: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Epochs of minibatch Adam with per-epoch dev selection.

    Raises DivergenceError on a non-finite loss or gradient; the exception
    carries the last end-of-epoch checkpoint (or the initial one).
    """
    if not train_set:
        raise DataError("train: empty training set")
    if not dev_set:
        raise DataError("train: empty dev set")
    if settings.epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {settings.epochs}")
    say = log or (lambda _msg: None)
    adam = Adam(model.params.trainable(), lr=settings.lr)
    last_good = Checkpoint.from_model(
        model, vocab, {"epoch": 0, "dev_accuracy": 0.0, "seed": model.config.seed}
    )
    best: Optional[Checkpoint] = None
    best_acc = -1.0
    history: list[HistoryRow] = []
    for epoch in range(1, settings.epochs + 1):
        batches = batchify(
            train_set,
            settings.batch_size,
            vocab,
            seed=_epoch_seed(model.config.seed, epoch),
            shuffle=True,
        )
        loss_sum = 0.0
        correct = 0
        for batch in batches:
            with Graph() as g:
                losses = []
                for b in range(batch.size):
                    lp = batch.premise.length(b)
                    lh = batch.hypothesis.length(b)
                    probs, _ = model.forward(
                        batch.premise.word_ids[b, :lp],
                        batch.premise.char_ids[b, :lp],
                        batch.hypothesis.word_ids[b, :lh],
                        batch.hypothesis.char_ids[b, :lh],
                    )
                    label = int(batch.labels[b])
                    losses.append(CL.cross_entropy(probs, label))
                    if int(probs.data.argmax()) == label:
                        correct += 1
                loss = CL.mean_loss(losses)
                loss_value = float(loss.data.reshape(()))
                if not np.isfinite(loss_value):
                    raise DivergenceError(
                        f"loss became {loss_value} in epoch {epoch}", last_good
                    )
                g.backward(loss)
            clip_global_norm(adam.named, settings.clip_norm)
            try:
                adam.step()
            except NumericError as err:
                raise DivergenceError(
                    f"epoch {epoch}: {err}", last_good
                ) from err
            adam.zero_grad()
            loss_sum += loss_value * batch.size
        train_loss = loss_sum / len(train_set)
        train_acc = correct / len(train_set)
        dev = evaluate_model(model, dev_set, vocab)
        history.append(
            HistoryRow(epoch=epoch, train_loss=train_loss, dev_acc=dev.accuracy)
        )
        say(
            f"epoch {epoch}: train_loss {train_loss:.4f} "
            f"train_acc {train_acc:.3f} dev_acc {dev.accuracy:.3f}"
        )
        meta = {
            "epoch": epoch,
            "dev_accuracy": dev.accuracy,
            "seed": model.config.seed,
        }
        last_good = Checkpoint.from_model(model, vocab, meta)
        if dev.accuracy > best_acc:
            best_acc = dev.accuracy
            best = last_good
        if (
            settings.stop_train_acc is not None
            and train_acc >= settings.stop_train_acc
        ):
            say(f"early stop: train accuracy {train_acc:.3f} reached target")
            break
    return TrainResult(best=best, history=history, model=model)


def write_history(path: str, history: Sequence[HistoryRow]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "dev_acc"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.dev_acc)])


def _check_ensemble(models: Sequence[Model], vocabs: Sequence[Vocab]):
    if not models:
        raise ValueError("ensemble: need at least one model")
    sig = models[0].config.signature()
    for m in models[1:]:
        if m.config.signature() != sig:
            raise ValueError("ensemble: checkpoint configs differ")
    first = vocabs[0].to_json()
    for v in vocabs[1:]:
        if v.to_json() != first:
            raise ValueError("ensemble: checkpoint vocabularies differ")


def ensemble_probs(
    models: Sequence[Model], pw, pc, hw, hc
) -> np.ndarray:
    """Mean class-probability vector across the models."""
    total = np.zeros(CL.N_CLASSES)
    for m in models:
        total += m.predict_probs(pw, pc, hw, hc)
    return total / len(models)


def ensemble_evaluate(
    checkpoints: Sequence[Checkpoint], examples: Sequence[NLIExample]
) -> EvalResult:
    if not checkpoints:
        raise ValueError("ensemble: need at least one checkpoint")
    if not examples:
        raise DataError("evaluate: empty dataset")
    models = [c.build_model() for c in checkpoints]
    vocabs = [c.vocab for c in checkpoints]
    _check_ensemble(models, vocabs)
    vocab = vocabs[0]
    confusion = np.zeros((CL.N_CLASSES, CL.N_CLASSES), dtype=np.int64)
    for ex in examples:
        if ex.label is None:
            raise DataError("evaluate: dataset contains unlabeled examples")
        probs = ensemble_probs(models, *_encoded_pair(ex, vocab))
        confusion[ex.label, int(probs.argmax())] += 1
    n = len(examples)
    return EvalResult(
        accuracy=float(np.trace(confusion)) / n, confusion=confusion, n=n
    )
