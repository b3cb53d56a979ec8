"""Full model assembly: configuration, parameter container, forward pass.

A premise and a hypothesis are embedded, encoded by the shared stacked
BiLSTM, pooled into sentence vectors, expanded into matching features, and
classified. The configuration captures every architectural knob, including
the ablation switches, so a checkpoint can rebuild the exact network.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import classify as CL
from . import compose as CP
from . import embed as EM
from . import encoder as EN
from . import tensor as T
from .compose import GateKind
from .tensor import Tensor

GATE_KINDS = tuple(k.value for k in GateKind)


@dataclass
class ModelConfig:
    """Architecture and ablation switches; seed covers init and data order."""

    word_dim: int = 300
    char_dim: int = 15
    filter_widths: tuple[int, ...] = (1, 3, 5)
    filter_channels: int = 100
    hidden_dim: int = 600
    n_layers: int = 3
    mlp_hidden: int = 600
    gate_kind: str = "input"
    use_char: bool = True
    use_word: bool = True
    use_gated_att: bool = True
    use_absdiff_product: bool = True
    mlp_shortcut: bool = True
    seed: int = 0

    def __post_init__(self):
        self.filter_widths = tuple(int(w) for w in self.filter_widths)
        dims = {
            "word_dim": self.word_dim,
            "char_dim": self.char_dim,
            "filter_channels": self.filter_channels,
            "hidden_dim": self.hidden_dim,
            "n_layers": self.n_layers,
            "mlp_hidden": self.mlp_hidden,
        }
        for name, value in dims.items():
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.filter_widths or any(w < 1 for w in self.filter_widths):
            raise ValueError(f"bad filter widths {self.filter_widths}")
        if len(set(self.filter_widths)) != len(self.filter_widths):
            raise ValueError(f"duplicate filter widths {self.filter_widths}")
        if self.gate_kind not in GATE_KINDS:
            raise ValueError(
                f"gate_kind must be one of {GATE_KINDS}, got {self.gate_kind!r}"
            )
        if not self.use_char and not self.use_word:
            raise ValueError("use_char and use_word cannot both be off")

    @property
    def gate(self) -> GateKind:
        return GateKind(self.gate_kind)

    @property
    def char_out_dim(self) -> int:
        return len(self.filter_widths) * self.filter_channels

    @property
    def embed_dim(self) -> int:
        out = 0
        if self.use_char:
            out += self.char_out_dim
        if self.use_word:
            out += self.word_dim
        return out

    @property
    def sentence_dim(self) -> int:
        pools = 3 if self.use_gated_att else 2
        return pools * 2 * self.hidden_dim

    @property
    def match_dim(self) -> int:
        blocks = 4 if self.use_absdiff_product else 2
        return blocks * self.sentence_dim

    def signature(self) -> dict:
        """Architecture identity; seed excluded so ensemble members match."""
        d = asdict(self)
        d.pop("seed")
        d["filter_widths"] = list(self.filter_widths)
        return d

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_widths"] = list(self.filter_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    embed: EM.EmbedParams
    encoder: EN.EncoderParams
    classifier: CL.ClassifierParams

    def named_tensors(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.embed.named_tensors())
        out.update(self.encoder.named_tensors())
        out.update(self.classifier.named_tensors())
        return out

    def trainable(self) -> dict[str, Tensor]:
        return {
            name: t
            for name, t in self.named_tensors().items()
            if t.requires_grad
        }


@dataclass
class Model:
    config: ModelConfig
    params: ModelParams

    @classmethod
    def initialize(
        cls, config: ModelConfig, n_chars: int, word_table: np.ndarray, rng
    ) -> "Model":
        """Fresh parameters; word_table is copied in and stays frozen."""
        if word_table.shape[1] != config.word_dim:
            raise ValueError(
                f"word table dim {word_table.shape[1]} != "
                f"configured {config.word_dim}"
            )
        embed = EM.init_embed_params(
            n_chars,
            config.char_dim,
            config.filter_widths,
            config.filter_channels,
            word_table,
            rng,
        )
        encoder = EN.init_encoder_params(
            config.embed_dim, config.hidden_dim, config.n_layers, rng
        )
        classifier = CL.init_classifier_params(
            config.match_dim, config.mlp_hidden, rng, config.mlp_shortcut
        )
        return cls(
            config=config,
            params=ModelParams(embed=embed, encoder=encoder, classifier=classifier),
        )

    def sentence_vector(
        self, word_ids: np.ndarray, char_ids: np.ndarray
    ) -> CP.SentenceVector:
        """Embed, encode, pool one sentence. Ids must be the valid tokens
        only; padding is stripped by the caller."""
        e = EM.embed_sentence(
            word_ids,
            char_ids,
            self.params.embed,
            use_char=self.config.use_char,
            use_word=self.config.use_word,
        )
        enc = EN.stacked_encode(e, np.ones(len(word_ids)), self.params.encoder)
        return CP.compose(enc, self.config.gate, self.config.use_gated_att)

    def forward(
        self,
        p_word: np.ndarray,
        p_char: np.ndarray,
        h_word: np.ndarray,
        h_char: np.ndarray,
    ) -> tuple[Tensor, Tensor]:
        """(probs, logits) for one premise/hypothesis pair, each (1, 3)."""
        v_p = self.sentence_vector(p_word, p_char)
        v_h = self.sentence_vector(h_word, h_char)
        v_inp = CL.matching_features(
            v_p.v, v_h.v, self.config.use_absdiff_product
        )
        return CL.mlp_forward(v_inp, self.params.classifier)

    def predict_probs(
        self,
        p_word: np.ndarray,
        p_char: np.ndarray,
        h_word: np.ndarray,
        h_char: np.ndarray,
    ) -> np.ndarray:
        """Probability vector (3,), computed without recording a graph."""
        probs, _ = self.forward(p_word, p_char, h_word, h_char)
        return probs.data[0].copy()


def strip_padding(
    word_ids: np.ndarray, char_ids: np.ndarray, length: int
) -> tuple[np.ndarray, np.ndarray]:
    """Valid-prefix views used when a batch row is fed to the model."""
    return word_ids[:length], char_ids[:length]
