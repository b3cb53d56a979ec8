"""Sentence-encoder natural language inference.

Stacked shortcut BiLSTM encoder with intra-sentence gated-attention
pooling, character-CNN + frozen word embeddings, an MLP classifier,
and the training / evaluation / ablation machinery around them,
built on a small reverse-mode autodiff core.
"""

__version__ = "0.1.0"
