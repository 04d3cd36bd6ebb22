"""Metadata encoder: tokenizers plus a fusing self-attention stack."""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import MetadataTokenizer, attention_stack, one_hot, sinusoidal_positions

__all__ = ["MetadataEncoder", "one_hot"]


class MetadataEncoder(nn.Module):
    """Maps ``(categorical, continuous)`` metadata to ``z`` of shape ``(B, L, d_meta)``.

    Tokenizers act per timestep; the attention stack (with sinusoidal positions
    added first) is the only place timesteps interact.
    """

    def __init__(self, cardinalities, n_cont: int, d_meta: int = 256, heads: int = 8, layers: int = 2):
        super().__init__()
        if d_meta % heads:
            raise ValueError("attention heads must divide d_meta")
        self.d_meta = d_meta
        self.tokenizer = MetadataTokenizer(cardinalities, n_cont, d_meta)
        self.fusion = attention_stack(d_meta, heads, layers)

    def forward(self, categorical, continuous) -> torch.Tensor:
        h = self.tokenizer(categorical, continuous)
        h = h + sinusoidal_positions(h.shape[1], self.d_meta, h.dtype)
        return self.fusion(h)
