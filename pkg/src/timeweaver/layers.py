"""Building blocks shared by the metadata encoder, denoiser and extractors."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Transformer positional encoding, shape ``(length, dim)``."""
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe.to(dtype)


def attention_stack(width: int, heads: int, layers: int, ff_dim: int | None = None, dropout: float = 0.0):
    layer = nn.TransformerEncoderLayer(
        d_model=width,
        nhead=heads,
        dim_feedforward=ff_dim or width,
        dropout=dropout,
        activation="gelu",
        batch_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)


def transformer_layer_params(width: int, ff_dim: int) -> int:
    # in_proj (3w^2 + 3w), out_proj (w^2 + w), two FF linears, two layer norms
    return 4 * width * width + 4 * width + 2 * width * ff_dim + ff_dim + width + 4 * width


def one_hot(categorical: torch.Tensor, cardinalities) -> torch.Tensor:
    """Concatenated per-feature one-hot blocks, ``(..., sum(cardinalities))``."""
    categorical = torch.as_tensor(categorical).long()
    if categorical.shape[-1] != len(cardinalities):
        raise ValueError(f"{categorical.shape[-1]} categorical features but {len(cardinalities)} cardinalities")
    blocks = []
    for k, card in enumerate(cardinalities):
        col = categorical[..., k]
        if col.numel() and (col.min() < 0 or col.max() >= card):
            raise ValueError(f"categorical feature {k}: label outside [0, {card})")
        blocks.append(nn.functional.one_hot(col, card))
    if not blocks:
        return torch.zeros(categorical.shape[:-1] + (0,))
    return torch.cat(blocks, dim=-1)


class MLPTokenizer(nn.Module):
    """Timestep-local two-layer map: Linear -> GELU -> Linear."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, out_dim)
        self.fc2 = nn.Linear(out_dim, out_dim)

    def forward(self, x):
        return self.fc2(nn.functional.gelu(self.fc1(x)))


class MetadataTokenizer(nn.Module):
    """Categorical and continuous tokenizers, concatenated to ``width`` columns.

    If one branch is empty the other is lifted to the full width by a learned
    affine map.
    """

    def __init__(self, cardinalities, n_cont: int, width: int):
        super().__init__()
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.n_cont = int(n_cont)
        if not self.cardinalities and not self.n_cont:
            raise ValueError("metadata needs at least one categorical or continuous feature")
        self.width = width
        both = bool(self.cardinalities) and bool(self.n_cont)
        d_cat = width // 2
        d_cont = width - d_cat
        self.cat = MLPTokenizer(sum(self.cardinalities), d_cat) if self.cardinalities else None
        self.cont = MLPTokenizer(self.n_cont, d_cont) if self.n_cont else None
        self.pad = None if both else nn.Linear(d_cat if self.cat is not None else d_cont, width)

    def tokenize_categorical(self, categorical):
        w = self.cat.fc1.weight
        return self.cat(one_hot(categorical, self.cardinalities).to(w.dtype))

    def tokenize_continuous(self, continuous):
        return self.cont(continuous.to(self.cont.fc1.weight.dtype))

    def forward(self, categorical, continuous):
        parts = []
        if self.cat is not None:
            parts.append(self.tokenize_categorical(categorical))
        if self.cont is not None:
            if continuous.shape[-1] != self.n_cont:
                raise ValueError(f"expected {self.n_cont} continuous features, got {continuous.shape[-1]}")
            parts.append(self.tokenize_continuous(continuous))
        h = torch.cat(parts, dim=-1)
        return self.pad(h) if self.pad is not None else h
