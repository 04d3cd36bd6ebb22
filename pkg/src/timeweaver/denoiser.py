"""CSDI-style conditional noise estimator and the assembled Time Weaver model."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import NumericError
from .encoder import MetadataEncoder
from .layers import attention_stack, sinusoidal_positions, transformer_layer_params

STEP_FEATURES = 128
POSITION_FEATURES = 128
CHANNEL_FEATURES = 16
SIDE_FEATURES = POSITION_FEATURES + CHANNEL_FEATURES


def step_features(t: torch.Tensor, dim: int = STEP_FEATURES) -> torch.Tensor:
    """Sinusoidal diffusion-step features: 64 frequencies 10^(4k/63), [sin | cos]."""
    half = dim // 2
    freqs = 10.0 ** (torch.arange(half, dtype=torch.float64) / (half - 1) * 4.0)
    table = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(table), torch.cos(table)], dim=1)


def conv1x1(c_in: int, c_out: int) -> nn.Conv1d:
    layer = nn.Conv1d(c_in, c_out, 1)
    nn.init.kaiming_normal_(layer.weight)
    return layer


@dataclass
class ModelConfig:
    """Shape of a Time Weaver model (metadata encoder + denoiser)."""

    n_channels: int = 1
    cardinalities: tuple[int, ...] = (2,)
    n_cont: int = 2
    d_meta: int = 64
    heads: int = 4
    residual_layers: int = 2
    ff_dim: int = 64
    encoder_heads: int = 4
    encoder_layers: int = 2
    T: int = 200

    def __post_init__(self):
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        if self.d_meta % self.heads or self.d_meta % self.encoder_heads:
            raise ValueError("attention heads must divide d_meta")
        if self.residual_layers < 1:
            raise ValueError("need at least one residual layer")

    @classmethod
    def paper_scale(cls, **kw) -> "ModelConfig":
        base = dict(d_meta=256, heads=16, residual_layers=10, encoder_heads=8, encoder_layers=2)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cardinalities"] = list(self.cardinalities)
        return d

    def denoiser_param_count(self) -> int:
        d, ff = self.d_meta, self.ff_dim
        block = (d * d + d) + 2 * (2 * d * d + 2 * d) + 2 * d * (d + SIDE_FEATURES) + 2 * d
        block += 2 * transformer_layer_params(d, ff)
        return (
            2 * d                                          # input projection
            + self.n_channels * CHANNEL_FEATURES           # channel embedding
            + (STEP_FEATURES * d + d) + (d * d + d)        # step embedding
            + self.residual_layers * block
            + (d * d + d) + (d + 1)                        # output projections
        )

    def encoder_param_count(self) -> int:
        d = self.d_meta
        half = d // 2
        n = 0
        if self.cardinalities:
            n += sum(self.cardinalities) * half + half + half * half + half
        if self.n_cont:
            other = d - half
            n += self.n_cont * other + other + other * other + other
        if not (self.cardinalities and self.n_cont):
            n += half * d + d
        return n + self.encoder_layers * transformer_layer_params(d, d)

    def param_count(self) -> int:
        return self.denoiser_param_count() + self.encoder_param_count()


class StepEmbedding(nn.Module):
    def __init__(self, d_out: int):
        super().__init__()
        self.projection1 = nn.Linear(STEP_FEATURES, d_out)
        self.projection2 = nn.Linear(d_out, d_out)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        h = step_features(t).to(self.projection1.weight.dtype)
        return F.silu(self.projection2(F.silu(self.projection1(h))))


class ResidualBlock(nn.Module):
    def __init__(self, d: int, heads: int, ff_dim: int):
        super().__init__()
        self.diffusion_projection = nn.Linear(d, d)
        self.cond_projection = conv1x1(d + SIDE_FEATURES, 2 * d)
        self.mid_projection = conv1x1(d, 2 * d)
        self.output_projection = conv1x1(d, 2 * d)
        self.time_layer = attention_stack(d, heads, 1, ff_dim)
        self.feature_layer = attention_stack(d, heads, 1, ff_dim)

    def forward_time(self, y, shape):
        B, C, K, L = shape
        if L == 1:
            return y
        y = y.reshape(B, C, K, L).permute(0, 2, 3, 1).reshape(B * K, L, C)
        y = self.time_layer(y)
        return y.reshape(B, K, L, C).permute(0, 3, 1, 2).reshape(B, C, K * L)

    def forward_feature(self, y, shape):
        B, C, K, L = shape
        if K == 1:
            return y
        y = y.reshape(B, C, K, L).permute(0, 3, 2, 1).reshape(B * L, K, C)
        y = self.feature_layer(y)
        return y.reshape(B, L, K, C).permute(0, 3, 2, 1).reshape(B, C, K * L)

    def forward(self, x, cond, step_emb):
        B, C, K, L = x.shape
        x = x.reshape(B, C, K * L)
        y = x + self.diffusion_projection(step_emb).unsqueeze(-1)
        y = self.forward_time(y, (B, C, K, L))
        y = self.forward_feature(y, (B, C, K, L))
        y = self.mid_projection(y) + self.cond_projection(cond)
        gate, filt = torch.chunk(y, 2, dim=1)
        y = self.output_projection(torch.sigmoid(gate) * torch.tanh(filt))
        residual, skip = torch.chunk(y, 2, dim=1)
        return ((x + residual) / math.sqrt(2.0)).reshape(B, C, K, L), skip.reshape(B, C, K, L)


class CSDIDenoiser(nn.Module):
    """eps_hat = denoiser(x_t, t, z) for x_t of shape ``(B, L, F)`` and z ``(B, L, d)``.

    Besides z, every residual layer is conditioned on side information: a fixed
    sinusoidal embedding of the time index and a learned per-channel embedding.
    The channel embedding starts at zero so channels are interchangeable at init.
    """

    def __init__(self, d: int = 64, heads: int = 4, residual_layers: int = 2, ff_dim: int = 64, T: int = 200,
                 n_channels: int = 1):
        super().__init__()
        self.d = d
        self.T = T
        self.n_channels = n_channels
        self.channel_embedding = nn.Embedding(n_channels, CHANNEL_FEATURES)
        nn.init.zeros_(self.channel_embedding.weight)
        self.input_projection = conv1x1(1, d)
        self.step_embedding = StepEmbedding(d)
        self.residual_layers = nn.ModuleList(ResidualBlock(d, heads, ff_dim) for _ in range(residual_layers))
        self.output_projection1 = conv1x1(d, d)
        self.output_projection2 = conv1x1(d, 1)
        nn.init.zeros_(self.output_projection2.weight)
        nn.init.zeros_(self.output_projection2.bias)

    def embed_step(self, t: torch.Tensor) -> torch.Tensor:
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() and (t.min() < 1 or t.max() > self.T):
            raise ValueError(f"diffusion step outside [1, {self.T}]")
        return self.step_embedding(t)

    @staticmethod
    def _check(h, where: str):
        if not torch.isfinite(h).all():
            raise NumericError(f"non-finite activations in {where}")

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        B, L, K = x_t.shape
        if z.shape[:2] != (B, L) or z.shape[2] != self.d:
            raise ValueError(f"metadata embedding shape {tuple(z.shape)} incompatible with series {tuple(x_t.shape)}")
        if K != self.n_channels:
            raise ValueError(f"series has {K} channels, denoiser was built for {self.n_channels}")
        h = self.input_projection(x_t.permute(0, 2, 1).reshape(B * K, 1, L))
        h = F.relu(h).reshape(B, K, self.d, L).permute(0, 2, 1, 3)
        step = self.embed_step(t)
        zc = z.permute(0, 2, 1).unsqueeze(2)                       # (B, d, 1, L)
        h = h + zc + step[:, :, None, None]
        pos = sinusoidal_positions(L, POSITION_FEATURES, z.dtype).T[None, :, None, :]
        chan = self.channel_embedding.weight.T[None, :, :, None]
        side = torch.cat([pos.expand(B, -1, K, L), chan.expand(B, -1, K, L)], dim=1)
        cond = torch.cat([zc.expand(B, self.d, K, L), side], dim=1).reshape(B, self.d + SIDE_FEATURES, K * L)
        skips = 0
        for i, layer in enumerate(self.residual_layers):
            h, skip = layer(h, cond, step)
            self._check(h, f"residual layer {i}")
            skips = skips + skip
        y = (skips / math.sqrt(len(self.residual_layers))).reshape(B, self.d, K * L)
        y = self.output_projection2(F.relu(self.output_projection1(y)))
        self._check(y, "output projection")
        return y.reshape(B, K, L).permute(0, 2, 1)


class TimeWeaver(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = MetadataEncoder(
            config.cardinalities, config.n_cont, config.d_meta, config.encoder_heads, config.encoder_layers
        )
        self.denoiser = CSDIDenoiser(
            config.d_meta, config.heads, config.residual_layers, config.ff_dim, config.T, config.n_channels
        )

    def encode(self, categorical, continuous) -> torch.Tensor:
        return self.encoder(categorical, continuous)

    def denoise(self, x_t, t, z) -> torch.Tensor:
        return self.denoiser(x_t, t, z)

    def forward(self, x_t, t, categorical, continuous) -> torch.Tensor:
        return self.denoise(x_t, t, self.encode(categorical, continuous))
