"""Contrastively trained time-series / metadata feature extractors."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import PairedDataset
from .diffusion import NumericError
from .layers import MetadataTokenizer, sinusoidal_positions

log = logging.getLogger(__name__)


@dataclass
class ExtractorConfig:
    n_channels: int = 1
    cardinalities: tuple[int, ...] = (2,)
    n_cont: int = 2
    patch_len: int = 64
    n_patch: int = 2
    d_emb: int = 48
    d_model: int = 64
    heads: int = 4
    layers: int = 3
    dropout: float = 0.05
    stride_every: int = 3
    batch_size: int = 16
    lr: float = 1e-4
    init_temperature: float = 0.07

    def __post_init__(self):
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        if self.d_emb >= self.n_channels * self.patch_len:
            raise ValueError("d_emb must be smaller than n_channels * patch_len")
        if self.n_patch < 1 or self.patch_len < 1:
            raise ValueError("need n_patch >= 1 and patch_len >= 1")
        if self.d_model % self.heads:
            raise ValueError("heads must divide d_model")

    @classmethod
    def paper_scale(cls, **kw) -> "ExtractorConfig":
        base = dict(d_model=128, heads=8, layers=8, d_emb=128)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cardinalities"] = list(self.cardinalities)
        return d

    def out_len(self) -> int:
        length = self.patch_len
        for i in range(self.layers):
            if (i + 1) % self.stride_every == 0:
                length = (length + 1) // 2
        return length


class _AttentionLayer(nn.Module):
    """Post-norm self-attention + GELU feed-forward."""

    def __init__(self, d: int, heads: int, dropout: float):
        super().__init__()
        self.attn = nn.MultiheadAttention(d, heads, dropout=dropout, batch_first=True)
        self.ff1 = nn.Linear(d, 4 * d)
        self.ff2 = nn.Linear(4 * d, d)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        a, _ = self.attn(x, x, x, need_weights=False)
        x = self.norm1(x + self.drop(a))
        return self.norm2(x + self.drop(self.ff2(self.drop(F.gelu(self.ff1(x))))))


class _ConvLayer(nn.Module):
    """Kernel-3 convolution over time; stride 2 halves the sequence."""

    def __init__(self, d: int, stride: int):
        super().__init__()
        self.stride = stride
        self.conv = nn.Conv1d(d, d, 3, stride=stride, padding=1)
        self.norm = nn.LayerNorm(d)

    def forward(self, x):
        h = F.gelu(self.conv(x.transpose(1, 2))).transpose(1, 2)
        if self.stride == 1:
            h = x + h
        return self.norm(h)


class PatchEncoder(nn.Module):
    """Informer-style encoder: embed, add positions, attention/conv stack,
    flatten and project to an L2-normalized ``d_emb`` vector."""

    def __init__(self, embed: nn.Module, cfg: ExtractorConfig):
        super().__init__()
        self.embed = embed
        self.patch_len = cfg.patch_len
        self.d_model = cfg.d_model
        self.blocks = nn.ModuleList()
        for i in range(cfg.layers):
            stride = 2 if (i + 1) % cfg.stride_every == 0 else 1
            self.blocks.append(_AttentionLayer(cfg.d_model, cfg.heads, cfg.dropout))
            self.blocks.append(_ConvLayer(cfg.d_model, stride))
        self.project = nn.Linear(cfg.out_len() * cfg.d_model, cfg.d_emb)

    def encode(self, h):
        if h.shape[1] != self.patch_len:
            raise ValueError(f"patch length {h.shape[1]} != configured {self.patch_len}")
        h = h * math.sqrt(self.d_model) + sinusoidal_positions(self.patch_len, self.d_model, h.dtype)
        for block in self.blocks:
            h = block(h)
        return F.normalize(self.project(h.flatten(1)), dim=-1)


class TimeEmbed(nn.Module):
    def __init__(self, cfg: ExtractorConfig):
        super().__init__()
        self.conv = nn.Conv1d(cfg.n_channels, cfg.d_model, 3, padding=1, padding_mode="circular")

    def forward(self, x):
        return self.conv(x.transpose(1, 2)).transpose(1, 2)


class MetaEmbed(nn.Module):
    def __init__(self, cfg: ExtractorConfig):
        super().__init__()
        self.tokenizer = MetadataTokenizer(cfg.cardinalities, cfg.n_cont, cfg.d_model)
        self.conv = nn.Conv1d(cfg.d_model, cfg.d_model, 3, padding=1, padding_mode="circular")

    def forward(self, categorical, continuous):
        h = self.tokenizer(categorical, continuous)
        return self.conv(h.transpose(1, 2)).transpose(1, 2)


def _tensor(a) -> torch.Tensor:
    # numpy inputs may be read-only views of a frozen dataset
    return a if isinstance(a, torch.Tensor) else torch.as_tensor(np.array(a))


class DualExtractor(nn.Module):
    """phi_time and phi_meta plus the learnable logit scale."""

    def __init__(self, cfg: ExtractorConfig):
        super().__init__()
        self.config = cfg
        self.time = PatchEncoder(TimeEmbed(cfg), cfg)
        self.meta = PatchEncoder(MetaEmbed(cfg), cfg)
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1.0 / cfg.init_temperature)))

    @property
    def dtype(self):
        return self.logit_scale.dtype

    def embed_time(self, x) -> torch.Tensor:
        x = _tensor(x).to(self.dtype)
        return self.time.encode(self.time.embed(x))

    def embed_meta(self, categorical, continuous) -> torch.Tensor:
        continuous = _tensor(continuous).to(self.dtype)
        return self.meta.encode(self.meta.embed(_tensor(categorical), continuous))

    def logits(self, x, categorical, continuous) -> torch.Tensor:
        scale = self.logit_scale.clamp(max=math.log(100.0)).exp()
        return scale * self.embed_time(x) @ self.embed_meta(categorical, continuous).T


# ---------------------------------------------------------------------------
# patches

@dataclass(frozen=True, eq=False)
class PatchBatch:
    """Aligned time/metadata patches; row ``r`` comes from sample
    ``sample_index[r]`` starting at timestep ``offsets[r]``."""

    x: np.ndarray
    categorical: np.ndarray
    continuous: np.ndarray
    sample_index: np.ndarray
    offsets: np.ndarray

    def __len__(self):
        return len(self.offsets)


def patch_offsets(rng: np.random.Generator, n: int, horizon: int, patch_len: int, n_patch: int) -> np.ndarray:
    if patch_len > horizon:
        raise ValueError(f"patch length {patch_len} exceeds horizon {horizon}")
    span = horizon - patch_len + 1
    replace = span < n_patch
    return np.stack([rng.choice(span, size=n_patch, replace=replace) for _ in range(n)])


def cut_patches(x, categorical, continuous, sample_index, offsets, patch_len: int) -> PatchBatch:
    idx = offsets[:, None] + np.arange(patch_len)[None, :]
    rows = sample_index[:, None]
    return PatchBatch(
        x[rows, idx], categorical[rows, idx], continuous[rows, idx], sample_index, offsets
    )


def sample_patches(x, categorical, continuous, n_patch: int, patch_len: int, seed) -> PatchBatch:
    """Draw ``n_patch`` aligned patches per sample (Alg. order: sample-major)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n, horizon = x.shape[:2]
    offsets = patch_offsets(rng, n, horizon, patch_len, n_patch)
    sample_index = np.repeat(np.arange(n), n_patch)
    return cut_patches(x, categorical, continuous, sample_index, offsets.reshape(-1), patch_len)


def contrastive_loss(logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Symmetric cross-entropy against the diagonal; returns (total, time, meta)."""
    n = logits.shape[0]
    if n < 2:
        raise ValueError("contrastive batches need at least 2 pairs")
    labels = torch.arange(n)
    l_time = F.cross_entropy(logits, labels)
    l_meta = F.cross_entropy(logits.T, labels)
    return (l_time + l_meta) / 2, l_time, l_meta


def contrastive_step(model: DualExtractor, patches: PatchBatch):
    """Loss and per-parameter gradients for one patch batch."""
    model.zero_grad(set_to_none=True)
    loss, _, _ = contrastive_loss(model.logits(patches.x, patches.categorical, patches.continuous))
    loss.backward()
    grads = {n: p.grad.detach().clone() for n, p in model.named_parameters() if p.grad is not None}
    return loss.detach(), grads


@torch.no_grad()
def retrieval_accuracy(model: DualExtractor, patches: PatchBatch, batch_pairs: int = 32) -> float:
    """Top-1 in-batch retrieval (time -> metadata) over consecutive blocks of pairs."""
    model.eval()
    hits = total = 0
    for a in range(0, len(patches) - batch_pairs + 1, batch_pairs):
        sl = slice(a, a + batch_pairs)
        logits = model.logits(patches.x[sl], patches.categorical[sl], patches.continuous[sl])
        hits += int((logits.argmax(dim=1) == torch.arange(batch_pairs)).sum())
        total += batch_pairs
    return hits / total


def train_extractors(
    dataset: PairedDataset,
    config: ExtractorConfig,
    epochs: int,
    seed: int = 0,
    log_every: int = 0,
    on_epoch=None,
) -> tuple[DualExtractor, list[float]]:
    """Train both extractors on ``dataset``; returns the model and per-epoch mean loss."""
    if dataset.n_channels != config.n_channels or dataset.cardinalities != config.cardinalities \
            or dataset.n_cont != config.n_cont:
        raise ValueError("dataset shape does not match extractor config")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = DualExtractor(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    x = dataset.x.astype(np.float32)
    cat, cont = dataset.categorical, dataset.continuous.astype(np.float32)
    n = len(dataset)
    history = []
    for epoch in range(epochs):
        model.train()
        perm = rng.permutation(n)
        losses = []
        for a in range(0, n - config.batch_size + 1, config.batch_size):
            idx = perm[a : a + config.batch_size]
            pb = sample_patches(x[idx], cat[idx], cont[idx], config.n_patch, config.patch_len, rng)
            loss, _, _ = contrastive_loss(model.logits(pb.x, pb.categorical, pb.continuous))
            if not torch.isfinite(loss):
                raise NumericError(f"contrastive loss diverged in epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        if log_every and (epoch + 1) % log_every == 0:
            log.info("extractor epoch %d loss %.4f", epoch + 1, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, model, history[-1])
    model.eval()
    return model, history
