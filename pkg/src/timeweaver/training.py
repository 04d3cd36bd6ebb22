"""Training loop, generation and checkpoint round-trips for Time Weaver."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import checkpoint
from .data import NormStats, PairedDataset
from .denoiser import ModelConfig, TimeWeaver
from .diffusion import NoiseSchedule, NumericError, linear_schedule, sample, sample_steps, training_loss
from .extractors import DualExtractor, ExtractorConfig

log = logging.getLogger(__name__)


def set_deterministic(threads: int = 1) -> None:
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    max_seconds: float | None = None


def train_time_weaver(
    train: PairedDataset,
    model_config: ModelConfig,
    schedule: NoiseSchedule,
    train_config: TrainConfig,
    seed: int = 0,
) -> tuple[TimeWeaver, list[float]]:
    """Adam on the noise-prediction loss; returns the model and per-epoch mean loss.

    ``max_seconds`` stops training after the epoch in which the budget ran out.
    """
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    model = TimeWeaver(model_config)
    opt = torch.optim.Adam(model.parameters(), lr=train_config.lr)
    x = torch.as_tensor(np.array(train.x), dtype=torch.float32)
    cat = torch.as_tensor(np.array(train.categorical))
    cont = torch.as_tensor(np.array(train.continuous), dtype=torch.float32)
    n, bs = len(train), train_config.batch_size
    history = []
    start = time.perf_counter()
    for epoch in range(train_config.epochs):
        model.train()
        perm = torch.randperm(n, generator=gen)
        total, batches = 0.0, 0
        for a in range(0, n, bs):
            idx = perm[a : a + bs]
            t = sample_steps(len(idx), schedule.T, gen)
            eps = torch.randn(x[idx].shape, generator=gen)
            loss = training_loss(model, schedule, x[idx], cat[idx], cont[idx], t, eps)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        history.append(total / batches)
        log.info("epoch %d loss %.5f", epoch + 1, history[-1])
        if train_config.max_seconds is not None and time.perf_counter() - start > train_config.max_seconds:
            break
    model.eval()
    return model, history


def generate(model: TimeWeaver, metadata: PairedDataset, schedule: NoiseSchedule, seed: int,
             batch: int = 256) -> np.ndarray:
    """One generated series per metadata row of ``metadata``, shape ``(N, L, F)``."""
    cfg = model.config
    if metadata.cardinalities != cfg.cardinalities or metadata.n_cont != cfg.n_cont:
        raise checkpoint.CheckpointError(
            f"metadata (cards={metadata.cardinalities}, K_cont={metadata.n_cont}) does not match "
            f"model (cards={cfg.cardinalities}, K_cont={cfg.n_cont})"
        )
    model.eval()
    out = []
    for i, a in enumerate(range(0, len(metadata), batch)):
        sl = slice(a, a + batch)
        x = sample(model, metadata.categorical[sl], metadata.continuous[sl].astype(np.float32), schedule, seed + i)
        out.append(x.double().numpy())
    return np.concatenate(out)


def schedule_params(schedule: NoiseSchedule) -> dict:
    return {"beta1": float(schedule.betas[0]), "betaT": float(schedule.betas[-1]), "T": schedule.T}


def save_model(path, model: TimeWeaver, schedule: NoiseSchedule, norm: NormStats | None, seed: int, extra=None) -> None:
    manifest = {
        "kind": "diffusion",
        "model": model.config.to_dict(),
        "schedule": schedule_params(schedule),
        "seed": seed,
        "param_count": sum(p.numel() for p in model.parameters()),
        "norm": norm.to_dict() if norm is not None else None,
    }
    manifest.update(extra or {})
    checkpoint.save(path, manifest, model.state_dict())


def _load_state(model, tensors, manifest, path) -> None:
    try:
        model.load_state_dict(tensors)
    except RuntimeError as e:
        raise checkpoint.CheckpointError(
            f"{path}: tensors do not fit the model described by the manifest {json.dumps(manifest, sort_keys=True)}\n{e}"
        ) from None


def load_model(path) -> tuple[TimeWeaver, NoiseSchedule, NormStats | None, dict]:
    manifest, tensors = checkpoint.load(path)
    checkpoint.expect_kind(manifest, "diffusion", path)
    cfg = ModelConfig(**manifest["model"])
    model = TimeWeaver(cfg)
    if cfg.param_count() != manifest["param_count"]:
        raise checkpoint.CheckpointError(f"{path}: parameter count mismatch")
    _load_state(model, tensors, manifest, path)
    model.eval()
    s = manifest["schedule"]
    norm = NormStats.from_dict(manifest["norm"]) if manifest.get("norm") else None
    return model, linear_schedule(s["beta1"], s["betaT"], s["T"]), norm, manifest


def save_extractor(path, model: DualExtractor, norm: NormStats | None, seed: int, extra=None) -> None:
    manifest = {
        "kind": "extractor",
        "extractor": model.config.to_dict(),
        "seed": seed,
        "param_count": sum(p.numel() for p in model.parameters()),
        "norm": norm.to_dict() if norm is not None else None,
    }
    manifest.update(extra or {})
    checkpoint.save(path, manifest, model.state_dict())


def load_extractor(path) -> tuple[DualExtractor, NormStats | None, dict]:
    manifest, tensors = checkpoint.load(path)
    checkpoint.expect_kind(manifest, "extractor", path)
    model = DualExtractor(ExtractorConfig(**manifest["extractor"]))
    _load_state(model, tensors, manifest, path)
    model.eval()
    norm = NormStats.from_dict(manifest["norm"]) if manifest.get("norm") else None
    return model, norm, manifest
