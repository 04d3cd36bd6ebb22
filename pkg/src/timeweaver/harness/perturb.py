"""Synthetic disturbances for metric sensitivity sweeps.

Each perturbation draws its randomness from ``seed`` alone, so every level of a
sweep reuses the same noise field, impute order and flip draws. Larger levels
therefore extend smaller ones instead of re-rolling them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..data import PairedDataset

KINDS = ("gaussian_noise", "time_warp", "impute", "label_flip")
MAX_LEVEL = {"gaussian_noise": math.inf, "time_warp": 1.0, "impute": 1.0, "label_flip": 1.0}
IMPUTE_WINDOW = 9


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    levels: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation {self.kind!r}")
        levels = tuple(float(v) for v in self.levels)
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)


@dataclass
class SensitivityCurve:
    metric: str
    kind: str
    levels: list[float]
    values: list[float]


def smooth_ramp(length: int) -> np.ndarray:
    """Half-cosine ramp from -1 to +1."""
    if length == 1:
        return np.zeros(1)
    return -np.cos(np.pi * np.arange(length) / (length - 1))


def local_mean(x: np.ndarray, width: int = IMPUTE_WINDOW) -> np.ndarray:
    """Centered moving mean over axis 1, windows truncated at the edges."""
    half = width // 2
    length = x.shape[1]
    csum = np.concatenate([np.zeros_like(x[:, :1]), np.cumsum(x, axis=1)], axis=1)
    lo = np.clip(np.arange(length) - half, 0, length)
    hi = np.clip(np.arange(length) + half + 1, 0, length)
    return (csum[:, hi] - csum[:, lo]) / (hi - lo)[None, :, None]


def perturb(
    ds: PairedDataset, kind: str, level: float, seed: int = 0, warp: Callable[[int], np.ndarray] = smooth_ramp
) -> PairedDataset:
    if kind not in KINDS:
        raise ValueError(f"unknown perturbation {kind!r}")
    if not 0.0 <= level <= MAX_LEVEL[kind]:
        raise ValueError(f"{kind} level {level} outside [0, {MAX_LEVEL[kind]}]")
    if level == 0:
        return ds.with_values()
    rng = np.random.default_rng(seed)
    n, length, _ = ds.x.shape
    if kind == "gaussian_noise":
        return ds.with_values(x=ds.x + level * rng.standard_normal(ds.x.shape))
    if kind == "time_warp":
        return ds.with_values(x=ds.x * (1.0 + level * warp(length))[None, :, None])
    if kind == "impute":
        count = int(round(level * length))
        order = np.argsort(rng.random((n, length)), axis=1)[:, :count]
        mask = np.zeros((n, length), dtype=bool)
        np.put_along_axis(mask, order, True, axis=1)
        return ds.with_values(x=np.where(mask[:, :, None], local_mean(ds.x), ds.x))
    # label_flip
    u = rng.random(ds.categorical.shape)
    cat = ds.categorical.copy()
    for k, card in enumerate(ds.cardinalities):
        draws = rng.integers(0, card, size=cat.shape[:2])
        flip = u[..., k] < level
        cat[..., k] = np.where(flip, draws, cat[..., k])
    return ds.with_values(categorical=cat)


def sensitivity_curve(ds: PairedDataset, spec: PerturbationSpec, metric_fn, metric_name: str = "metric") -> SensitivityCurve:
    """Evaluate ``metric_fn(real=ds, gen=perturb(ds, level))`` at every level."""
    values = [float(metric_fn(ds, perturb(ds, spec.kind, lv, spec.seed))) for lv in spec.levels]
    return SensitivityCurve(metric_name, spec.kind, list(spec.levels), values)


def strictly_increasing(values: Sequence[float]) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))
