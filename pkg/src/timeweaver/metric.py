"""Frechet distance over Gaussian fits of embeddings; J-FTSD and FTSD."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .data import PairedDataset

NEG_EIG_TOL = 1e-8
REG_THRESHOLD = 1e-10
REG_EPS = 1e-6


class MatrixSqrtError(ValueError):
    """Matrix is not positive semi-definite within tolerance."""


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def gaussian_stats(embeddings) -> GaussianStats:
    """Sample mean and unbiased (n - 1) covariance, symmetrized, in float64."""
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("embeddings must be an (n, d) matrix")
    n = z.shape[0]
    if n < 2:
        raise ValueError("need at least 2 embeddings for a covariance")
    mu = z.mean(axis=0)
    c = z - mu
    sigma = c.T @ c / (n - 1)
    return GaussianStats(mu, (sigma + sigma.T) / 2.0)


def matrix_sqrt_psd(a) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero; anything more negative
    is rejected. ``tol`` is 1e-8 scaled by ``max(1, |A|_2)``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    a = (a + a.T) / 2.0
    w, v = np.linalg.eigh(a)
    tol = NEG_EIG_TOL * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w.min() < -tol:
        raise MatrixSqrtError(f"matrix not PSD: smallest eigenvalue {w.min():.3e}")
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return (s + s.T) / 2.0


def _regularize(s1: np.ndarray, s2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = min(np.linalg.eigvalsh(s1).min(), np.linalg.eigvalsh(s2).min())
    if lo < REG_THRESHOLD:
        eye = REG_EPS * np.eye(s1.shape[0])
        return s1 + eye, s2 + eye
    return s1, s2


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The cross term uses ``sqrt(S1)^T S2 sqrt(S1)``, which is PSD and has the
    same trace of square root as ``S1 S2``. When either covariance is near
    singular both get the same ``1e-6 I`` ridge.
    """
    if s1.dim != s2.dim or s1.sigma.shape != s2.sigma.shape:
        raise ValueError(f"dimension mismatch: {s1.dim} vs {s2.dim}")
    sig1, sig2 = _regularize(s1.sigma, s2.sigma)
    root1 = matrix_sqrt_psd(sig1)
    cross = matrix_sqrt_psd(root1 @ sig2 @ root1)
    diff = s1.mu - s2.mu
    fd = float(diff @ diff + np.trace(sig1) + np.trace(sig2) - 2.0 * np.trace(cross))
    if fd < -1e-6:
        warnings.warn(f"Frechet distance {fd:.3e} below -1e-6 before clamping")
    return max(fd, 0.0)


# ---------------------------------------------------------------------------
# embedding datasets

def grid_offsets(horizon: int, patch_len: int, seed: int = 0) -> np.ndarray:
    """Non-overlapping patch grid, shifted by one seeded offset shared by all samples."""
    if patch_len > horizon:
        raise ValueError(f"patch length {patch_len} exceeds horizon {horizon}")
    k = horizon // patch_len
    slack = horizon - k * patch_len
    start = int(np.random.default_rng(seed).integers(0, slack + 1))
    return start + patch_len * np.arange(k)


def _check_compat(extractor, ds: PairedDataset) -> None:
    cfg = extractor.config
    if ds.n_channels != cfg.n_channels or ds.cardinalities != cfg.cardinalities or ds.n_cont != cfg.n_cont:
        raise ValueError(
            f"dataset (F={ds.n_channels}, cards={ds.cardinalities}, K_cont={ds.n_cont}) does not match "
            f"extractor (F={cfg.n_channels}, cards={cfg.cardinalities}, K_cont={cfg.n_cont})"
        )


@torch.no_grad()
def embed_dataset(extractor, ds: PairedDataset, which: str = "joint", patch_seed: int = 0,
                  batch: int = 256) -> np.ndarray:
    """Per-sample embeddings (mean over the patch grid) as float64.

    ``which`` is ``time``, ``meta`` or ``joint`` (time then meta columns).
    """
    _check_compat(extractor, ds)
    extractor.eval()
    lp = extractor.config.patch_len
    offsets = grid_offsets(ds.horizon, lp, patch_seed)
    x = ds.x.astype(np.float32)
    cont = ds.continuous.astype(np.float32)
    out = []
    for a in range(0, len(ds), batch):
        sl = slice(a, a + batch)
        parts_t, parts_m = [], []
        for o in offsets:
            win = slice(int(o), int(o) + lp)
            if which in ("time", "joint"):
                parts_t.append(extractor.embed_time(x[sl, win]).double().numpy())
            if which in ("meta", "joint"):
                parts_m.append(extractor.embed_meta(ds.categorical[sl, win], cont[sl, win]).double().numpy())
        cols = []
        if parts_t:
            cols.append(np.mean(parts_t, axis=0))
        if parts_m:
            cols.append(np.mean(parts_m, axis=0))
        out.append(np.concatenate(cols, axis=1))
    return np.concatenate(out, axis=0)


def _warn_small(n: int, d: int) -> None:
    if n < d + 1:
        warnings.warn(f"only {n} samples for {d}-dimensional embeddings; covariance is rank deficient")


def jftsd(real: PairedDataset, gen: PairedDataset, extractor, patch_seed: int = 0) -> float:
    """Frechet distance between joint (time + metadata) embeddings of two paired datasets."""
    zr = embed_dataset(extractor, real, "joint", patch_seed)
    zg = embed_dataset(extractor, gen, "joint", patch_seed)
    _warn_small(len(zr), zr.shape[1])
    return frechet_distance(gaussian_stats(zr), gaussian_stats(zg))


def ftsd(real: PairedDataset, gen: PairedDataset, extractor, patch_seed: int = 0) -> float:
    """Frechet distance over time-series embeddings only; metadata is never read."""
    zr = embed_dataset(extractor, real, "time", patch_seed)
    zg = embed_dataset(extractor, gen, "time", patch_seed)
    _warn_small(len(zr), zr.shape[1])
    return frechet_distance(gaussian_stats(zr), gaussian_stats(zg))


def extractor_checksum(extractor) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(extractor.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()[:16]


def metric_report(name: str, value: float, n_real: int, n_gen: int, extractor) -> str:
    cfg = extractor.config
    fields = [
        ("metric_name", name),
        ("value", format(value, ".17g")),
        ("n_real", n_real),
        ("n_gen", n_gen),
        ("d_emb", cfg.d_emb),
        ("L_patch", cfg.patch_len),
        ("extractor_checksum", extractor_checksum(extractor)),
    ]
    return "".join(f"{k}={v}\n" for k, v in fields)
