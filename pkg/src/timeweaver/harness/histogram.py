from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ChannelHistogram:
    edges: np.ndarray
    p_real: np.ndarray
    p_gen: np.ndarray
    l1_gap: float


def histogram_compare(real, gen, bins: int = 50) -> list[ChannelHistogram]:
    """Normalized value histograms per channel over the union range, plus the
    L1 gap ``sum |p_real - p_gen|`` (0 for identical, 2 for disjoint support)."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    n_ch = real.shape[-1]
    if gen.shape[-1] != n_ch:
        raise ValueError("channel mismatch")
    out = []
    for c in range(n_ch):
        r = real[..., c].ravel()
        g = gen[..., c].ravel()
        lo = min(r.min(), g.min())
        hi = max(r.max(), g.max())
        if hi == lo:
            edges = np.array([lo, hi])
            pr = np.ones(1)
            pg = np.ones(1)
        else:
            edges = np.linspace(lo, hi, bins + 1)
            pr = np.histogram(r, bins=edges)[0] / r.size
            pg = np.histogram(g, bins=edges)[0] / g.size
        out.append(ChannelHistogram(edges, pr, pg, float(np.abs(pr - pg).sum())))
    return out
