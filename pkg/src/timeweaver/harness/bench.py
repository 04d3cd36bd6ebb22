from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..diffusion import NoiseSchedule, sample


@dataclass
class LatencyStats:
    timings: list[float]
    n_samples: int

    @property
    def per_sample(self) -> np.ndarray:
        return np.asarray(self.timings) / self.n_samples

    @property
    def mean(self) -> float:
        return float(self.per_sample.mean())

    @property
    def std(self) -> float:
        return float(self.per_sample.std(ddof=1))

    @property
    def median(self) -> float:
        return float(np.median(self.per_sample))


def bench_inference(model, categorical, continuous, schedule: NoiseSchedule, repeats: int = 10, seed: int = 0) -> LatencyStats:
    """Wall-clock seconds per generated sample over ``repeats`` sequential runs."""
    if repeats < 2:
        raise ValueError("need at least 2 repeats for a spread estimate")
    timings = []
    for r in range(repeats):
        t0 = time.perf_counter()
        sample(model, categorical, continuous, schedule, seed + r)
        timings.append(time.perf_counter() - t0)
    return LatencyStats(timings, len(categorical))
