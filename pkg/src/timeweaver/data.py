"""Paired time-series/metadata datasets.

Samples are stored stacked: ``x`` is ``(N, L, F)``, categorical metadata is
``(N, L, K_cat)`` integer labels and continuous metadata is ``(N, L, K_cont)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

SINE, TRIANGLE = 0, 1
FAMILIES = {"sine": SINE, "triangle": TRIANGLE}
SPLITS = ("train", "val", "test", "all")
NA_TOKEN = "NA"


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Metadata:
    categorical: np.ndarray
    continuous: np.ndarray
    cardinalities: tuple[int, ...]

    def __post_init__(self):
        cat = np.asarray(self.categorical, dtype=np.int64)
        cont = np.asarray(self.continuous, dtype=np.float64)
        if cat.ndim != 2 or cont.ndim != 2 or cat.shape[0] != cont.shape[0]:
            raise DataError("metadata must be (L, K_cat) and (L, K_cont) with matching L")
        _check_metadata(cat[None], cont[None], tuple(self.cardinalities))
        object.__setattr__(self, "categorical", _frozen(cat))
        object.__setattr__(self, "continuous", _frozen(cont))
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))


def _check_metadata(cat: np.ndarray, cont: np.ndarray, cardinalities: tuple[int, ...]) -> None:
    k_cat, k_cont = cat.shape[-1], cont.shape[-1]
    if len(cardinalities) != k_cat:
        raise DataError(f"{k_cat} categorical features but {len(cardinalities)} cardinalities")
    if k_cat + k_cont < 1:
        raise DataError("metadata needs at least one categorical or continuous feature")
    for k, card in enumerate(cardinalities):
        if card < 1:
            raise DataError(f"categorical feature {k}: cardinality must be positive")
        col = cat[..., k]
        if col.size and (col.min() < 0 or col.max() >= card):
            raise DataError(f"categorical feature {k}: labels must lie in [0, {card})")
    if not np.isfinite(cont).all():
        raise DataError("continuous metadata must be finite")


@dataclass(frozen=True, eq=False)
class PairedDataset:
    """Dimensionally homogeneous set of (time series, metadata) pairs.

    ``ids`` records each sample's index in the dataset it was split from, so
    splits stay traceable and disjointness is checkable.
    """

    x: np.ndarray
    categorical: np.ndarray
    continuous: np.ndarray
    cardinalities: tuple[int, ...]
    split: str = "all"
    ids: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        cat = np.asarray(self.categorical, dtype=np.int64)
        cont = np.asarray(self.continuous, dtype=np.float64)
        if x.ndim != 3 or cat.ndim != 3 or cont.ndim != 3:
            raise DataError("expected x (N, L, F), categorical (N, L, K_cat), continuous (N, L, K_cont)")
        n, length, n_ch = x.shape
        if length < 1 or n_ch < 1:
            raise DataError("time series need L >= 1 and F >= 1")
        if cat.shape[:2] != (n, length) or cont.shape[:2] != (n, length):
            raise DataError("time series and metadata disagree on (N, L)")
        if not np.isfinite(x).all():
            raise DataError("time series values must be finite")
        cards = tuple(int(c) for c in self.cardinalities)
        _check_metadata(cat, cont, cards)
        if self.split not in SPLITS:
            raise DataError(f"unknown split tag {self.split!r}")
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != (n,):
            raise DataError("ids must have one entry per sample")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "categorical", _frozen(cat))
        object.__setattr__(self, "continuous", _frozen(cont))
        object.__setattr__(self, "cardinalities", cards)
        object.__setattr__(self, "ids", _frozen(ids))

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> tuple[np.ndarray, Metadata]:
        return self.x[i], Metadata(self.categorical[i], self.continuous[i], self.cardinalities)

    @property
    def horizon(self) -> int:
        return self.x.shape[1]

    @property
    def n_channels(self) -> int:
        return self.x.shape[2]

    @property
    def n_cat(self) -> int:
        return self.categorical.shape[2]

    @property
    def n_cont(self) -> int:
        return self.continuous.shape[2]

    def subset(self, index, split: str | None = None) -> "PairedDataset":
        index = np.asarray(index)
        return PairedDataset(
            self.x[index], self.categorical[index], self.continuous[index],
            self.cardinalities, split or self.split, self.ids[index],
        )

    def with_values(self, x=None, categorical=None, continuous=None) -> "PairedDataset":
        return replace(
            self,
            x=self.x if x is None else x,
            categorical=self.categorical if categorical is None else categorical,
            continuous=self.continuous if continuous is None else continuous,
        )

    def equals(self, other: "PairedDataset") -> bool:
        return (
            self.cardinalities == other.cardinalities
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.categorical, other.categorical)
            and np.array_equal(self.continuous, other.continuous)
        )


def concat(datasets: Sequence[PairedDataset], split: str = "all") -> PairedDataset:
    first = datasets[0]
    return PairedDataset(
        np.concatenate([d.x for d in datasets]),
        np.concatenate([d.categorical for d in datasets]),
        np.concatenate([d.continuous for d in datasets]),
        first.cardinalities,
        split,
        np.concatenate([d.ids for d in datasets]),
    )


# ---------------------------------------------------------------------------
# synthetic generator

@dataclass(frozen=True)
class SyntheticConfig:
    """Sine/triangle mixtures with per-timestep family, frequency and amplitude.

    ``switch_policy`` decides the per-timestep family label:

    * ``constant``: one random family per sample
    * ``half``: triangle for the first half, sine for the second
    * ``segments``: random segments of at least ``min_segment`` steps
    """

    n_samples: int = 2000
    horizon: int = 96
    seed: int = 0
    families: tuple[str, ...] = ("sine", "triangle")
    freq_range: tuple[float, float] = (2.0, 6.0)
    amplitude_range: tuple[float, float] = (0.5, 1.0)
    noise_std: float = 0.05
    switch_policy: str = "half"
    min_segment: int = 8

    def __post_init__(self):
        f_lo, f_hi = self.freq_range
        a_lo, a_hi = self.amplitude_range
        if self.n_samples < 1:
            raise DataError("n_samples must be positive")
        if self.horizon < 1:
            raise DataError("horizon must be positive")
        if not (f_lo > 0 and f_hi >= f_lo):
            raise DataError("frequency range must satisfy 0 < f_lo <= f_hi")
        if not (0 <= a_lo <= a_hi):
            raise DataError("amplitude range must satisfy 0 <= a_lo <= a_hi")
        if self.noise_std < 0:
            raise DataError("noise_std must be non-negative")
        if self.min_segment < 8:
            raise DataError("min_segment must be at least 8")
        if self.switch_policy not in ("constant", "half", "segments"):
            raise DataError(f"unknown switch policy {self.switch_policy!r}")
        if self.switch_policy != "constant" and self.horizon < 2 * self.min_segment:
            raise DataError("segmented policies need horizon >= 2 * min_segment")
        unknown = set(self.families) - set(FAMILIES)
        if unknown or not self.families:
            raise DataError(f"unknown waveform families {sorted(unknown)}")


def triangle_wave(theta):
    """Unit triangle wave with the period of ``sin`` and its peak at a quarter period."""
    return (2.0 / np.pi) * np.arcsin(np.clip(np.sin(theta), -1.0, 1.0))


def waveform(family, amplitude, freq, t, horizon: int, phase):
    theta = 2.0 * np.pi * freq * t / horizon + phase
    return amplitude * np.where(np.asarray(family) == TRIANGLE, triangle_wave(theta), np.sin(theta))


def _segments(rng: np.random.Generator, horizon: int, min_seg: int) -> list[tuple[int, int]]:
    bounds, start = [], 0
    while horizon - start >= 2 * min_seg:
        length = int(rng.integers(min_seg, max(min_seg, horizon // 2) + 1))
        if horizon - start - length < min_seg:
            break
        bounds.append((start, start + length))
        start += length
    bounds.append((start, horizon))
    return bounds


def generate_synthetic(config: SyntheticConfig) -> PairedDataset:
    """Draw a conditional sine/triangle dataset.

    Categorical feature 0 is the per-timestep family (0 = sine, 1 = triangle);
    continuous features 0 and 1 are the frequency (cycles per horizon) and
    amplitude in force at each timestep. Phase is uniform per sample.
    """
    rng = np.random.default_rng(config.seed)
    n, horizon = config.n_samples, config.horizon
    allowed = np.array(sorted(FAMILIES[f] for f in config.families))
    t = np.arange(horizon, dtype=np.float64)
    fam = np.zeros((n, horizon), dtype=np.int64)
    freq = np.zeros((n, horizon))
    amp = np.zeros((n, horizon))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
    for i in range(n):
        if config.switch_policy == "constant":
            segs = [(0, horizon)]
            labels = [rng.choice(allowed)]
        elif config.switch_policy == "half":
            segs = [(0, horizon // 2), (horizon // 2, horizon)]
            labels = [TRIANGLE, SINE]
        else:
            segs = _segments(rng, horizon, config.min_segment)
            labels = list(rng.choice(allowed, size=len(segs)))
        for (a, b), lab in zip(segs, labels):
            fam[i, a:b] = lab
            freq[i, a:b] = rng.uniform(*config.freq_range)
            amp[i, a:b] = rng.uniform(*config.amplitude_range)
    x = waveform(fam, amp, freq, t[None, :], horizon, phase[:, None])
    x = x + config.noise_std * rng.standard_normal(x.shape)
    return PairedDataset(
        x[:, :, None],
        fam[:, :, None],
        np.stack([freq, amp], axis=-1),
        (2,),
    )


# ---------------------------------------------------------------------------
# normalization

@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-channel affine normalization fitted on a training split.

    Time series use ``mode`` (``minmax`` into [-1, 1] or ``zscore``);
    continuous metadata always uses z-score.
    """

    mode: str
    x_shift: np.ndarray
    x_scale: np.ndarray
    cont_shift: np.ndarray
    cont_scale: np.ndarray

    def apply(self, ds: PairedDataset) -> PairedDataset:
        return ds.with_values(
            x=(ds.x - self.x_shift) / self.x_scale,
            continuous=(ds.continuous - self.cont_shift) / self.cont_scale,
        )

    def invert(self, ds: PairedDataset) -> PairedDataset:
        return ds.with_values(
            x=ds.x * self.x_scale + self.x_shift,
            continuous=ds.continuous * self.cont_scale + self.cont_shift,
        )

    def invert_x(self, x: np.ndarray) -> np.ndarray:
        return x * self.x_scale + self.x_shift

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "x_shift": self.x_shift.tolist(),
            "x_scale": self.x_scale.tolist(),
            "cont_shift": self.cont_shift.tolist(),
            "cont_scale": self.cont_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        arr = lambda k: np.asarray(d[k], dtype=np.float64)
        return cls(d["mode"], arr("x_shift"), arr("x_scale"), arr("cont_shift"), arr("cont_scale"))


def fit_norm(train: PairedDataset, mode: str = "minmax") -> NormStats:
    if len(train) == 0:
        raise DataError("cannot fit normalization on an empty split")
    flat = train.x.reshape(-1, train.n_channels)
    if mode == "minmax":
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        span = hi - lo
        const = span == 0
        # constant channels map to 0: shift at the value, any nonzero scale
        x_shift = np.where(const, lo, (hi + lo) / 2.0)
        x_scale = np.where(const, 1.0, span / 2.0)
    elif mode == "zscore":
        x_shift = flat.mean(axis=0)
        x_scale = flat.std(axis=0)
        bad = np.flatnonzero(x_scale == 0)
        if bad.size:
            raise DataError(f"channel {int(bad[0])} has zero variance on the train split")
    else:
        raise DataError(f"unknown normalization mode {mode!r}")
    cflat = train.continuous.reshape(-1, train.n_cont)
    if cflat.shape[1]:
        c_shift = cflat.mean(axis=0)
        c_scale = cflat.std(axis=0)
        c_scale = np.where(c_scale == 0, 1.0, c_scale)
    else:
        c_shift = c_scale = np.zeros(0)
    return NormStats(mode, x_shift, x_scale, c_shift, np.asarray(c_scale, dtype=np.float64))


def normalize(train: PairedDataset, mode: str = "minmax") -> tuple[PairedDataset, NormStats]:
    stats = fit_norm(train, mode)
    return stats.apply(train), stats


# ---------------------------------------------------------------------------
# splitting

def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder allocation: each size is within one of ``r * n``."""
    exact = [r * n for r in ratios]
    sizes = [math.floor(e) for e in exact]
    order = sorted(range(len(ratios)), key=lambda k: (sizes[k] - exact[k], k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    return sizes


def split(
    dataset: PairedDataset, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[PairedDataset, PairedDataset, PairedDataset]:
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError("ratios must be three positive numbers summing to 1")
    n = len(dataset)
    if n < 3:
        raise DataError("need at least 3 samples to split")
    sizes = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0] + sizes)
    parts = []
    for tag, a, b in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        parts.append(dataset.subset(np.sort(perm[a:b]), split=tag))
    return tuple(parts)


# ---------------------------------------------------------------------------
# CSV

def _header(n_ch: int, n_cat: int, n_cont: int) -> list[str]:
    return (
        ["sample_id", "t"]
        + [f"x_{k}" for k in range(n_ch)]
        + [f"cat_{k}" for k in range(n_cat)]
        + [f"cont_{k}" for k in range(n_cont)]
    )


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(dataset: PairedDataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(dataset.n_channels, dataset.n_cat, dataset.n_cont))
        for i in range(len(dataset)):
            sid = int(dataset.ids[i])
            for t in range(dataset.horizon):
                w.writerow(
                    [sid, t]
                    + [_fmt(v) for v in dataset.x[i, t]]
                    + [int(v) for v in dataset.categorical[i, t]]
                    + [_fmt(v) for v in dataset.continuous[i, t]]
                )


def read_csv(path, cardinalities: Sequence[int] | None = None, split: str = "all") -> PairedDataset:
    """Read the long-format CSV written by :func:`write_csv`.

    Without ``cardinalities`` each feature's cardinality is ``max label + 1``.
    ``NA`` categorical cells become an extra "unknown" label appended to the
    feature's cardinality.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    xs = [h for h in header if h.startswith("x_")]
    cats = [h for h in header if h.startswith("cat_")]
    conts = [h for h in header if h.startswith("cont_")]
    expected = _header(len(xs), len(cats), len(conts))
    if header != expected:
        missing = [h for h in expected if h not in header]
        raise DataError(f"{path} row 1: bad header, missing or misordered columns {missing or header}")
    n_ch, n_cat, width = len(xs), len(cats), len(header)

    sample_rows: dict[str, list] = {}
    order: list[str] = []
    na_seen = [False] * n_cat
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(f"{path} row {lineno}: expected {width} cells, got {len(row)}")
        sid = row[0]
        try:
            t = int(row[1])
            xv = [float(v) for v in row[2 : 2 + n_ch]]
            cv = [float(v) for v in row[2 + n_ch + n_cat :]]
        except ValueError as exc:
            raise DataError(f"{path} row {lineno}: {exc}") from None
        cat_vals = []
        for k, cell in enumerate(row[2 + n_ch : 2 + n_ch + n_cat]):
            if cell == NA_TOKEN:
                na_seen[k] = True
                cat_vals.append(None)
                continue
            try:
                cat_vals.append(int(cell))
            except ValueError:
                raise DataError(f"{path} row {lineno}: categorical cell {cats[k]}={cell!r} is not an integer") from None
        if sid not in sample_rows:
            if order and sid in order:
                raise DataError(f"{path} row {lineno}: rows of sample {sid} are not contiguous")
            sample_rows[sid] = []
            order.append(sid)
        expected_t = len(sample_rows[sid])
        if t != expected_t:
            raise DataError(f"{path} row {lineno}: expected t={expected_t}, got {t}")
        sample_rows[sid].append((lineno, xv, cat_vals, cv))

    if not order:
        raise DataError(f"{path}: no data rows")
    horizon = len(sample_rows[order[0]])
    for sid in order:
        if len(sample_rows[sid]) != horizon:
            lineno = sample_rows[sid][-1][0]
            raise DataError(f"{path} row {lineno}: sample {sid} has horizon {len(sample_rows[sid])}, expected {horizon}")

    if cardinalities is None:
        cards = [0] * n_cat
        for sid in order:
            for _, _, cat_vals, _ in sample_rows[sid]:
                for k, v in enumerate(cat_vals):
                    if v is not None:
                        cards[k] = max(cards[k], v + 1)
        cards = [max(c, 1) for c in cards]
    else:
        cards = [int(c) for c in cardinalities]
        if len(cards) != n_cat:
            raise DataError(f"{path}: {n_cat} categorical columns but {len(cards)} cardinalities")
    unknown = [cards[k] if na_seen[k] else None for k in range(n_cat)]

    n = len(order)
    x = np.empty((n, horizon, n_ch))
    cat = np.empty((n, horizon, n_cat), dtype=np.int64)
    cont = np.empty((n, horizon, len(conts)))
    for i, sid in enumerate(order):
        for t, (lineno, xv, cat_vals, cv) in enumerate(sample_rows[sid]):
            x[i, t] = xv
            cont[i, t] = cv
            for k, v in enumerate(cat_vals):
                if v is None:
                    v = unknown[k]
                elif not 0 <= v < cards[k]:
                    raise DataError(f"{path} row {lineno}: {cats[k]}={v} outside [0, {cards[k]})")
                cat[i, t, k] = v
    final_cards = tuple(c + 1 if na_seen[k] else c for k, c in enumerate(cards))
    try:
        ids = np.array([int(s) for s in order])
    except ValueError:
        ids = None
    return PairedDataset(x, cat, cont, final_cards, split, ids)
