import numpy as np


def _as_series(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("DTW needs a non-empty (length, channels) series")
    return x


def dtw(x, y) -> float:
    """Dynamic time warping cost with Euclidean local distance over channels.

    Steps (1,0), (0,1) and (1,1) all carry weight 1, so the result is the
    cheapest sum of local costs along any monotone alignment path.
    """
    x, y = _as_series(x), _as_series(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"channel mismatch: {x.shape[1]} vs {y.shape[1]}")
    cost = np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1))
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev = acc[i], acc[i - 1]
        c = cost[i - 1]
        for j in range(1, m + 1):
            row[j] = c[j - 1] + min(prev[j - 1], prev[j], row[j - 1])
    return float(acc[n, m])


def paired_dtw(real: np.ndarray, gen: np.ndarray) -> np.ndarray:
    """DTW between matching rows of two ``(N, L, F)`` arrays."""
    if len(real) != len(gen):
        raise ValueError("paired DTW needs equally sized sets")
    return np.array([dtw(a, b) for a, b in zip(real, gen)])
