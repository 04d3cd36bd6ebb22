import mpmath
import numpy as np
import pytest

from oracles import scalar_frechet
from timeweaver.data import SyntheticConfig, generate_synthetic
from timeweaver.extractors import DualExtractor, ExtractorConfig
from timeweaver.harness.perturb import perturb
from timeweaver.metric import (
    GaussianStats, MatrixSqrtError, embed_dataset, extractor_checksum, frechet_distance, ftsd,
    gaussian_stats, grid_offsets, jftsd, matrix_sqrt_psd, metric_report,
)


def _random_stats(rng, d):
    b = rng.standard_normal((d + 3, d))
    return GaussianStats(rng.standard_normal(d), b.T @ b / d)


# --- Gaussian statistics ---------------------------------------------------

def test_stats_two_points():
    v = np.array([1.0, -2.0, 0.5])
    s = gaussian_stats(np.stack([v, -v]))
    np.testing.assert_array_equal(s.mu, 0)
    np.testing.assert_allclose(s.sigma, 2 * np.outer(v, v))


def test_stats_identical_points():
    s = gaussian_stats(np.tile([[3.0, 1.0]], (5, 1)))
    assert (s.sigma == 0).all()


def test_stats_extended_precision():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((25, 3)) * 10 + 100
    s = gaussian_stats(z)
    mpmath.mp.dps = 40
    rows = [[mpmath.mpf(float(v)) for v in r] for r in z]
    mu = [sum(r[j] for r in rows) / 25 for j in range(3)]
    for a in range(3):
        assert abs(float(mu[a]) - s.mu[a]) < 1e-10
        for b in range(3):
            c = sum((r[a] - mu[a]) * (r[b] - mu[b]) for r in rows) / 24
            assert abs(float(c) - s.sigma[a, b]) < 1e-10


def test_stats_rejects_single_row():
    with pytest.raises(ValueError):
        gaussian_stats(np.zeros((1, 4)))


# --- matrix square root ------------------------------------------------------

def test_sqrt_simple():
    np.testing.assert_allclose(matrix_sqrt_psd(np.eye(4)), np.eye(4))
    np.testing.assert_allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_sqrt_residual():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((6, 6))
    a = b.T @ b
    s = matrix_sqrt_psd(a)
    np.testing.assert_allclose(s, s.T)
    assert np.linalg.norm(s @ s - a) / np.linalg.norm(a) < 1e-6


def test_sqrt_rank_deficient_and_tiny_negative():
    v = np.array([[1.0], [2.0], [0.0]])
    a = v @ v.T
    a[2, 2] = -5e-9
    s = matrix_sqrt_psd(a)
    assert np.linalg.norm(s @ s - a) < 1e-6


def test_sqrt_rejects_indefinite():
    with pytest.raises(MatrixSqrtError):
        matrix_sqrt_psd(np.diag([1.0, -0.1]))


# --- Frechet distance --------------------------------------------------------

def test_frechet_scalar_example():
    s1 = GaussianStats(np.array([0.0]), np.array([[1.0]]))
    s2 = GaussianStats(np.array([3.0]), np.array([[4.0]]))
    assert frechet_distance(s1, s2) == pytest.approx(10.0, abs=1e-9)


def test_frechet_identical_is_zero():
    s = _random_stats(np.random.default_rng(2), 8)
    assert abs(frechet_distance(s, s)) < 1e-7


def test_frechet_diagonal_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m1, m2 = rng.standard_normal(3), rng.standard_normal(3)
        v1, v2 = rng.uniform(0.1, 3, 3), rng.uniform(0.1, 3, 3)
        got = frechet_distance(GaussianStats(m1, np.diag(v1)), GaussianStats(m2, np.diag(v2)))
        assert got == pytest.approx(sum(scalar_frechet(*a) for a in zip(m1, v1, m2, v2)), abs=1e-10)


def test_frechet_symmetric_and_nonnegative():
    rng = np.random.default_rng(4)
    for d in (1, 3, 10):
        a, b = _random_stats(rng, d), _random_stats(rng, d)
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)
        assert frechet_distance(a, b) >= 0


def test_frechet_singular_covariances_regularized():
    z = np.random.default_rng(5).standard_normal((3, 6))   # rank 2 in 6-D
    s = gaussian_stats(z)
    assert abs(frechet_distance(s, s)) < 1e-7


def test_frechet_dimension_mismatch():
    with pytest.raises(ValueError):
        frechet_distance(GaussianStats(np.zeros(2), np.eye(2)), GaussianStats(np.zeros(3), np.eye(3)))


# --- J-FTSD / FTSD with an untrained extractor --------------------------------

@pytest.fixture(scope="module")
def setup():
    ds = generate_synthetic(SyntheticConfig(n_samples=60, horizon=40, seed=7, switch_policy="half"))
    cfg = ExtractorConfig(patch_len=16, d_emb=6, d_model=16, heads=2, layers=2, dropout=0.0)
    import torch
    torch.manual_seed(0)
    return ds, DualExtractor(cfg).eval()


def test_grid_offsets():
    o = grid_offsets(40, 16, seed=3)
    assert len(o) == 2 and o[1] - o[0] == 16 and 0 <= o[0] <= 8
    np.testing.assert_array_equal(grid_offsets(40, 16, seed=3), o)
    np.testing.assert_array_equal(grid_offsets(32, 32), [0])


def test_embed_dataset_is_patch_mean(setup):
    ds, ext = setup
    z = embed_dataset(ext, ds, "time", patch_seed=1)
    o = grid_offsets(40, 16, 1)
    import torch
    with torch.no_grad():
        manual = np.mean([ext.embed_time(ds.x[:, a : a + 16].astype(np.float32)).double().numpy() for a in o], axis=0)
    np.testing.assert_allclose(z, manual, atol=1e-6)
    assert embed_dataset(ext, ds, "joint").shape == (60, 12)


def test_jftsd_self_is_zero(setup):
    ds, ext = setup
    assert jftsd(ds, ds.with_values(), ext) < 1e-6
    assert ftsd(ds, ds.with_values(), ext) < 1e-6


def test_jftsd_reorder_invariant(setup):
    ds, ext = setup
    other = perturb(ds, "gaussian_noise", 0.3, seed=1)
    perm = np.random.default_rng(0).permutation(len(ds))
    a = jftsd(ds, other, ext)
    b = jftsd(ds.subset(perm), other.subset(perm), ext)
    assert a == pytest.approx(b, rel=1e-6)


def test_ftsd_ignores_metadata(setup):
    ds, ext = setup
    flipped = perturb(ds, "label_flip", 1.0, seed=2)
    noisy = perturb(ds, "gaussian_noise", 0.2, seed=2)
    assert ftsd(ds, noisy, ext) == ftsd(ds, noisy.with_values(categorical=flipped.categorical), ext)


def test_metric_rejects_mismatched_extractor(setup):
    ds, _ = setup
    ext = DualExtractor(ExtractorConfig(cardinalities=(3,), patch_len=16, d_emb=6, d_model=16, heads=2, layers=1))
    with pytest.raises(ValueError, match="does not match"):
        jftsd(ds, ds, ext)


def test_metric_report_fields(setup):
    ds, ext = setup
    text = metric_report("jftsd", 0.25, 60, 60, ext)
    fields = dict(line.split("=", 1) for line in text.strip().splitlines())
    assert list(fields) == ["metric_name", "value", "n_real", "n_gen", "d_emb", "L_patch", "extractor_checksum"]
    assert float(fields["value"]) == 0.25 and fields["L_patch"] == "16"
    assert fields["extractor_checksum"] == extractor_checksum(ext)
