import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timeweaver.data import (
    DataError, Metadata, PairedDataset, SINE, SyntheticConfig, TRIANGLE, fit_norm, generate_synthetic,
    normalize, read_csv, split, split_sizes, triangle_wave, write_csv,
)


def small(**kw):
    base = dict(n_samples=20, horizon=32, seed=3, switch_policy="half")
    base.update(kw)
    return generate_synthetic(SyntheticConfig(**base))


def test_half_split_labels():
    ds = small(horizon=96)
    assert (ds.categorical[:, :48, 0] == TRIANGLE).all()
    assert (ds.categorical[:, 48:, 0] == SINE).all()


def test_zero_amplitude_sine_is_zero():
    ds = small(families=("sine",), switch_policy="constant", amplitude_range=(0.0, 0.0), noise_std=0.0)
    assert (ds.x == 0).all()


def test_generator_deterministic():
    assert small(seed=11).equals(small(seed=11))
    assert not small(seed=11).equals(small(seed=12))


@pytest.mark.parametrize("policy", ["constant", "half", "segments"])
def test_noiseless_steps_lie_on_waveform(policy):
    # phase is the first draw of the seeded stream
    cfg = SyntheticConfig(n_samples=8, horizon=40, seed=9, noise_std=0.0, switch_policy=policy)
    ds = generate_synthetic(cfg)
    phase = np.random.default_rng(9).uniform(0.0, 2 * np.pi, size=8)
    t = np.arange(40)
    for i in range(8):
        f, a = ds.continuous[i, :, 0], ds.continuous[i, :, 1]
        theta = 2 * np.pi * f * t / 40 + phase[i]
        sine = ds.categorical[i, :, 0] == SINE
        np.testing.assert_allclose(ds.x[i, sine, 0], (a * np.sin(theta))[sine], atol=1e-9, rtol=0)
        tri = ~sine
        np.testing.assert_allclose(ds.x[i, tri, 0], (a * triangle_wave(theta))[tri], atol=1e-9, rtol=0)


def test_triangle_peak_at_quarter_period():
    assert triangle_wave(np.pi / 2) == pytest.approx(1.0)
    assert triangle_wave(0.0) == pytest.approx(0.0)
    assert triangle_wave(3 * np.pi / 2) == pytest.approx(-1.0)


def test_segments_respect_min_length():
    ds = small(switch_policy="segments", horizon=96, n_samples=50, min_segment=10)
    for i in range(len(ds)):
        f = ds.continuous[i, :, 0]
        change = np.flatnonzero(np.diff(f) != 0) + 1
        bounds = np.concatenate([[0], change, [96]])
        assert np.diff(bounds).min() >= 10


@pytest.mark.parametrize("kw", [
    dict(n_samples=0),
    dict(horizon=15, switch_policy="half"),
    dict(freq_range=(0.0, 1.0)),
    dict(freq_range=(3.0, 2.0)),
    dict(noise_std=-1.0),
    dict(min_segment=4),
])
def test_synthetic_config_rejects(kw):
    with pytest.raises(DataError):
        SyntheticConfig(**{**dict(horizon=32), **kw})


def test_dataset_is_immutable():
    ds = small()
    with pytest.raises(ValueError):
        ds.x[0, 0, 0] = 1.0


def test_metadata_validates_cardinality():
    with pytest.raises(DataError):
        Metadata(np.array([[2]]), np.zeros((1, 0)), (2,))
    with pytest.raises(DataError):
        Metadata(np.zeros((1, 0), dtype=int), np.zeros((1, 0)), ())


# --- normalization -------------------------------------------------------

def _ds(x, cont=None):
    x = np.asarray(x, dtype=float)
    n, length = x.shape[:2]
    cont = np.zeros((n, length, 1)) if cont is None else cont
    return PairedDataset(x, np.zeros((n, length, 1), dtype=int), cont, (1,))


def test_minmax_midpoint():
    train = _ds(np.array([-2.0, 0.0, 2.0]).reshape(1, 3, 1))
    out, _ = normalize(train, "minmax")
    np.testing.assert_allclose(out.x.ravel(), [-1.0, 0.0, 1.0])


def test_zscore_analytic():
    train = _ds(np.array([3.0, 7.0]).reshape(1, 2, 1))  # mean 5, std 2
    out, _ = normalize(train, "zscore")
    assert out.x[0, 1, 0] == pytest.approx(1.0)


def test_zscore_zero_variance_names_channel():
    x = np.stack([np.arange(4.0), np.ones(4)], axis=-1)[None]
    with pytest.raises(DataError, match="channel 1"):
        normalize(_ds(x), "zscore")


def test_minmax_constant_channel_maps_to_zero():
    out, stats = normalize(_ds(np.full((2, 3, 1), 4.0)), "minmax")
    assert (out.x == 0).all()
    np.testing.assert_array_equal(stats.invert(out).x, 4.0)


@pytest.mark.parametrize("mode", ["minmax", "zscore"])
def test_norm_round_trip(mode):
    ds = small(n_samples=40)
    train, val, test = split(ds, (0.8, 0.1, 0.1), seed=0)
    stats = fit_norm(train, mode)
    for part in (train, val, test):
        back = stats.invert(stats.apply(part))
        assert np.abs(back.x - part.x).max() < 1e-9
        assert np.abs(back.continuous - part.continuous).max() < 1e-9


def test_minmax_train_range():
    train, _, _ = split(small(n_samples=40), seed=1)
    out, _ = normalize(train, "minmax")
    assert out.x.min() == pytest.approx(-1.0) and out.x.max() == pytest.approx(1.0)


def test_norm_stats_ignore_val_and_test():
    ds = small(n_samples=40)
    train, val, test = split(ds, seed=2)
    before = fit_norm(train, "zscore")
    poisoned = [p.with_values(x=np.full_like(p.x, 1e6)) for p in (val, test)]
    after = fit_norm(train, "zscore")
    assert all(p.x.max() == 1e6 for p in poisoned)
    np.testing.assert_array_equal(before.x_shift, after.x_shift)
    np.testing.assert_array_equal(before.x_scale, after.x_scale)
    np.testing.assert_array_equal(before.cont_shift, after.cont_shift)


# --- split ---------------------------------------------------------------

def test_split_paper_ratio():
    parts = split(small(n_samples=100), (0.8, 0.1, 0.1), seed=0)
    assert [len(p) for p in parts] == [80, 10, 10]
    assert [p.split for p in parts] == ["train", "val", "test"]


def test_split_three_samples():
    parts = split(small(n_samples=3), (1 / 3, 1 / 3, 1 / 3), seed=0)
    assert [len(p) for p in parts] == [1, 1, 1]


def test_split_deterministic():
    a = split(small(n_samples=50), seed=5)
    b = split(small(n_samples=50), seed=5)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.ids, q.ids)


def test_split_rejects():
    with pytest.raises(DataError):
        split(small(n_samples=2))
    with pytest.raises(DataError):
        split(small(n_samples=10), (0.5, 0.5, 0.1))


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(3, 400),
    r=st.tuples(st.floats(0.05, 1), st.floats(0.05, 1), st.floats(0.05, 1)),
    seed=st.integers(0, 2**32 - 1),
)
def test_split_is_partition(n, r, seed):
    ratios = np.array(r) / sum(r)
    sizes = split_sizes(n, ratios)
    assert sum(sizes) == n
    assert all(abs(s - q * n) <= 1 for s, q in zip(sizes, ratios))
    ds = PairedDataset(np.zeros((n, 1, 1)), np.zeros((n, 1, 1), dtype=int), np.zeros((n, 1, 0)), (1,))
    parts = split(ds, tuple(ratios / ratios.sum()), seed)
    ids = [set(p.ids.tolist()) for p in parts]
    assert set().union(*ids) == set(range(n))
    assert sum(len(s) for s in ids) == n


# --- CSV -----------------------------------------------------------------

def test_csv_minimal(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("sample_id,t,x_0,cat_0\n0,0,1.5,1\n0,1,-2,0\n", encoding="utf-8")
    ds = read_csv(p, cardinalities=(2,))
    assert ds.x.shape == (1, 2, 1) and ds.n_cont == 0
    np.testing.assert_array_equal(ds.x[0, :, 0], [1.5, -2.0])
    np.testing.assert_array_equal(ds.categorical[0, :, 0], [1, 0])


def test_csv_round_trip(tmp_path):
    ds = small(n_samples=12, switch_policy="segments")
    p = tmp_path / "d.csv"
    write_csv(ds, p)
    back = read_csv(p, ds.cardinalities)
    assert np.abs(back.x - ds.x).max() <= 1e-12
    assert np.abs(back.continuous - ds.continuous).max() <= 1e-12
    np.testing.assert_array_equal(back.categorical, ds.categorical)
    np.testing.assert_array_equal(back.ids, ds.ids)
    raw = p.read_bytes()
    assert b"\r\n" not in raw
    assert raw.splitlines()[0] == b"sample_id,t,x_0,cat_0,cont_0,cont_1"


def test_csv_bound_violation_reports_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("sample_id,t,x_0,cat_0\n0,0,1,1\n0,1,1,2\n", encoding="utf-8")
    with pytest.raises(DataError, match="row 3"):
        read_csv(p, cardinalities=(2,))


@pytest.mark.parametrize("body,row", [
    ("sample_id,t,x_0,cat_0\n0,0,1,1\n0,1,1\n", "row 3"),
    ("sample_id,t,x_0,cat_0\n0,0,1,x\n", "row 2"),
    ("sample_id,x_0,cat_0\n0,1,1\n", "row 1"),
    ("sample_id,t,x_0,cat_0\n0,0,1,0\n0,1,1,0\n1,0,1,0\n", "row 4"),
])
def test_csv_errors_carry_row_numbers(tmp_path, body, row):
    p = tmp_path / "d.csv"
    p.write_text(body, encoding="utf-8")
    with pytest.raises(DataError, match=row):
        read_csv(p)


def test_csv_na_maps_to_unknown_label(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("sample_id,t,x_0,cat_0\n0,0,1,NA\n0,1,1,1\n", encoding="utf-8")
    ds = read_csv(p, cardinalities=(2,))
    assert ds.cardinalities == (3,)
    np.testing.assert_array_equal(ds.categorical[0, :, 0], [2, 1])
