import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamhar import datasets as ds
from streamhar.errors import (AllMissingChannel, ChannelMismatch, DegenerateSplit, EmptyInput, InvalidSpec,
                              WindowTooLong)


def rec(channels, labels=None, rate=10.0, subject=1):
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim == 1:
        channels = channels[:, None]
    T = len(channels)
    labels = np.zeros(T, dtype=np.int64) if labels is None else np.asarray(labels)
    return ds.RawRecording(subject, rate, channels, labels, np.arange(T) / rate)


# -- cleansing ---------------------------------------------------------------

def test_interpolate_interior_gap():
    out = ds.interpolate_missing(rec([1.0, np.nan, 3.0]))
    np.testing.assert_array_equal(out.channels[:, 0], [1.0, 2.0, 3.0])


def test_interpolate_leading_gap_copies_nearest():
    out = ds.interpolate_missing(rec([np.nan, 5.0, 5.0]))
    np.testing.assert_array_equal(out.channels[:, 0], [5.0, 5.0, 5.0])


def test_interpolate_no_nan_is_identity():
    x = np.random.default_rng(0).normal(size=(20, 3))
    out = ds.interpolate_missing(rec(x))
    np.testing.assert_array_equal(out.channels, x)


def test_interpolate_all_missing_channel():
    with pytest.raises(AllMissingChannel):
        ds.interpolate_missing(rec(np.array([[1.0, np.nan], [2.0, np.nan]])))


@given(st.lists(st.one_of(st.none(), st.floats(-1e3, 1e3)), min_size=2, max_size=40).filter(
    lambda v: any(x is not None for x in v)))
def test_interpolate_idempotent_and_preserves_finite(values):
    x = np.array([np.nan if v is None else v for v in values])
    once = ds.interpolate_missing(rec(x))
    twice = ds.interpolate_missing(once)
    assert not np.isnan(once.channels).any()
    np.testing.assert_array_equal(once.channels, twice.channels)
    finite = ~np.isnan(x)
    np.testing.assert_array_equal(once.channels[finite, 0], x[finite])


# -- windowing ---------------------------------------------------------------

def test_pamap2_window_geometry():
    W = ds.window_length(5.12, 100.0)
    assert (W, ds.window_stride(W, 0.78)) == (512, 113)


def test_window_count_small_case():
    wins = ds.segment_windows(rec(np.zeros(100)), 2.0, 0.5)  # W = 20 at 10 Hz
    assert len(wins) == 9
    assert [w.timestamp for w in wins[:2]] == [0.0, 1.0]


def test_full_length_window():
    assert len(ds.segment_windows(rec(np.zeros(20)), 2.0, 0.5)) == 1


def test_window_too_long():
    with pytest.raises(WindowTooLong):
        ds.segment_windows(rec(np.zeros(10)), 2.0, 0.0)


def test_majority_label_tie_goes_to_smallest():
    assert ds.majority_label(np.array([3, 3, 1, 1, 2])) == 1
    assert ds.majority_label(np.array([4, 4, 4, 0])) == 4


@given(T=st.integers(1, 400), W=st.integers(1, 400), overlap=st.floats(0.0, 0.99))
def test_window_count_closed_form(T, W, overlap):
    if W > T:
        return
    stride = ds.window_stride(W, overlap)
    wins = ds.segment_windows(rec(np.zeros(T)), W / 10.0, overlap)
    assert len(wins) == (T - W) // stride + 1
    assert all(w.data.shape == (W, 1) for w in wins)


# -- normalisation -----------------------------------------------------------

def win(data, label=0, subject=1, t=0.0):
    return ds.SensorWindow(np.asarray(data, dtype=np.float64), label, subject, t, 1.0)


def test_normalizer_zero_window_floors_std():
    n = ds.fit_normalizer([win(np.zeros((4, 2)))])
    np.testing.assert_array_equal(n.mean, 0.0)
    np.testing.assert_array_equal(n.std, 1e-8)


def test_normalizer_population_std():
    n = ds.fit_normalizer([win([[-1.0], [1.0]])])
    assert n.mean[0] == 0.0 and n.std[0] == 1.0


def test_normalizer_constant_channel():
    n = ds.fit_normalizer([win(np.full((5, 1), 7.0))])
    assert n.mean[0] == 7.0 and n.std[0] == 1e-8


def test_normalizer_empty():
    with pytest.raises(EmptyInput):
        ds.fit_normalizer([])


def test_normalize_identity_and_mismatch():
    x = np.random.default_rng(1).normal(size=(6, 3))
    out = ds.normalize([win(x)], ds.Normalizer(np.zeros(3), np.ones(3)))
    np.testing.assert_array_equal(out[0].data, x)
    with pytest.raises(ChannelMismatch):
        ds.normalize([win(x)], ds.Normalizer(np.zeros(4), np.ones(4)))


@given(st.integers(0, 10_000))
def test_normalize_then_refit_is_standard(seed):
    rng = np.random.default_rng(seed)
    ws = [win(rng.normal(3.0, 5.0, size=(16, 3)) * rng.uniform(0.1, 10, size=3)) for _ in range(4)]
    again = ds.fit_normalizer(ds.normalize(ws, ds.fit_normalizer(ws)))
    assert np.abs(again.mean).max() <= 1e-6
    assert np.abs(again.std - 1).max() <= 1e-6


# -- scenario split ----------------------------------------------------------

def grid_windows(classes=range(4), subjects=range(4), per=3):
    return [win(np.zeros((2, 1)), c, s, float(i)) for c in classes for s in subjects for i in range(per)]


@given(st.sets(st.integers(0, 5), min_size=1, max_size=5), st.sets(st.integers(0, 5), min_size=1, max_size=5))
def test_regions_partition(base, new_subj):
    ws = grid_windows(range(6), range(6), 1)
    try:
        split = ds.scenario_split(ws, base, new_subj, ds.WITHIN_SUBJECT)
    except DegenerateSplit:
        return
    seen = [id(w) for r in split.regions.values() for w in r]
    assert sorted(seen) == sorted(id(w) for w in ws)
    for r, members in split.regions.items():
        for w in members:
            assert ds.region_of(w.label, w.subject_id, base, new_subj) == r


def test_within_subject_pool_inside_test():
    split = ds.scenario_split(grid_windows(), {0, 1}, {3}, ds.WITHIN_SUBJECT)
    assert {id(w) for w in split.rm_train_pool} <= {id(w) for w in split.test}
    assert all(w.label in {0, 1} and w.subject_id != 3 for w in split.fe_train)


def test_between_subject_disjoint_subjects():
    split = ds.scenario_split(grid_windows(), {0, 1}, {3}, ds.BETWEEN_SUBJECT)
    assert {w.subject_id for w in split.rm_train_pool}.isdisjoint({w.subject_id for w in split.test})


def test_pamap2_layout_regions():
    ws = grid_windows(classes=range(12), subjects=range(1, 9), per=1)
    base = set(range(7))
    split = ds.scenario_split(ws, base, {5, 6}, ds.WITHIN_SUBJECT)
    assert all(w.subject_id in {5, 6} for w in split.test)
    assert {w.label for w in split.regions[2]} == base
    assert {w.label for w in split.regions[4]} == set(range(7, 12))
    assert {w.label for w in split.regions[3]} == set(range(7, 12))


def test_degenerate_split():
    with pytest.raises(DegenerateSplit):
        ds.scenario_split(grid_windows(), {0, 1}, {0, 1, 2, 3}, ds.WITHIN_SUBJECT)


# -- synthetic data ----------------------------------------------------------

def test_synth_deterministic():
    a = ds.synth_generate(ds.SynthSpec(n_classes=3, n_subjects=2, samples_per_class=200))
    b = ds.synth_generate(ds.SynthSpec(n_classes=3, n_subjects=2, samples_per_class=200))
    for ra, rb in zip(a, b):
        assert ra.channels.tobytes() == rb.channels.tobytes()


def test_synth_counts():
    recs = ds.synth_generate(ds.SynthSpec(n_classes=8, n_subjects=2, samples_per_class=100))
    assert len(recs) == 16
    assert set(np.concatenate([r.labels for r in recs]).tolist()) == set(range(8))


def test_synth_noiseless_is_periodic_waveform():
    spec = ds.SynthSpec(n_classes=2, n_subjects=1, samples_per_class=8000, sample_rate_hz=1000.0, noise_sigma=0.0)
    clean = ds.synth_generate(spec)[0].channels
    noisy = ds.synth_generate(ds.SynthSpec(**{**spec.__dict__, "noise_sigma": 0.3}))[0].channels
    assert abs(np.std(noisy - clean) - 0.3) < 0.01
    x = clean[:, 0]
    lags = np.arange(300, 4000)
    err = [np.max(np.abs(x[:3000] - x[L:L + 3000])) for L in lags]
    # one sample of phase error at 1 kHz bounds the mismatch at the best integer lag
    assert min(err) < 0.05 * np.ptp(x)


def test_synth_rejects_single_class():
    with pytest.raises(InvalidSpec):
        ds.synth_generate(ds.SynthSpec(n_classes=1))


def test_timestamps_strictly_increasing_required():
    with pytest.raises(ValueError):
        ds.RawRecording(1, 10.0, np.zeros((3, 1)), np.zeros(3), np.array([0.0, 0.0, 1.0]))


# -- interchange and native loaders -------------------------------------------

def test_csv_roundtrip(tmp_path):
    r = rec(np.array([[1.5, np.nan], [2.0, 3.0], [2.5, -1.0]]), labels=[4, 4, 5], subject=9)
    p = tmp_path / "r.csv"
    ds.write_csv_recording(r, p)
    assert p.read_text().splitlines()[0] == "subject_id,timestamp,label,ch_0,ch_1"
    assert "NaN" in p.read_text()
    back = ds.read_csv_recording(p)
    np.testing.assert_array_equal(back.channels, r.channels)
    np.testing.assert_array_equal(back.labels, r.labels)
    np.testing.assert_array_equal(back.timestamps, r.timestamps)
    assert back.subject_id == 9 and back.sample_rate_hz == pytest.approx(10.0)


def test_load_pamap2(tmp_path):
    rows = []
    for i, act in enumerate([0, 0, 1, 1, 1, 9, 9, 2, 2]):
        rows.append(" ".join([f"{i / 100:.2f}", str(act)] + ["NaN" if i == 3 and c == 0 else f"{i + c}" for c in range(52)]))
    (tmp_path / "subject105.dat").write_text("\n".join(rows) + "\n")
    recs = ds.load_pamap2(tmp_path, activities=(1, 2))
    assert [(r.subject_id, int(r.labels[0]), len(r.labels)) for r in recs] == [(105, 1, 3), (105, 2, 2)]
    assert recs[0].channels.shape[1] == 52 and recs[0].sample_rate_hz == 100.0
    assert np.isnan(recs[0].channels[1, 0])
    assert ds.load_pamap2(tmp_path, activities=(1,), channels=[1, 2])[0].channels.shape[1] == 2


def test_load_hapt(tmp_path):
    acc = np.arange(30, dtype=float).reshape(10, 3)
    np.savetxt(tmp_path / "acc_exp01_user02.txt", acc)
    np.savetxt(tmp_path / "gyro_exp01_user02.txt", -acc)
    (tmp_path / "labels.txt").write_text("1 2 5 1 4\n1 2 7 6 10\n")
    recs = ds.load_hapt(tmp_path)
    assert [(r.subject_id, int(r.labels[0]), len(r.labels)) for r in recs] == [(2, 5, 4), (2, 7, 5)]
    np.testing.assert_array_equal(recs[1].channels[0], np.r_[acc[5], -acc[5]])
    assert recs[0].sample_rate_hz == 50.0


def test_load_dsads(tmp_path):
    for a in (1, 2):
        d = tmp_path / f"a{a:02d}" / "p3"
        d.mkdir(parents=True)
        for s in (1, 2):
            np.savetxt(d / f"s{s:02d}.txt", np.full((125, 45), 10 * a + s), delimiter=",")
    recs = ds.load_dsads(tmp_path)
    assert [(r.subject_id, int(r.labels[0]), r.channels.shape) for r in recs] == [(3, 1, (250, 45)), (3, 2, (250, 45))]
    wins = ds.segment_windows(recs[0], 5.0, 0.0)
    assert [w.data[0, 0] for w in wins] == [11.0, 12.0]
