import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import d_m_bruteforce
from streamhar import replay as rp
from streamhar.errors import CorruptArtifact, DimensionMismatch, EmptyClass
from streamhar.features import EmbeddingSample


def sample(c, t, d=4, v=None):
    return EmbeddingSample(np.full(d, t if v is None else v, dtype=np.float32), c, float(t))


def full_buffer(ts, N=None, c=0, d=4):
    buf = rp.ReplayBuffer(N or len(ts), d)
    buf.store[c] = [sample(c, t, d) for t in ts]
    buf.replaced_since_retrain[c] = 0
    return buf


def test_d_m_examples():
    assert rp.d_m([1, 2, 10]) == 10
    assert rp.d_m([3, 7]) == 8
    assert rp.d_m([5]) == 0 and rp.d_m([]) == 0


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), max_size=64))
def test_d_m_equals_bruteforce(ts):
    assert rp.d_m(ts) == d_m_bruteforce(ts)


def test_init_from_base_sizes_and_seed():
    by_class = {0: [sample(0, t) for t in range(100)], 1: [sample(1, t) for t in range(7)]}
    a = rp.init_from_base(by_class, 20, np.random.default_rng(1))
    b = rp.init_from_base(by_class, 20, np.random.default_rng(1))
    assert a.counts() == {0: 20, 1: 7}
    assert a.timestamps(0) == b.timestamps(0)
    assert a.replaced_since_retrain == {0: 0, 1: 0}
    assert rp.should_retrain(a) == (False, None)
    with pytest.raises(EmptyClass):
        rp.init_from_base({0: []}, 20, np.random.default_rng())


def test_update_replaces_when_sparsity_grows():
    buf = full_buffer([0, 1, 2, 3])
    before = buf.class_d_m(0)
    candidates = [d_m_bruteforce([x for j, x in enumerate([0, 1, 2, 3]) if j != i] + [100]) for i in range(4)]
    assert max(candidates) > before
    buf, report = rp.update(buf, [sample(0, 100)])
    assert len(report.replaced) == 1 and report.replaced[0][1] in (1.0, 2.0)
    assert report.replaced[0][1] == 1.0  # tie between 1 and 2 evicts the older
    assert buf.class_d_m(0) == max(candidates)
    assert buf.replaced_since_retrain[0] == 1


def test_update_rejects_duplicate_in_even_class():
    buf = full_buffer([0, 10, 20, 30])
    buf, report = rp.update(buf, [sample(0, 20)])
    assert report.rejected == [(0, 20.0)] and buf.timestamps(0) == [0, 10, 20, 30]
    assert buf.replaced_since_retrain[0] == 0


def test_update_new_class_and_non_full_insert():
    buf = full_buffer([0, 1, 2], N=5)
    buf, report = rp.update(buf, [sample(7, 50), sample(0, 60)])
    assert report.new_classes == [7] and buf.counts() == {0: 4, 7: 1}
    assert report.inserted == [(7, 50.0), (0, 60.0)]
    assert rp.should_retrain(buf) == (True, "new_class")


def test_update_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        rp.update(full_buffer([0, 1]), [sample(0, 5, d=3)])


@pytest.mark.parametrize("N,expected", [(20, 5), (15, 4), (4, 1), (1, 1)])
def test_threshold(N, expected):
    assert rp.replacement_threshold(N) == expected


def test_should_retrain_examples():
    buf = full_buffer(list(range(20)))
    buf.replaced_since_retrain[0] = 4
    assert rp.should_retrain(buf) == (False, None)
    buf.replaced_since_retrain[0] = 5
    assert rp.should_retrain(buf) == (True, "replacement")
    rp.reset_trigger(buf)
    assert buf.replaced_since_retrain == {0: 0} and rp.should_retrain(buf) == (False, None)
    assert buf.known_classes == {0}


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_random_updates_keep_invariants(seed, N):
    r = np.random.default_rng(seed)
    buf = rp.ReplayBuffer(N, 2)
    for _ in range(60):
        c = int(r.integers(0, 3))
        t = float(r.integers(0, 200))
        full = c in buf.store and len(buf.store[c]) == N
        before_dm = buf.class_d_m(c) if c in buf.store else None
        before_cnt = buf.replaced_since_retrain.get(c, 0)
        _, report = rp.update(buf, [sample(c, t, d=2)])
        assert len(buf.store[c]) <= N
        assert buf.replaced_since_retrain[c] == before_cnt + len(report.replaced)
        if full:
            assert buf.class_d_m(c) >= before_dm
            if report.replaced:
                assert buf.class_d_m(c) > before_dm


def snapshot_buffer():
    r = np.random.default_rng(0)
    buf = rp.ReplayBuffer(20, 128)
    for c in range(12):
        buf.store[c * 3] = [EmbeddingSample(r.normal(size=128).astype(np.float32), c * 3, float(r.uniform(0, 1e5)))
                            for _ in range(20)]
        buf.replaced_since_retrain[c * 3] = c % 4
    buf.new_since_retrain.add(33)
    return buf


def test_snapshot_roundtrip_and_size(tmp_path):
    buf = snapshot_buffer()
    size = rp.snapshot_save(buf, tmp_path / "r.bin")
    back = rp.snapshot_load(tmp_path / "r.bin")
    assert back.counts() == buf.counts() and back.replaced_since_retrain == buf.replaced_since_retrain
    assert back.new_since_retrain == buf.new_since_retrain
    for c in buf.classes:
        np.testing.assert_array_equal(back.arrays(c)[0], buf.arrays(c)[0])
        assert back.timestamps(c) == buf.timestamps(c)
    rp.snapshot_save(back, tmp_path / "r2.bin")
    assert (tmp_path / "r.bin").read_bytes() == (tmp_path / "r2.bin").read_bytes()
    payload = 12 * 20 * (128 * 4 + 8)
    assert payload <= size <= payload + 1024
    assert size == buf.nbytes()


def test_snapshot_truncated(tmp_path):
    rp.snapshot_save(snapshot_buffer(), tmp_path / "r.bin")
    raw = (tmp_path / "r.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-100])
    with pytest.raises(CorruptArtifact):
        rp.snapshot_load(tmp_path / "t.bin")


def test_footprint_independent_of_stream_length():
    r = np.random.default_rng(0)
    buf = rp.ReplayBuffer(10, 4)
    sizes = []
    for step in range(2000):
        rp.update(buf, [sample(int(r.integers(0, 3)), float(step))])
        if step in (500, 1999):
            sizes.append(buf.nbytes())
    assert sizes[0] == sizes[1]
