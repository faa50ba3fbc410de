import math
import struct

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_difference, rel_err, supcon_double_sum
from streamhar import features as fx
from streamhar.artifacts import load_artifact, save_artifact
from streamhar.datasets import SensorWindow
from streamhar.errors import CorruptArtifact, InvalidConfig, NonFiniteLoss, NoPositive, ShapeMismatch, VersionMismatch


def small_cfg(**kw):
    base = dict(input_channels=2, window_len=32, embedding_dim=8, conv_channels=(8, 8), kernel_sizes=(3, 3),
                lstm_hidden=8, n_classes_base=2, epochs=0, batch_size=16)
    base.update(kw)
    return fx.FeConfig(**base)


def random_batch(seed):
    r = np.random.default_rng(seed)
    n_cls = int(r.integers(2, 5))
    n = int(r.integers(2 * n_cls, 17))
    y = np.r_[np.repeat(np.arange(n_cls), 2), r.integers(0, n_cls, n - 2 * n_cls)]
    d = int(r.integers(2, 9))
    return r.normal(size=(n, d)), r.permutation(y), float(r.uniform(0.05, 1.0))


# -- cross entropy -----------------------------------------------------------

def test_ce_examples():
    assert fx.cross_entropy_loss(torch.eye(3, dtype=torch.float64), [0, 1, 2]).item() == 0.0
    assert fx.cross_entropy_loss(torch.full((4, 5), 0.2, dtype=torch.float64), [0, 1, 2, 3]).item() == pytest.approx(math.log(5))
    p = torch.tensor([[0.5, 0.5], [0.75, 0.25]], dtype=torch.float64)
    assert fx.cross_entropy_loss(p, [0, 1]).item() == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)
    with pytest.raises(ShapeMismatch):
        fx.cross_entropy_loss(torch.ones(2, 2) / 2, [0, 1, 1])


# -- supervised contrastive ----------------------------------------------------

def test_supcon_matches_double_sum_200_batches():
    for seed in range(200):
        E, y, tau = random_batch(seed)
        ours = fx.supcon_loss(torch.tensor(E), torch.tensor(y), tau).item()
        assert rel_err(ours, supcon_double_sum(E, y, tau)) <= 1e-6


def test_supcon_raw_dot_product_variant():
    E, y, tau = random_batch(3)
    ours = fx.supcon_loss(torch.tensor(E), torch.tensor(y), tau, normalize=False).item()
    assert rel_err(ours, supcon_double_sum(E, y, tau, normalize=False)) <= 1e-6


@pytest.mark.parametrize("tau", [0.05, 0.1, 1.0, 7.0])
def test_supcon_identical_embeddings(tau):
    E = torch.ones(8, 4, dtype=torch.float64)
    y = torch.tensor([0, 0, 0, 0, 1, 1, 1, 1])
    val = fx.supcon_loss(E, y, tau).item()
    assert abs(val - 8 * math.log(7)) / (8 * math.log(7)) <= 1e-9


def test_supcon_no_positive():
    with pytest.raises(NoPositive):
        fx.supcon_loss(torch.randn(3, 4), torch.tensor([0, 0, 1]), 0.1)
    lonely = fx.supcon_loss(torch.randn(3, 4, dtype=torch.float64), torch.tensor([0, 0, 1]), 0.1, skip_lonely=True)
    assert torch.isfinite(lonely)


@given(st.integers(0, 10_000))
def test_supcon_permutation_and_scale_invariance(seed):
    E, y, tau = random_batch(seed)
    perm = np.random.default_rng(seed).permutation(len(y))
    scale = np.random.default_rng(seed + 1).uniform(0.1, 10.0, size=(len(y), 1))
    base = fx.supcon_loss(torch.tensor(E), torch.tensor(y), tau).item()
    assert rel_err(fx.supcon_loss(torch.tensor(E[perm]), torch.tensor(y[perm]), tau).item(), base) <= 1e-9
    assert rel_err(fx.supcon_loss(torch.tensor(E * scale), torch.tensor(y), tau).item(), base) <= 1e-9


def test_total_loss_additive_and_ablation():
    r = np.random.default_rng(0)
    logits = torch.tensor(r.normal(size=(4, 3)))
    y = torch.tensor([0, 1, 2, 0])
    E = torch.tensor(r.normal(size=(16, 5)))
    ya = y.repeat(4)
    total, ce, con = fx.total_fe_loss(logits, y, E, ya, tau=0.2)
    ce_ref = fx.cross_entropy_loss(torch.softmax(logits, 1), y)
    assert total.item() == pytest.approx(ce_ref.item() + fx.supcon_loss(E, ya, 0.2).item(), rel=1e-12)
    assert ce.item() == pytest.approx(ce_ref.item(), rel=1e-12)
    off, _, _ = fx.total_fe_loss(logits, y, E, ya, tau=0.2, use_contrastive=False)
    assert off.item() == pytest.approx(ce_ref.item(), rel=1e-12)
    assert con.item() > 0


def test_total_loss_zero_when_components_zero():
    logits = torch.tensor([[1e4, 0.0], [0.0, 1e4]], dtype=torch.float64)
    total, _, _ = fx.total_fe_loss(logits, torch.tensor([0, 1]), use_contrastive=False)
    assert total.item() == 0.0


# -- gradients ---------------------------------------------------------------

def autograd(f, x):
    t = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    f(t).backward()
    return t.grad.numpy()


@pytest.mark.parametrize("seed", range(5))
def test_supcon_gradient(seed):
    r = np.random.default_rng(seed)
    E = r.normal(size=(8, 4))
    y = torch.tensor([0, 0, 1, 1, 2, 2, 0, 1])

    def f(e):
        return fx.supcon_loss(e if torch.is_tensor(e) else torch.tensor(e), y, 0.5)

    num = central_difference(lambda e: f(e).item(), E, 1e-4)
    assert rel_err(autograd(f, E), num) <= 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_gradient(seed):
    r = np.random.default_rng(seed)
    logits = r.normal(size=(6, 4))
    y = r.integers(0, 4, 6)

    def f(z):
        z = z if torch.is_tensor(z) else torch.tensor(z)
        return fx.cross_entropy_loss(torch.softmax(z, 1), y)

    num = central_difference(lambda z: f(z).item(), logits, 1e-4)
    assert rel_err(autograd(f, logits), num) <= 1e-3


# -- model -------------------------------------------------------------------

@pytest.mark.parametrize("dim", [128, 64])
def test_embedding_width(dim):
    fe = fx.build_fe(fx.FeConfig(embedding_dim=dim))
    assert fe.embed_array(np.zeros((3, 64, 6))).shape == (3, dim)


def test_build_deterministic_and_invalid():
    assert fx.build_fe(small_cfg(seed=3)).parameter_checksum() == fx.build_fe(small_cfg(seed=3)).parameter_checksum()
    assert fx.build_fe(small_cfg(seed=3)).parameter_checksum() != fx.build_fe(small_cfg(seed=4)).parameter_checksum()
    with pytest.raises(InvalidConfig):
        fx.build_fe(small_cfg(tau=0.0))
    with pytest.raises(InvalidConfig):
        fx.build_fe(small_cfg(conv_channels=(8,)))
    with pytest.raises(InvalidConfig):
        fx.build_fe(small_cfg(embedding_dim=1))


def test_embed_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        fx.build_fe(small_cfg()).embed_array(np.zeros((2, 31, 2)))


def separable(n=40, seed=0):
    r = np.random.default_rng(seed)
    t = np.arange(32) / 32
    y = np.arange(n) % 2
    X = np.stack([np.stack([np.sin(2 * np.pi * (2 + 4 * c) * t), np.cos(2 * np.pi * (2 + 4 * c) * t)], 1) for c in y])
    return (X + 0.2 * r.normal(size=X.shape)).astype(np.float32), y


def test_train_separable_reaches_95_percent():
    X, y = separable()
    fe = fx.train_fe(fx.build_fe(small_cfg(epochs=50)), X, y)
    assert fe.frozen
    assert fe.history["train_accuracy"] >= 0.95
    losses = fe.history["loss"]
    assert len(losses) == 50 and np.all(np.isfinite(losses)) and losses[-1] < losses[0]
    assert (fe.predict_base(X) == y).mean() >= 0.95


def test_train_zero_epochs_is_frozen_init():
    X, y = separable(8)
    fresh = fx.build_fe(small_cfg())
    trained = fx.train_fe(fx.build_fe(small_cfg()), X, y)
    assert trained.frozen and trained.parameter_checksum() == fresh.parameter_checksum()


def test_train_deterministic():
    X, y = separable(16)
    a = fx.train_fe(fx.build_fe(small_cfg(epochs=3)), X, y)
    b = fx.train_fe(fx.build_fe(small_cfg(epochs=3)), X, y)
    assert a.parameter_checksum() == b.parameter_checksum()


def test_train_non_finite_loss():
    X, y = separable(8)
    X[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        fx.train_fe(fx.build_fe(small_cfg(epochs=2)), X, y)
    assert info.value.diagnostics


def test_frozen_embed_is_pure():
    X, y = separable(8)
    fe = fx.train_fe(fx.build_fe(small_cfg(epochs=1)), X, y)
    before = fe.parameter_checksum()
    first = fe.embed_array(X)
    for _ in range(3):
        np.testing.assert_array_equal(fe.embed_array(X), first)
    assert fe.parameter_checksum() == before
    assert all(not p.requires_grad for p in fe.net.parameters())


def test_embed_windows_copy_metadata_in_order():
    fe = fx.build_fe(small_cfg())
    X, y = separable(5)
    ws = [SensorWindow(x, int(c), 1, 10.0 + i, 1.0) for i, (x, c) in enumerate(zip(X, y))]
    out = fx.embed(fe, ws)
    assert [s.timestamp for s in out] == [w.timestamp for w in ws]
    assert [s.label for s in out] == list(y)
    np.testing.assert_array_equal(np.stack([s.vector for s in out]), fe.embed_array(X))


# -- artifacts ---------------------------------------------------------------

def test_save_load_roundtrip(tmp_path):
    X, y = separable(8)
    fe = fx.train_fe(fx.build_fe(small_cfg(epochs=1)), X, y)
    fx.save_fe(fe, tmp_path / "fe.bin")
    back = fx.load_fe(tmp_path / "fe.bin")
    assert back.frozen and back.cfg == fe.cfg and back.classes == fe.classes
    assert np.abs(back.embed_array(X) - fe.embed_array(X)).max() <= 1e-6
    header, _ = load_artifact(tmp_path / "fe.bin", fx.ARTIFACT_KIND)
    assert header["architecture"]["layers"] == fx.describe_layers(fe.cfg)


def test_truncated_and_bitflip(tmp_path):
    fx.save_fe(fx.build_fe(small_cfg()).freeze(), tmp_path / "fe.bin")
    raw = (tmp_path / "fe.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptArtifact):
        fx.load_fe(tmp_path / "cut.bin")
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0xFF
    (tmp_path / "flip.bin").write_bytes(bytes(flipped))
    with pytest.raises(CorruptArtifact):
        fx.load_fe(tmp_path / "flip.bin")


def test_version_mismatch(tmp_path):
    fx.save_fe(fx.build_fe(small_cfg()).freeze(), tmp_path / "fe.bin")
    raw = bytearray((tmp_path / "fe.bin").read_bytes())
    version = struct.unpack_from("<H", raw, 4)[0]
    struct.pack_into("<H", raw, 4, version + 1)
    (tmp_path / "v.bin").write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        fx.load_fe(tmp_path / "v.bin")


def test_artifact_blobs_are_little_endian_float32(tmp_path):
    t = np.arange(6, dtype=np.float32).reshape(2, 3)
    save_artifact(tmp_path / "a.bin", "demo", {"layers": []}, {"w": t})
    header, tensors = load_artifact(tmp_path / "a.bin", "demo")
    np.testing.assert_array_equal(tensors["w"], t)
    assert t.astype("<f4").tobytes() in (tmp_path / "a.bin").read_bytes()
    with pytest.raises(CorruptArtifact):
        load_artifact(tmp_path / "a.bin", "other")
