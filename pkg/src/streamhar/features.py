"""Conv + LSTM feature extractor trained with cross-entropy plus SupCon.

After ``train_fe`` the model is frozen and only used as an embedding function;
the embedding is the output of the penultimate (linear) layer.
"""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .artifacts import load_artifact, save_artifact
from .augment import AugmentationConfig, augment_fourfold
from .datasets import Normalizer, SensorWindow
from .errors import InputError, InvalidConfig, NonFiniteLoss, NoPositive, ShapeMismatch

log = logging.getLogger(__name__)

ARTIFACT_KIND = "feature_extractor"


@dataclass
class FeConfig:
    input_channels: int = 6
    window_len: int = 64
    embedding_dim: int = 128
    conv_channels: tuple = (64, 128)
    kernel_sizes: tuple = (5, 5)
    lstm_hidden: int = 128
    n_classes_base: int = 5
    tau: float = 0.1
    lr: float = 1e-3
    batch_size: int = 50
    epochs: int = 50
    seed: int = 0
    supcon_normalize: bool = True
    use_contrastive: bool = True

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)

    def validate(self):
        if self.embedding_dim < 2:
            raise InvalidConfig("embedding_dim must be >= 2")
        if not self.tau > 0:
            raise InvalidConfig("tau must be positive")
        if len(self.conv_channels) != len(self.kernel_sizes):
            raise InvalidConfig("conv_channels and kernel_sizes differ in length")
        if min(self.input_channels, self.window_len, self.lstm_hidden, self.n_classes_base) < 1:
            raise InvalidConfig("channel, length, hidden and class counts must be positive")
        if self.batch_size < 1 or self.epochs < 0 or not self.lr > 0:
            raise InvalidConfig("batch_size >= 1, epochs >= 0 and lr > 0 required")
        if conv_output_length(self) < 1:
            raise InvalidConfig(f"window_len {self.window_len} is too short for the conv stack")


@dataclass
class EmbeddingSample:
    vector: np.ndarray
    label: Optional[int]
    timestamp: float


def conv_output_length(cfg: FeConfig) -> int:
    L = cfg.window_len
    for k in cfg.kernel_sizes:
        L = (L + 2 * (k // 2) - k) // 2 + 1  # stride-2 conv
        L = L // 2  # max-pool 2
    return L


def describe_layers(cfg: FeConfig) -> list:
    layers, c_in = [], cfg.input_channels
    for c_out, k in zip(cfg.conv_channels, cfg.kernel_sizes):
        layers += [
            {"type": "conv1d", "in": c_in, "out": c_out, "kernel": k, "stride": 2, "padding": k // 2},
            {"type": "relu"},
            {"type": "maxpool1d", "size": 2},
        ]
        c_in = c_out
    layers += [
        {"type": "lstm", "in": c_in, "hidden": cfg.lstm_hidden, "layers": 1},
        {"type": "mean_over_time"},
        {"type": "linear", "in": cfg.lstm_hidden, "out": cfg.embedding_dim, "role": "embedding"},
        {"type": "linear", "in": cfg.embedding_dim, "out": cfg.n_classes_base, "role": "head"},
    ]
    return layers


class FeNet(nn.Module):
    def __init__(self, cfg: FeConfig):
        super().__init__()
        blocks, c_in = [], cfg.input_channels
        for c_out, k in zip(cfg.conv_channels, cfg.kernel_sizes):
            blocks += [nn.Conv1d(c_in, c_out, k, stride=2, padding=k // 2), nn.ReLU(), nn.MaxPool1d(2)]
            c_in = c_out
        self.conv = nn.Sequential(*blocks)
        self.lstm = nn.LSTM(c_in, cfg.lstm_hidden, batch_first=True)
        self.embedding = nn.Linear(cfg.lstm_hidden, cfg.embedding_dim)
        self.head = nn.Linear(cfg.embedding_dim, cfg.n_classes_base)

    def embed(self, x):
        # x: [B, W, C]
        h = self.conv(x.transpose(1, 2))
        out, _ = self.lstm(h.transpose(1, 2))
        return self.embedding(out.mean(dim=1))

    def forward(self, x):
        e = self.embed(x)
        return e, self.head(e)


class FeModel:
    """Network plus the bookkeeping needed to use it as a frozen embedder."""

    def __init__(self, cfg: FeConfig, net: FeNet):
        self.cfg = cfg
        self.net = net
        self.frozen = False
        self.classes: list = []
        self.normalizer: Optional[Normalizer] = None
        self.history: dict = {}

    @property
    def embedding_dim(self) -> int:
        return self.cfg.embedding_dim

    def freeze(self):
        self.frozen = True
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        return self

    def parameter_checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.net.state_dict().items():
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 2:
            X = X[None]
        expected = (self.cfg.window_len, self.cfg.input_channels)
        if X.ndim != 3 or X.shape[1:] != expected:
            raise ShapeMismatch(f"expected windows shaped [*, {expected[0]}, {expected[1]}], got {X.shape}")
        return X

    def embed_array(self, X, chunk: int = 512) -> np.ndarray:
        X = self._check_input(X)
        was_training = self.net.training
        self.net.eval()
        outs = []
        with torch.no_grad():
            for a in range(0, len(X), chunk):
                outs.append(self.net.embed(torch.from_numpy(X[a : a + chunk])).numpy())
        self.net.train(was_training)
        if not outs:
            return np.zeros((0, self.cfg.embedding_dim), dtype=np.float32)
        return np.concatenate(outs)

    def predict_base(self, X) -> np.ndarray:
        """Base-class predictions from the classification head (original label ids)."""
        X = self._check_input(X)
        self.net.eval()
        with torch.no_grad():
            _, logits = self.net(torch.from_numpy(X))
        return np.asarray(self.classes)[logits.argmax(dim=1).numpy()]


def build_fe(cfg: FeConfig) -> FeModel:
    cfg.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        net = FeNet(cfg)
    return FeModel(cfg, net)


# ---------------------------------------------------------------------------
# losses


def cross_entropy_loss(probabilities, labels) -> torch.Tensor:
    """Mean negative log-probability of the true class; rows must be distributions."""
    p = torch.as_tensor(probabilities)
    y = torch.as_tensor(labels, dtype=torch.long)
    if p.ndim != 2 or y.ndim != 1 or p.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"probabilities {tuple(p.shape)} vs labels {tuple(y.shape)}")
    if y.numel() and (y.min() < 0 or y.max() >= p.shape[1]):
        raise ShapeMismatch("label index outside the probability columns")
    return -torch.log(p[torch.arange(p.shape[0]), y]).mean()


def supcon_loss(embeddings, labels, tau: float, normalize: bool = True, skip_lonely: bool = False) -> torch.Tensor:
    """Supervised contrastive loss summed over anchors.

    For anchor ``a`` the log-ratio ``E_a.E_p/tau - log sum_{j != a} exp(E_a.E_j/tau)``
    is averaged over its positives ``p`` (same label, ``p != a``). Anchors without
    positives raise ``NoPositive`` unless ``skip_lonely`` drops them.
    """
    E = torch.as_tensor(embeddings)
    y = torch.as_tensor(labels)
    if E.ndim != 2 or y.ndim != 1 or E.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"embeddings {tuple(E.shape)} vs labels {tuple(y.shape)}")
    n = E.shape[0]
    if n < 2:
        raise InputError("supcon_loss needs at least two samples")
    if normalize:
        E = F.normalize(E, dim=1)
    eye = torch.eye(n, dtype=torch.bool, device=E.device)
    sim = (E @ E.T) / tau
    # logsumexp subtracts the row max internally
    log_denom = torch.logsumexp(sim.masked_fill(eye, float("-inf")), dim=1)
    pos = (y[:, None] == y[None, :]) & ~eye
    n_pos = pos.sum(dim=1)
    lonely = n_pos == 0
    if lonely.any() and not skip_lonely:
        raise NoPositive(f"{int(lonely.sum())} anchors have no positive")
    log_prob = (sim - log_denom[:, None]).masked_fill(~pos, 0.0)
    per_anchor = -log_prob.sum(dim=1) / n_pos.clamp_min(1)
    return per_anchor[~lonely].sum()


def total_fe_loss(logits, labels, aug_embeddings=None, aug_labels=None, tau: float = 0.1,
                  use_contrastive: bool = True, normalize: bool = True, skip_lonely: bool = False):
    """``L_ce`` on the original windows plus ``L_con`` on their augmentations.

    Returns ``(total, ce, con)``; ``con`` is zero when ``use_contrastive`` is off.
    """
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    # equal to cross_entropy_loss(softmax(logits)) without the underflow
    ce = -F.log_softmax(logits, dim=1)[torch.arange(logits.shape[0]), labels].mean()
    if not use_contrastive:
        return ce, ce, torch.zeros((), dtype=ce.dtype)
    con = supcon_loss(aug_embeddings, aug_labels, tau, normalize=normalize, skip_lonely=skip_lonely)
    return ce + con, ce, con


# ---------------------------------------------------------------------------
# training


def train_fe(fe: FeModel, X, y, aug_cfg: AugmentationConfig | None = None) -> FeModel:
    """Minimise the joint loss for ``cfg.epochs`` epochs, then freeze.

    ``X`` is ``[N, W, C]`` (normalised, balanced), ``y`` the base-class ids.
    The loss history lands in ``fe.history``.
    """
    if fe.frozen:
        raise InputError("cannot train a frozen feature extractor")
    cfg = fe.cfg
    X = fe._check_input(X)
    y = np.asarray(y)
    classes = sorted(int(c) for c in np.unique(y))
    if len(classes) > cfg.n_classes_base:
        raise InputError(f"{len(classes)} classes in the data but the head has {cfg.n_classes_base}")
    fe.classes = classes
    yi = np.searchsorted(classes, y).astype(np.int64)
    N = len(X)

    Xt = torch.from_numpy(X)
    yt = torch.from_numpy(yi)
    if cfg.use_contrastive:
        X4, _ = augment_fourfold(X, yi, aug_cfg or AugmentationConfig(seed=cfg.seed))
        X4t = torch.from_numpy(X4.astype(np.float32))

    opt = torch.optim.Adam(fe.net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    hist = {"loss": [], "ce": [], "con": []}
    fe.net.train()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(N)
        tot = ce_sum = con_sum = 0.0
        steps = 0
        for a in range(0, N, cfg.batch_size):
            b = torch.from_numpy(perm[a : a + cfg.batch_size])
            if cfg.use_contrastive:
                aug_idx = torch.cat([b + m * N for m in range(4)])
                emb = fe.net.embed(torch.cat([Xt[b], X4t[aug_idx]]))
                logits = fe.net.head(emb[: len(b)])
                loss, ce, con = total_fe_loss(
                    logits, yt[b], emb[len(b):], yt[b].repeat(4), cfg.tau,
                    normalize=cfg.supcon_normalize, skip_lonely=True,
                )
            else:
                _, logits = fe.net(Xt[b])
                loss, ce, con = total_fe_loss(logits, yt[b], use_contrastive=False)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, step {steps}",
                    {"epoch": epoch, "step": steps, "ce": ce.item(), "con": con.item()},
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item()
            ce_sum += ce.item()
            con_sum += con.item()
            steps += 1
        hist["loss"].append(tot / steps)
        hist["ce"].append(ce_sum / steps)
        hist["con"].append(con_sum / steps)
        log.debug("fe epoch %d loss %.4f", epoch, hist["loss"][-1])

    fe.freeze()
    hist["train_accuracy"] = float(np.mean(fe.predict_base(X) == y))
    hist["use_contrastive"] = bool(cfg.use_contrastive)
    fe.history = hist
    return fe


def embed(fe: FeModel, windows) -> list:
    """Embed one window or a sequence of windows; labels and timestamps are copied over."""
    single = isinstance(windows, SensorWindow)
    ws: Sequence[SensorWindow] = [windows] if single else list(windows)
    vecs = fe.embed_array(np.stack([w.data for w in ws])) if ws else []
    out = [EmbeddingSample(v, w.label, float(w.timestamp)) for v, w in zip(vecs, ws)]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# persistence


def save_fe(fe: FeModel, path) -> int:
    tensors = {k: v.detach().cpu().numpy() for k, v in fe.net.state_dict().items()}
    arch = asdict(fe.cfg)
    arch["layers"] = describe_layers(fe.cfg)
    extra = {"classes": list(fe.classes), "history": fe.history}
    if fe.normalizer is not None:
        extra["normalizer"] = {"mean": fe.normalizer.mean.tolist(), "std": fe.normalizer.std.tolist()}
    return save_artifact(path, ARTIFACT_KIND, arch, tensors, extra)


def load_fe(path) -> FeModel:
    header, tensors = load_artifact(path, expected_kind=ARTIFACT_KIND)
    arch = dict(header["architecture"])
    arch.pop("layers", None)
    fe = build_fe(FeConfig(**arch))
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    fe.net.load_state_dict(state, strict=True)
    extra = header.get("extra", {})
    fe.classes = list(extra.get("classes", []))
    fe.history = extra.get("history", {})
    if "normalizer" in extra:
        fe.normalizer = Normalizer(extra["normalizer"]["mean"], extra["normalizer"]["std"])
    return fe.freeze()


def frozen_copy(fe: FeModel) -> FeModel:
    out = FeModel(fe.cfg, copy.deepcopy(fe.net))
    out.classes, out.normalizer, out.history = list(fe.classes), fe.normalizer, dict(fe.history)
    return out.freeze()
