"""Relation module: a learned comparator over (class representative, query) pairs.

Trained episodically from the replay buffer; at inference every class is
represented by the mean of all its replay embeddings. ``Mlp3`` is the plain
three-layer classifier used for the ablation comparison.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .artifacts import load_artifact, save_artifact
from .errors import (
    ClassTooSmall,
    EmptyReplay,
    EmptySupport,
    InputError,
    InvalidConfig,
    NonFiniteLoss,
    ShapeMismatch,
)

log = logging.getLogger(__name__)


@dataclass
class RmConfig:
    embedding_dim: int = 128
    support_per_class: int = 5
    lambda_l2: float = 1e-3
    lr: float = 1e-3
    batch_size: int = 50
    epochs: int = 50
    seed: int = 0
    conv_filters: int = 16
    kernel_size: int = 3
    hidden: int = 64
    warm_start: bool = False

    def validate(self):
        if self.embedding_dim < 1 or self.support_per_class < 1:
            raise InvalidConfig("embedding_dim and support_per_class must be >= 1")
        if self.lambda_l2 < 0 or not self.lr > 0:
            raise InvalidConfig("lambda_l2 >= 0 and lr > 0 required")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidConfig("batch_size >= 1 and epochs >= 0 required")
        if self.conv_filters < 1 or self.kernel_size < 1 or self.hidden < 1:
            raise InvalidConfig("layer sizes must be positive")


class RelationNet(nn.Module):
    """[B, 2d] pairs -> [B] logits. Sigmoid of the logit is the relation score."""

    def __init__(self, cfg: RmConfig):
        super().__init__()
        self.d = cfg.embedding_dim
        self.conv = nn.Conv1d(2, cfg.conv_filters, cfg.kernel_size, padding=cfg.kernel_size // 2)
        self.bn = nn.BatchNorm1d(cfg.conv_filters)
        self.fc1 = nn.Linear(cfg.conv_filters, cfg.hidden)
        self.fc2 = nn.Linear(cfg.hidden, 1)

    def logits(self, pairs):
        x = pairs.reshape(pairs.shape[0], 2, self.d)
        h = F.relu(self.bn(self.conv(x))).mean(dim=-1)
        return self.fc2(F.relu(self.fc1(h))).squeeze(-1)

    def forward(self, pairs):
        return torch.sigmoid(self.logits(pairs))


class RmModel:
    def __init__(self, cfg: RmConfig, net: RelationNet):
        self.cfg = cfg
        self.net = net
        self.history: dict = {"loss": []}

    @property
    def input_width(self) -> int:
        return 2 * self.cfg.embedding_dim

    def weights(self):
        """Weight tensors entering the L2 penalty (biases excluded)."""
        return [p for n, p in self.net.named_parameters() if n.endswith("weight")]


@dataclass
class Episode:
    support: dict
    query: dict
    classes: list = field(default_factory=list)


def build_rm(cfg: RmConfig) -> RmModel:
    cfg.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        net = RelationNet(cfg)
    return RmModel(cfg, net)


def sample_episode(replay, n_support: int, rng: np.random.Generator) -> Episode:
    """Random ``n_support`` per class without replacement; the rest is the query set."""
    support, query = {}, {}
    for c in replay.classes:
        vecs, _ = replay.arrays(c)
        if len(vecs) <= n_support:
            raise ClassTooSmall(f"class {c} has {len(vecs)} samples, needs more than {n_support}")
        perm = rng.permutation(len(vecs))
        support[c] = vecs[perm[:n_support]]
        query[c] = vecs[perm[n_support:]]
    return Episode(support, query, replay.classes)


def class_representative(support_samples) -> np.ndarray:
    s = np.asarray(support_samples, dtype=np.float64)
    if s.ndim != 2 or len(s) == 0:
        raise EmptySupport("class representative needs a nonempty [n, d] support set")
    return s.mean(axis=0)


def _pair_logits(net: RelationNet, reps: torch.Tensor, queries: torch.Tensor) -> torch.Tensor:
    C, Q = reps.shape[0], queries.shape[0]
    pairs = torch.cat([reps[:, None, :].expand(C, Q, -1), queries[None, :, :].expand(C, Q, -1)], dim=-1)
    return net.logits(pairs.reshape(C * Q, -1)).reshape(C, Q)


def _as_matrix(x, d, what):
    t = torch.as_tensor(np.asarray(x, dtype=np.float32))
    if t.ndim == 1:
        t = t[None]
    if t.ndim != 2 or t.shape[1] != d:
        raise ShapeMismatch(f"{what} must be [*, {d}], got {tuple(t.shape)}")
    return t


def relation_logits(rm: RmModel, support_reps, queries) -> np.ndarray:
    d = rm.cfg.embedding_dim
    reps = _as_matrix(support_reps, d, "support_reps")
    q = _as_matrix(queries, d, "queries")
    rm.net.eval()
    with torch.no_grad():
        return _pair_logits(rm.net, reps, q).double().numpy()


def relation_scores(rm: RmModel, support_reps, queries) -> np.ndarray:
    """``[C, Q]`` relation scores in (0, 1); row ``i`` is class representative ``i``."""
    z = relation_logits(rm, support_reps, queries)
    return 1.0 / (1.0 + np.exp(-z))


def rm_loss(scores, support_labels, query_labels, lambda_l2: float, weights=()) -> torch.Tensor:
    """Summed squared error against the match indicator plus ``lambda/(2m)`` times
    the squared weight norm, ``m`` being the number of support classes."""
    r = torch.as_tensor(scores)
    ys = torch.as_tensor(support_labels)
    yq = torch.as_tensor(query_labels)
    if r.ndim != 2 or r.shape != (ys.shape[0], yq.shape[0]):
        raise ShapeMismatch(f"scores {tuple(r.shape)} vs labels {tuple(ys.shape)} x {tuple(yq.shape)}")
    target = (ys[:, None] == yq[None, :]).to(r.dtype)
    mse = ((r - target) ** 2).sum()
    m = r.shape[0]
    penalty = sum((w**2).sum() for w in weights) if weights else torch.zeros((), dtype=r.dtype)
    return mse + lambda_l2 / (2 * m) * penalty


def _check_trainable(replay, n_support):
    if replay is None or len(replay.classes) < 2:
        raise InputError("training needs at least two classes in the replay buffer")
    for c, n in replay.counts().items():
        if n <= n_support:
            raise ClassTooSmall(f"class {c} has {n} samples, needs more than {n_support}")


def train_rm(replay, cfg: RmConfig, init: RmModel | None = None) -> RmModel:
    """Fresh model (or a copy of ``init`` when warm starting) trained episodically.

    Each epoch draws a new episode, represents classes by their support means
    and sweeps the query set in mini-batches of ``cfg.batch_size`` queries.
    """
    _check_trainable(replay, cfg.support_per_class)
    rm = build_rm(cfg)
    if init is not None and cfg.warm_start:
        rm.net.load_state_dict(init.net.state_dict())
    classes = replay.classes
    ys = torch.tensor(classes)
    opt = torch.optim.Adam(rm.net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    rm.net.train()
    for epoch in range(cfg.epochs):
        ep = sample_episode(replay, cfg.support_per_class, rng)
        reps = torch.from_numpy(np.stack([class_representative(ep.support[c]) for c in classes]).astype(np.float32))
        qv = np.concatenate([ep.query[c] for c in classes])
        ql = np.concatenate([np.full(len(ep.query[c]), c) for c in classes])
        perm = rng.permutation(len(qv))
        total, steps = 0.0, 0
        for a in range(0, len(qv), cfg.batch_size):
            idx = perm[a : a + cfg.batch_size]
            scores = torch.sigmoid(_pair_logits(rm.net, reps, torch.from_numpy(qv[idx])))
            loss = rm_loss(scores, ys, torch.from_numpy(ql[idx]), cfg.lambda_l2, rm.weights())
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite relation loss at epoch {epoch}", {"epoch": epoch, "step": steps})
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            steps += 1
        rm.history["loss"].append(total / steps)
    rm.net.eval()
    return rm


def _representatives(replay):
    if replay is None or len(replay.classes) == 0:
        raise EmptyReplay("replay buffer is empty")
    classes = replay.classes
    return classes, np.stack([class_representative(replay.arrays(c)[0]) for c in classes])


def classify(rm: RmModel, replay, query_embeddings):
    """Predict by the highest relation score against full-replay class means.

    Returns ``(labels [Q], scores [C, Q])``. Ties resolve to the smallest class id.
    """
    classes, reps = _representatives(replay)
    z = relation_logits(rm, reps, query_embeddings)
    # argmax on logits: same order as the sigmoid scores, no float saturation ties
    pred = np.asarray(classes)[np.argmax(z, axis=0)]
    return pred, 1.0 / (1.0 + np.exp(-z))


def save_rm(rm: RmModel, path) -> int:
    tensors = {k: v.detach().cpu().numpy() for k, v in rm.net.state_dict().items()}
    arch = asdict(rm.cfg)
    arch["layers"] = [
        {"type": "reshape", "to": [2, rm.cfg.embedding_dim]},
        {"type": "conv1d", "in": 2, "out": rm.cfg.conv_filters, "kernel": rm.cfg.kernel_size},
        {"type": "batchnorm1d", "features": rm.cfg.conv_filters},
        {"type": "relu"},
        {"type": "mean_over_length"},
        {"type": "linear", "in": rm.cfg.conv_filters, "out": rm.cfg.hidden},
        {"type": "relu"},
        {"type": "linear", "in": rm.cfg.hidden, "out": 1},
        {"type": "sigmoid"},
    ]
    return save_artifact(path, "relation_module", arch, tensors, {"history": rm.history})


def load_rm(path) -> RmModel:
    header, tensors = load_artifact(path, expected_kind="relation_module")
    arch = dict(header["architecture"])
    arch.pop("layers", None)
    rm = build_rm(RmConfig(**arch))
    rm.net.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    rm.history = header["extra"].get("history", {"loss": []})
    rm.net.eval()
    return rm


# ---------------------------------------------------------------------------
# three-layer MLP ablation


class Mlp3(nn.Module):
    def __init__(self, d: int, n_classes: int, hidden: int = 64):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Linear(d, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, n_classes)
        )

    def forward(self, x):
        return self.layers(x)


class MlpModel:
    def __init__(self, cfg: RmConfig, net: Mlp3, classes: list):
        self.cfg = cfg
        self.net = net
        self.classes = list(classes)
        self.history: dict = {"loss": []}


def mlp_baseline_train(replay, cfg: RmConfig, init=None) -> MlpModel:
    """Cross-entropy training of ``Mlp3`` on every replay embedding."""
    cfg.validate()
    if replay is None or len(replay.classes) < 2:
        raise InputError("training needs at least two classes in the replay buffer")
    classes = replay.classes
    X = np.concatenate([replay.arrays(c)[0] for c in classes])
    y = np.concatenate([np.full(replay.counts()[c], i) for i, c in enumerate(classes)])
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        net = Mlp3(cfg.embedding_dim, len(classes), cfg.hidden)
    model = MlpModel(cfg, net, classes)
    Xt, yt = torch.from_numpy(X), torch.from_numpy(y)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    net.train()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(X))
        total, steps = 0.0, 0
        for a in range(0, len(X), cfg.batch_size):
            idx = torch.from_numpy(perm[a : a + cfg.batch_size])
            loss = F.cross_entropy(net(Xt[idx]), yt[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite MLP loss at epoch {epoch}", {"epoch": epoch})
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            steps += 1
        model.history["loss"].append(total / steps)
    net.eval()
    return model


def mlp_baseline_classify(model: MlpModel, replay, query_embeddings):
    """Returns ``(labels [Q], logits [Q, n_classes])``; ``replay`` is unused."""
    q = _as_matrix(query_embeddings, model.cfg.embedding_dim, "queries")
    with torch.no_grad():
        logits = model.net(q).double().numpy()
    return np.asarray(model.classes)[np.argmax(logits, axis=1)], logits
