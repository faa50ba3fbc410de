"""Streaming stage: batch plans, the embed/update/retrain/classify loop, metrics."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .datasets import ScenarioSplit
from .errors import InputError, InsufficientData, LengthMismatch, StreamAborted, TooFewSamples
from .features import EmbeddingSample, FeModel
from .relation import RmConfig, classify, mlp_baseline_classify, mlp_baseline_train, train_rm
from .replay import ReplayBuffer, reset_trigger, should_retrain, update

log = logging.getLogger(__name__)

CLASSIFIERS = ("relation", "mlp3")


# ---------------------------------------------------------------------------
# metrics


def accuracy(preds, truths) -> float:
    p, t = np.asarray(preds), np.asarray(truths)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise LengthMismatch(f"need equal nonempty label vectors, got {p.shape} and {t.shape}")
    return float(np.mean(p == t))


def per_class_f1(preds, truths, class_set) -> dict:
    """F1 per class; classes with no true instances map to ``None`` (not scored)."""
    p, t = np.asarray(preds), np.asarray(truths)
    if p.shape != t.shape or p.ndim != 1:
        raise LengthMismatch(f"label vectors differ: {p.shape} vs {t.shape}")
    out = {}
    for c in sorted(class_set):
        support = int(np.sum(t == c))
        if support == 0:
            out[c] = None
            continue
        tp = int(np.sum((p == c) & (t == c)))
        fp = int(np.sum((p == c) & (t != c)))
        fn = support - tp
        out[c] = 2 * tp / (2 * tp + fp + fn)
    return out


def macro_f1(preds, truths, class_set) -> float:
    """Unweighted mean F1 over the classes of ``class_set`` that occur in ``truths``."""
    if not len(class_set):
        raise InputError("class_set is empty")
    scores = [v for v in per_class_f1(preds, truths, class_set).values() if v is not None]
    return float(np.mean(scores)) if scores else 0.0


def pca_project(embeddings, dims: int = 2):
    """Project onto the top ``dims`` covariance eigenvectors.

    Returns ``(points [n, dims], explained_variance_ratio [dims])``. Each
    component's largest-magnitude loading is made positive so output is
    reproducible.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < max(dims, 2) or dims > X.shape[1]:
        raise TooFewSamples(f"need at least {max(dims, 2)} samples with >= {dims} features, got {X.shape}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    comps = vecs[:, :dims]
    signs = np.sign(comps[np.argmax(np.abs(comps), axis=0), np.arange(dims)])
    comps = comps * np.where(signs == 0, 1.0, signs)
    total = vals.clip(min=0).sum()
    ratio = vals[:dims].clip(min=0) / total if total > 0 else np.zeros(dims)
    return Xc @ comps, ratio


# ---------------------------------------------------------------------------
# plans


@dataclass
class StreamConfig:
    batch_size: int = 64
    labeled_fraction: float = 0.1
    labeled_per_new_class: int = 20
    intro_labeled: int = 20
    seed: int = 0

    def validate(self):
        if self.batch_size < 2 or not 0 <= self.labeled_fraction < 1:
            raise InputError("batch_size >= 2 and labeled_fraction in [0, 1) required")
        if not 2 <= self.intro_labeled <= self.labeled_per_new_class:
            raise InputError("need 2 <= intro_labeled <= labeled_per_new_class")


@dataclass
class StreamBatch:
    labeled: list
    unlabeled: list
    batch_index: int


@dataclass
class StreamPlan:
    batches: list
    introductions: list  # (batch_index, class id) in batch order
    base_classes: frozenset
    new_classes: frozenset
    labeled_per_new_class: int
    seed: int


def make_stream_plan(split: ScenarioSplit, cfg: StreamConfig) -> StreamPlan:
    """Lay the test windows out as batches in ``1 + n_new`` phases.

    Phase ``k >= 1`` opens by introducing one new class: its first batch carries
    ``intro_labeled`` labelled windows of that class and the rest of the
    class's budget follows in the next batches. Unlabelled windows of a new
    class only appear from its introduction batch on. Base-class labelled
    windows fill ``labeled_fraction`` of each batch while the pool lasts.
    Windows picked as labelled are removed from the unlabelled stream.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    new = [int(c) for c in rng.permutation(sorted(split.new_classes))]
    if not new:
        raise InsufficientData("the split has no new classes")
    base = split.base_classes

    pool_by_class: dict = {}
    for w in split.rm_train_pool:
        pool_by_class.setdefault(w.label, []).append(w)
    new_labeled = {}
    for c in new:
        avail = pool_by_class.get(c, [])
        if len(avail) < cfg.labeled_per_new_class:
            raise InsufficientData(f"class {c} has {len(avail)} labelled windows, budget is {cfg.labeled_per_new_class}")
        idx = rng.choice(len(avail), size=cfg.labeled_per_new_class, replace=False)
        new_labeled[c] = [avail[i] for i in sorted(idx)]

    n_lab = int(round(cfg.batch_size * cfg.labeled_fraction))
    n_unl = cfg.batch_size - n_lab
    base_pool = [w for w in split.rm_train_pool if w.label in base]
    base_order = rng.permutation(len(base_pool))
    est_batches = math.ceil(len(split.test) / n_unl) + len(new)
    base_labeled = [base_pool[i] for i in base_order[: n_lab * est_batches]]

    taken = {id(w) for w in base_labeled} | {id(w) for ws in new_labeled.values() for w in ws}
    unlabeled = [w for w in split.test if id(w) not in taken]
    if not unlabeled:
        raise InsufficientData("no unlabelled test windows left")

    n_phases = len(new) + 1
    first_phase = {c: 0 for c in base}
    first_phase.update({c: k + 1 for k, c in enumerate(new)})
    phases = [[] for _ in range(n_phases)]
    for w in unlabeled:
        lo = first_phase.get(w.label, 0)
        phases[int(rng.integers(lo, n_phases))].append(w)

    batches: list = []
    introductions = []
    pending = []  # (class, windows still to deliver)
    base_iter = iter(base_labeled)
    for k in range(n_phases):
        ws = phases[k]
        order = rng.permutation(len(ws))
        chunks = [[ws[i] for i in order[a : a + n_unl]] for a in range(0, len(ws), n_unl)] or [[]]
        for j, chunk in enumerate(chunks):
            labeled = [w for _, w in zip(range(n_lab), base_iter)]
            if k >= 1 and j == 0:
                c = new[k - 1]
                labeled += new_labeled[c][: cfg.intro_labeled]
                introductions.append((len(batches), c))
                rest = new_labeled[c][cfg.intro_labeled :]
                if rest:
                    pending.append([c, rest])
            elif pending:
                # one labelled window per pending class per batch
                for item in pending:
                    labeled.append(item[1].pop(0))
                pending = [item for item in pending if item[1]]
            batches.append(StreamBatch(labeled, chunk, len(batches)))
    if pending and batches:
        for _, rest in pending:
            batches[-1].labeled.extend(rest)
    return StreamPlan(batches, introductions, frozenset(base), frozenset(new), cfg.labeled_per_new_class, cfg.seed)


# ---------------------------------------------------------------------------
# the streaming loop


@dataclass
class RetrainEvent:
    batch_index: int
    reason: str
    seconds: float


@dataclass
class MetricsReport:
    batch_records: list = field(default_factory=list)
    batch_accuracy: list = field(default_factory=list)
    cumulative_accuracy: list = field(default_factory=list)
    final_accuracy: float = float("nan")
    final_macro_f1: float = float("nan")
    per_class_f1: dict = field(default_factory=dict)
    base_macro_f1: float = float("nan")
    new_macro_f1: float = float("nan")
    pre_stream_base_macro_f1: float = float("nan")
    post_stream_base_macro_f1: float = float("nan")
    retrain_events: list = field(default_factory=list)
    replay_bytes: int = 0
    replay_classes: list = field(default_factory=list)
    predictions: list = field(default_factory=list)
    truths: list = field(default_factory=list)
    classifier: str = "relation"
    completed: bool = False

    def summary(self) -> dict:
        """Deterministic summary: everything except wall-clock timings."""
        def r(x):
            return None if x is None or (isinstance(x, float) and math.isnan(x)) else round(float(x), 10)

        return {
            "classifier": self.classifier,
            "completed": self.completed,
            "n_batches": len(self.batch_records),
            "n_scored": len(self.truths),
            "final_accuracy": r(self.final_accuracy),
            "final_macro_f1": r(self.final_macro_f1),
            "base_macro_f1": r(self.base_macro_f1),
            "new_macro_f1": r(self.new_macro_f1),
            "pre_stream_base_macro_f1": r(self.pre_stream_base_macro_f1),
            "post_stream_base_macro_f1": r(self.post_stream_base_macro_f1),
            "per_class_f1": {str(c): r(v) for c, v in sorted(self.per_class_f1.items())},
            "retrain_events": [{"batch_index": e.batch_index, "reason": e.reason} for e in self.retrain_events],
            "replay_bytes": self.replay_bytes,
            "replay_classes": list(self.replay_classes),
        }


def _embed_labeled(fe: FeModel, windows) -> list:
    if not windows:
        return []
    vecs = fe.embed_array(np.stack([w.data for w in windows]))
    return [EmbeddingSample(v, int(w.label), float(w.timestamp)) for v, w in zip(vecs, windows)]


def _mean_f1(f1s: dict, classes) -> float:
    vals = [f1s[c] for c in sorted(classes) if f1s.get(c) is not None]
    return float(np.mean(vals)) if vals else float("nan")


def run_stream(
    fe: FeModel,
    rm_cfg: RmConfig,
    replay: ReplayBuffer,
    plan: StreamPlan,
    model=None,
    classifier: str = "relation",
    on_batch: Optional[Callable[[dict], None]] = None,
) -> MetricsReport:
    """Consume ``plan`` batch by batch; ``replay`` is updated in place.

    ``model`` is the classifier trained on the initial replay; it is trained
    here when omitted. Labels of unlabelled windows are read only for scoring.
    """
    if classifier not in CLASSIFIERS:
        raise InputError(f"unknown classifier {classifier!r}")
    train_fn, classify_fn = (train_rm, classify) if classifier == "relation" else (mlp_baseline_train, mlp_baseline_classify)
    if model is None:
        model = train_fn(replay, rm_cfg)

    report = MetricsReport(classifier=classifier)
    base = sorted(plan.base_classes)

    # base-class score of the pre-stream model, on the same windows scored again at the end
    base_windows = [w for b in plan.batches for w in b.unlabeled if w.label in plan.base_classes]
    base_emb = fe.embed_array(np.stack([w.data for w in base_windows])) if base_windows else None
    base_truth = [w.label for w in base_windows]
    if base_emb is not None:
        pre, _ = classify_fn(model, replay, base_emb)
        report.pre_stream_base_macro_f1 = macro_f1(pre, base_truth, base)

    correct = 0
    try:
        for batch in plan.batches:
            labeled = _embed_labeled(fe, batch.labeled)
            unl_data = [w.data for w in batch.unlabeled]
            update(replay, labeled)
            fire, reason = should_retrain(replay)
            seconds = 0.0
            if fire:
                t0 = time.perf_counter()
                model = train_fn(replay, rm_cfg, init=model)
                seconds = time.perf_counter() - t0
                reset_trigger(replay)
                report.retrain_events.append(RetrainEvent(batch.batch_index, reason, seconds))
                log.info("batch %d: retrained (%s) in %.2fs", batch.batch_index, reason, seconds)
            acc = None
            if unl_data:
                preds, _ = classify_fn(model, replay, fe.embed_array(np.stack(unl_data)))
                truths = [w.label for w in batch.unlabeled]  # scorer only
                acc = accuracy(preds, truths)
                correct += int(np.sum(np.asarray(preds) == np.asarray(truths)))
                report.predictions.extend(int(p) for p in preds)
                report.truths.extend(int(t) for t in truths)
                report.batch_accuracy.append(acc)
                report.cumulative_accuracy.append(correct / len(report.truths))
            record = {
                "batch_index": batch.batch_index,
                "n_labeled": len(batch.labeled),
                "n_unlabeled": len(unl_data),
                "accuracy": acc,
                "retrain": bool(fire),
                "retrain_reason": reason,
                "retrain_seconds": seconds,
            }
            report.batch_records.append(record)
            if on_batch is not None:
                on_batch(record)
    except Exception as exc:
        _finalize(report, replay, fe, model, classify_fn, plan, base_emb, base_truth)
        raise StreamAborted(f"stream aborted at batch {len(report.batch_records)}: {exc}", report) from exc

    _finalize(report, replay, fe, model, classify_fn, plan, base_emb, base_truth)
    report.completed = True
    return report


def _finalize(report, replay, fe, model, classify_fn, plan, base_emb, base_truth):
    report.replay_bytes = replay.nbytes()
    report.replay_classes = replay.classes
    if report.truths:
        classes = sorted(set(report.truths))
        report.final_accuracy = accuracy(report.predictions, report.truths)
        report.final_macro_f1 = macro_f1(report.predictions, report.truths, classes)
        f1s = per_class_f1(report.predictions, report.truths, classes)
        report.per_class_f1 = {c: v for c, v in f1s.items() if v is not None}
        report.base_macro_f1 = _mean_f1(f1s, plan.base_classes)
        report.new_macro_f1 = _mean_f1(f1s, plan.new_classes)
    if base_emb is not None:
        post, _ = classify_fn(model, replay, base_emb)
        report.post_stream_base_macro_f1 = macro_f1(post, base_truth, sorted(plan.base_classes))
