"""End-to-end glue shared by the CLI and the experiment scripts."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from . import datasets as ds
from .augment import smote_oversample
from .config import RunConfig
from .datasets import ScenarioSplit, SensorWindow
from .features import FeModel, build_fe, embed, train_fe
from .relation import mlp_baseline_train, train_rm
from .replay import ReplayBuffer, init_from_base
from .streaming import MetricsReport, make_stream_plan, run_stream

log = logging.getLogger(__name__)


def load_recordings(cfg: RunConfig) -> list:
    if cfg.csv_dir:
        recs = ds.read_csv_dir(cfg.csv_dir)
    elif cfg.dataset == "synthetic":
        recs = ds.read_csv_dir(cfg.data_dir) if cfg.data_dir else ds.synth_generate(cfg.synth_spec())
    else:
        if not cfg.data_dir:
            raise FileNotFoundError(f"dataset {cfg.dataset!r} needs data_dir")
        if cfg.dataset == "pamap2":
            return ds.load_pamap2(cfg.data_dir, cfg.pamap2_activities, cfg.channels)
        recs = ds.load_hapt(cfg.data_dir) if cfg.dataset == "hapt" else ds.load_dsads(cfg.data_dir)
    if cfg.channels is not None:
        recs = [replace(r, channels=r.channels[:, list(cfg.channels)]) for r in recs]
    return recs


def resolve_base_classes(cfg: RunConfig, classes) -> list:
    if cfg.base_classes is not None:
        return sorted(int(c) for c in cfg.base_classes)
    rng = np.random.default_rng(cfg.seed)
    classes = sorted(classes)
    if cfg.dataset == "synthetic":
        return classes[: cfg.n_base_classes]
    return sorted(int(c) for c in rng.choice(classes, size=cfg.n_base_classes, replace=False))


def prepare_split(cfg: RunConfig) -> ScenarioSplit:
    recs = load_recordings(cfg)
    windows = ds.windows_from_recordings(recs, cfg.window_seconds, cfg.overlap)
    base = resolve_base_classes(cfg, {w.label for w in windows})
    return ds.scenario_split(windows, base, cfg.new_subjects, cfg.scenario_mode)


def normalize_split(split: ScenarioSplit, normalizer) -> ScenarioSplit:
    """Normalise every window once, keeping shared windows shared between lists."""
    mapped = {}

    def conv(ws):
        out = []
        for w in ws:
            if id(w) not in mapped:
                mapped[id(w)] = SensorWindow(normalizer.apply(w.data), w.label, w.subject_id, w.timestamp,
                                             w.window_seconds)
            out.append(mapped[id(w)])
        return out

    return ScenarioSplit(
        conv(split.fe_train), conv(split.rm_train_pool), conv(split.test), split.mode,
        split.base_classes, split.new_classes, split.new_subjects,
        {k: conv(v) for k, v in split.regions.items()},
    )


def pretrain(cfg: RunConfig, split: ScenarioSplit | None = None):
    """cleanse -> window -> normalise -> SMOTE -> augment -> train. Returns ``(fe, report)``."""
    split = split or prepare_split(cfg)
    normalizer = ds.fit_normalizer(split.fe_train)
    train = ds.normalize(split.fe_train, normalizer)
    by_class = {}
    for w in train:
        by_class.setdefault(w.label, []).append(w.data)
    balanced = smote_oversample(by_class, cfg.smote_config())
    X = np.concatenate([balanced[c] for c in sorted(balanced)])
    y = np.concatenate([np.full(len(balanced[c]), c) for c in sorted(balanced)])

    W, C = X.shape[1:]
    fe = build_fe(cfg.fe_config(C, W, len(balanced)))
    train_fe(fe, X, y, cfg.aug_config())
    fe.normalizer = normalizer
    report = {
        "config": cfg.to_dict(),
        "n_fe_windows": len(train),
        "class_counts_before_smote": {str(c): len(v) for c, v in sorted(by_class.items())},
        "class_counts_after_smote": {str(c): len(v) for c, v in sorted(balanced.items())},
        "base_classes": sorted(int(c) for c in split.base_classes),
        "use_contrastive": bool(cfg.use_contrastive),
        "loss": fe.history["loss"],
        "loss_ce": fe.history["ce"],
        "loss_con": fe.history["con"],
        "train_accuracy": fe.history["train_accuracy"],
    }
    return fe, report


def init_replay(cfg: RunConfig, fe: FeModel, fe_train) -> ReplayBuffer:
    by_class = {}
    for s in embed(fe, fe_train):
        by_class.setdefault(s.label, []).append(s)
    return init_from_base(by_class, cfg.replay_size, np.random.default_rng(cfg.seed + 5))


def stream(cfg: RunConfig, fe: FeModel, split: ScenarioSplit | None = None, on_batch=None):
    """Initial replay + classifier, then the streaming loop. Returns ``(report, replay, plan)``."""
    split = split or prepare_split(cfg)
    if fe.normalizer is not None:
        split = normalize_split(split, fe.normalizer)
    replay = init_replay(cfg, fe, split.fe_train)
    rm_cfg = cfg.rm_config(fe.embedding_dim)
    plan = make_stream_plan(split, cfg.stream_config())
    train_fn = train_rm if cfg.classifier == "relation" else mlp_baseline_train
    model = train_fn(replay, rm_cfg)
    report: MetricsReport = run_stream(fe, rm_cfg, replay, plan, model=model, classifier=cfg.classifier,
                                       on_batch=on_batch)
    return report, replay, plan
