"""Flat run configuration.

One YAML (or JSON) mapping of the keys below; anything missing takes the
default shown, unknown keys are rejected. ``None`` defaults on dataset
dependent keys resolve through ``DATASET_DEFAULTS``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .augment import AugmentationConfig, SmoteConfig
from .datasets import PAMAP2_DEFAULT_ACTIVITIES, SCENARIO_MODES, SynthSpec
from .errors import InvalidConfig
from .features import FeConfig
from .relation import RmConfig
from .streaming import CLASSIFIERS, StreamConfig

DATASETS = ("pamap2", "hapt", "dsads", "synthetic")

DATASET_DEFAULTS = {
    "pamap2": {"window_seconds": 5.12, "overlap": 0.78, "new_subjects": [105, 106]},
    "hapt": {"window_seconds": 2.56, "overlap": 0.5, "new_subjects": [29, 30], "replay_size": 15},
    "dsads": {"window_seconds": 5.0, "overlap": 0.0, "new_subjects": [7, 8]},
    "synthetic": {"window_seconds": 2.0, "overlap": 0.5, "new_subjects": None},
}


@dataclass
class RunConfig:
    # data
    dataset: str = "synthetic"
    data_dir: Optional[str] = None
    csv_dir: Optional[str] = None  # interchange CSVs; overrides the native loader when set
    pamap2_activities: list = field(default_factory=lambda: list(PAMAP2_DEFAULT_ACTIVITIES))
    channels: Optional[list] = None
    synth_n_classes: int = 8
    synth_n_subjects: int = 6
    synth_n_channels: int = 6
    synth_samples_per_class: int = 2000
    synth_sample_rate_hz: float = 32.0
    synth_noise_sigma: float = 0.3
    # scenario
    scenario_mode: str = "within_subject"
    base_classes: Optional[list] = None
    n_base_classes: int = 5
    new_subjects: Optional[list] = None
    window_seconds: Optional[float] = None
    overlap: Optional[float] = None
    # feature extractor
    fe_embedding_dim: int = 128
    fe_conv_channels: list = field(default_factory=lambda: [64, 128])
    fe_kernel_sizes: list = field(default_factory=lambda: [5, 5])
    fe_lstm_hidden: int = 128
    fe_tau: float = 0.1
    fe_lr: float = 1e-3
    fe_batch_size: int = 50
    fe_epochs: int = 50
    supcon_normalize: bool = True
    use_contrastive: bool = True
    # augmentation / SMOTE
    sigma_jitter: float = 0.05
    sigma_scale: float = 0.1
    sigma_mwarp: float = 0.2
    sigma_twarp: float = 0.2
    n_knots: int = 4
    smote_k_neighbors: int = 5
    smote_target_per_class: object = "max-class"
    # relation module / replay
    classifier: str = "relation"
    replay_size: Optional[int] = None
    support_per_class: int = 5
    lambda_l2: float = 1e-3
    rm_lr: float = 1e-3
    rm_batch_size: int = 50
    rm_epochs: int = 50
    rm_conv_filters: int = 16
    rm_kernel_size: int = 3
    rm_hidden: int = 64
    rm_warm_start: bool = False
    # stream
    stream_batch_size: int = 64
    stream_labeled_fraction: float = 0.1
    labeled_per_new_class: int = 20
    intro_labeled: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise InvalidConfig(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.scenario_mode not in SCENARIO_MODES:
            raise InvalidConfig(f"scenario_mode must be one of {SCENARIO_MODES}")
        if self.classifier not in CLASSIFIERS:
            raise InvalidConfig(f"classifier must be one of {CLASSIFIERS}")
        defaults = DATASET_DEFAULTS[self.dataset]
        for key in ("window_seconds", "overlap", "new_subjects"):
            if getattr(self, key) is None:
                setattr(self, key, defaults[key])
        if self.replay_size is None:
            self.replay_size = defaults.get("replay_size", 20)
        if self.new_subjects is None:  # synthetic: the last two subjects
            self.new_subjects = list(range(max(self.synth_n_subjects - 2, 1), self.synth_n_subjects))
        if self.support_per_class >= self.replay_size:
            raise InvalidConfig("support_per_class must be smaller than replay_size")

    # -- views ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(self.synth_n_classes, self.synth_n_subjects, self.synth_n_channels,
                         self.synth_samples_per_class, self.synth_sample_rate_hz, self.synth_noise_sigma, self.seed)

    def fe_config(self, input_channels: int, window_len: int, n_classes_base: int) -> FeConfig:
        return FeConfig(
            input_channels=input_channels, window_len=window_len, embedding_dim=self.fe_embedding_dim,
            conv_channels=tuple(self.fe_conv_channels), kernel_sizes=tuple(self.fe_kernel_sizes),
            lstm_hidden=self.fe_lstm_hidden, n_classes_base=n_classes_base, tau=self.fe_tau, lr=self.fe_lr,
            batch_size=self.fe_batch_size, epochs=self.fe_epochs, seed=self.seed,
            supcon_normalize=self.supcon_normalize, use_contrastive=self.use_contrastive,
        )

    def aug_config(self) -> AugmentationConfig:
        return AugmentationConfig(self.sigma_jitter, self.sigma_scale, self.sigma_mwarp, self.sigma_twarp,
                                  self.n_knots, self.seed + 1)

    def smote_config(self) -> SmoteConfig:
        return SmoteConfig(self.smote_k_neighbors, self.smote_target_per_class, self.seed + 2)

    def rm_config(self, embedding_dim: int) -> RmConfig:
        return RmConfig(embedding_dim=embedding_dim, support_per_class=self.support_per_class,
                        lambda_l2=self.lambda_l2, lr=self.rm_lr, batch_size=self.rm_batch_size,
                        epochs=self.rm_epochs, seed=self.seed + 3, conv_filters=self.rm_conv_filters,
                        kernel_size=self.rm_kernel_size, hidden=self.rm_hidden, warm_start=self.rm_warm_start)

    def stream_config(self) -> StreamConfig:
        return StreamConfig(self.stream_batch_size, self.stream_labeled_fraction, self.labeled_per_new_class,
                            self.intro_labeled, self.seed + 4)


def config_from_dict(data: dict | None, **overrides) -> RunConfig:
    data = dict(data or {})
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc


def load_config(path=None, **overrides) -> RunConfig:
    data = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text())
        if loaded is not None and not isinstance(loaded, dict):
            raise InvalidConfig(f"{path}: expected a mapping at top level")
        data = loaded or {}
    return config_from_dict(data, **overrides)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


__all__ = ["RunConfig", "load_config", "config_from_dict", "dump_config", "DATASETS"]
