"""Raw recordings, cleansing, windowing, normalisation and scenario splits.

Also holds the CSV interchange format, converters for the native PAMAP2 /
HAPT / DSADS layouts and a synthetic generator for desk-scale runs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AllMissingChannel,
    ChannelMismatch,
    DegenerateSplit,
    EmptyInput,
    InputError,
    InvalidSpec,
    WindowTooLong,
)

STD_FLOOR = 1e-8

WITHIN_SUBJECT = "within_subject"
BETWEEN_SUBJECT = "between_subject"
SCENARIO_MODES = (WITHIN_SUBJECT, BETWEEN_SUBJECT)

# Native sample rates; the loaders below assume them.
PAMAP2_RATE_HZ = 100.0
HAPT_RATE_HZ = 50.0
DSADS_RATE_HZ = 25.0

# The 12 "protocol" activities commonly kept for PAMAP2. The discarded six
# (9, 10, 11, 18, 19, 20) are the optional activities only a few subjects did.
PAMAP2_DEFAULT_ACTIVITIES = (1, 2, 3, 4, 5, 6, 7, 12, 13, 16, 17, 24)


@dataclass
class RawRecording:
    subject_id: int
    sample_rate_hz: float
    channels: np.ndarray  # [T, C]
    labels: np.ndarray  # [T]
    timestamps: np.ndarray  # [T], seconds, strictly increasing

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim == 1:
            self.channels = self.channels[:, None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        T = self.channels.shape[0]
        if self.labels.shape != (T,) or self.timestamps.shape != (T,):
            raise InputError(
                f"channels has {T} rows but labels/timestamps have shapes "
                f"{self.labels.shape}/{self.timestamps.shape}"
            )
        if not self.sample_rate_hz > 0:
            raise InputError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if T > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise InputError("timestamps must be strictly increasing")

    @property
    def n_channels(self) -> int:
        return self.channels.shape[1]

    def __len__(self):
        return self.channels.shape[0]


@dataclass
class SensorWindow:
    data: np.ndarray  # [W, C]
    label: int
    subject_id: int
    timestamp: float
    window_seconds: float

    @property
    def shape(self):
        return self.data.shape


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)

    @property
    def n_channels(self) -> int:
        return self.mean.shape[0]

    def apply(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        if data.shape[-1] != self.n_channels:
            raise ChannelMismatch(
                f"data has {data.shape[-1]} channels, normalizer has {self.n_channels}"
            )
        return (data - self.mean) / self.std


@dataclass
class ScenarioSplit:
    fe_train: list
    rm_train_pool: list
    test: list
    mode: str
    base_classes: frozenset
    new_classes: frozenset
    new_subjects: frozenset
    regions: dict = field(default_factory=dict)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stack_windows(windows: Sequence[SensorWindow]):
    """Return ``(X [n, W, C], labels [n], subjects [n], timestamps [n])``."""
    if not windows:
        raise EmptyInput("no windows")
    X = np.stack([w.data for w in windows])
    y = np.array([w.label for w in windows], dtype=np.int64)
    s = np.array([w.subject_id for w in windows], dtype=np.int64)
    t = np.array([w.timestamp for w in windows], dtype=np.float64)
    return X, y, s, t


# ---------------------------------------------------------------------------
# cleansing / windowing / normalisation


def interpolate_missing(recording: RawRecording) -> RawRecording:
    """Fill NaNs per channel by linear interpolation over the timestamps.

    Leading and trailing NaN runs take the nearest valid value.
    """
    chans = recording.channels.copy()
    t = recording.timestamps
    for c in range(chans.shape[1]):
        col = chans[:, c]
        ok = ~np.isnan(col)
        if not ok.any():
            raise AllMissingChannel(f"channel {c} of subject {recording.subject_id} is all NaN")
        if ok.all():
            continue
        # np.interp holds the end values outside the valid range
        col[~ok] = np.interp(t[~ok], t[ok], col[ok])
    return RawRecording(
        recording.subject_id, recording.sample_rate_hz, chans, recording.labels.copy(),
        recording.timestamps.copy(),
    )


def window_length(window_seconds: float, sample_rate_hz: float) -> int:
    return round_half_up(window_seconds * sample_rate_hz)


def window_stride(length: int, overlap_fraction: float) -> int:
    if not 0.0 <= overlap_fraction < 1.0:
        raise InputError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    return max(1, round_half_up(length * (1.0 - overlap_fraction)))


def majority_label(labels: np.ndarray) -> int:
    values, counts = np.unique(labels, return_counts=True)
    # np.unique sorts, so argmax picks the smallest id among ties
    return int(values[np.argmax(counts)])


def segment_windows(
    recording: RawRecording, window_seconds: float, overlap_fraction: float
) -> list[SensorWindow]:
    W = window_length(window_seconds, recording.sample_rate_hz)
    T = len(recording)
    if W < 1:
        raise InputError(f"window of {window_seconds}s is shorter than one sample")
    if W > T:
        raise WindowTooLong(f"window length {W} exceeds recording length {T}")
    stride = window_stride(W, overlap_fraction)
    n = (T - W) // stride + 1
    out = []
    for i in range(n):
        a = i * stride
        out.append(
            SensorWindow(
                data=recording.channels[a : a + W].copy(),
                label=majority_label(recording.labels[a : a + W]),
                subject_id=recording.subject_id,
                timestamp=float(recording.timestamps[a]),
                window_seconds=window_seconds,
            )
        )
    return out


def fit_normalizer(windows: Sequence[SensorWindow]) -> Normalizer:
    if len(windows) == 0:
        raise EmptyInput("cannot fit a normalizer on zero windows")
    C = windows[0].data.shape[1]
    flat = np.concatenate([np.asarray(w.data, dtype=np.float64).reshape(-1, C) for w in windows])
    return Normalizer(flat.mean(axis=0), flat.std(axis=0))


def normalize(windows: Sequence[SensorWindow], normalizer: Normalizer) -> list[SensorWindow]:
    return [
        SensorWindow(normalizer.apply(w.data), w.label, w.subject_id, w.timestamp, w.window_seconds)
        for w in windows
    ]


def windows_from_recordings(
    recordings: Iterable[RawRecording], window_seconds: float, overlap_fraction: float
) -> list[SensorWindow]:
    """Cleanse and window every recording; recordings shorter than a window are skipped."""
    out = []
    for rec in recordings:
        rec = interpolate_missing(rec)
        if window_length(window_seconds, rec.sample_rate_hz) > len(rec):
            continue
        out.extend(segment_windows(rec, window_seconds, overlap_fraction))
    return out


# ---------------------------------------------------------------------------
# scenario split


def region_of(label: int, subject_id: int, base_classes, new_subjects) -> int:
    """Region 1..4: base/new class crossed with base/new subject."""
    base = label in base_classes
    new_subj = subject_id in new_subjects
    if base and not new_subj:
        return 1
    if base and new_subj:
        return 2
    if not new_subj:
        return 3
    return 4


def scenario_split(windows, base_classes, new_subjects, mode: str) -> ScenarioSplit:
    if mode not in SCENARIO_MODES:
        raise InputError(f"unknown scenario mode {mode!r}")
    base_classes = frozenset(int(c) for c in base_classes)
    new_subjects = frozenset(int(s) for s in new_subjects)
    all_classes = {w.label for w in windows}
    all_subjects = {w.subject_id for w in windows}
    if not base_classes or not base_classes < all_classes:
        raise DegenerateSplit("base_classes must be a nonempty strict subset of the classes present")
    if not new_subjects or not new_subjects < all_subjects:
        raise DegenerateSplit("new_subjects must be a nonempty strict subset of the subjects present")

    regions = {1: [], 2: [], 3: [], 4: []}
    for w in windows:
        regions[region_of(w.label, w.subject_id, base_classes, new_subjects)].append(w)

    if mode == WITHIN_SUBJECT:
        needed, pool = (1, 2, 4), regions[2] + regions[4]
    else:
        needed, pool = (1, 2, 3, 4), regions[1] + regions[3]
    empty = [r for r in needed if not regions[r]]
    if empty:
        raise DegenerateSplit(f"regions {empty} are empty")

    return ScenarioSplit(
        fe_train=list(regions[1]),
        rm_train_pool=pool,
        test=regions[2] + regions[4],
        mode=mode,
        base_classes=base_classes,
        new_classes=frozenset(all_classes - base_classes),
        new_subjects=new_subjects,
        regions=regions,
    )


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthSpec:
    n_classes: int = 8
    n_subjects: int = 6
    n_channels: int = 6
    samples_per_class: int = 2000
    sample_rate_hz: float = 32.0
    noise_sigma: float = 0.3
    seed: int = 0


def synth_generate(spec: SynthSpec) -> list[RawRecording]:
    """One recording per (subject, class).

    Every class gets its own base frequency, per-channel amplitudes/phases and
    a random mix of three harmonics. Subjects shift all frequencies by a few
    percent. Timestamps are globally unique across recordings.
    """
    if spec.n_classes < 2:
        raise InvalidSpec("n_classes must be >= 2")
    if spec.n_subjects < 1 or spec.n_channels < 1 or spec.samples_per_class < 1:
        raise InvalidSpec("n_subjects, n_channels and samples_per_class must be positive")
    if not spec.sample_rate_hz > 0 or spec.noise_sigma < 0:
        raise InvalidSpec("sample_rate_hz must be > 0 and noise_sigma >= 0")

    rng = np.random.default_rng(spec.seed)
    C, K = spec.n_channels, 3
    freq = rng.uniform(0.4, 3.0, size=spec.n_classes)
    amp = rng.uniform(0.3, 1.5, size=(spec.n_classes, C))
    phase = rng.uniform(0, 2 * np.pi, size=(spec.n_classes, C))
    harm = rng.dirichlet(np.ones(K), size=(spec.n_classes, C))  # weights of 1f, 2f, 3f
    offset = rng.normal(0.0, 0.5, size=(spec.n_classes, C))
    subj_shift = 1.0 + rng.uniform(-0.04, 0.04, size=spec.n_subjects)

    T = spec.samples_per_class
    t = np.arange(T) / spec.sample_rate_hz
    span = T / spec.sample_rate_hz + 10.0
    recordings = []
    for s in range(spec.n_subjects):
        for c in range(spec.n_classes):
            f = freq[c] * subj_shift[s]
            x = np.zeros((T, C))
            for k in range(K):
                x += harm[c, :, k] * np.sin(2 * np.pi * (k + 1) * f * t[:, None] + (k + 1) * phase[c])
            x = x * amp[c] + offset[c]
            if spec.noise_sigma > 0:
                x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
            start = (s * spec.n_classes + c) * span
            recordings.append(
                RawRecording(s, spec.sample_rate_hz, x, np.full(T, c), start + t)
            )
    return recordings


# ---------------------------------------------------------------------------
# CSV interchange


def write_csv_recording(recording: RawRecording, path) -> None:
    path = Path(path)
    C = recording.n_channels
    header = "subject_id,timestamp,label," + ",".join(f"ch_{i}" for i in range(C))

    def fmt(v):
        return "NaN" if math.isnan(v) else repr(float(v))

    lines = [header]
    for i in range(len(recording)):
        row = [str(recording.subject_id), repr(float(recording.timestamps[i])), str(int(recording.labels[i]))]
        row.extend(fmt(v) for v in recording.channels[i])
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def read_csv_recording(path, sample_rate_hz: float | None = None) -> RawRecording:
    """Read one interchange CSV. The sample rate is inferred from timestamps if not given."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if header[:3] != ["subject_id", "timestamp", "label"] or not all(
        h == f"ch_{i}" for i, h in enumerate(header[3:])
    ):
        raise InputError(f"{path}: unexpected header {header[:4]}...")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    subjects = np.unique(arr[:, 0])
    if subjects.size != 1:
        raise InputError(f"{path}: expected a single subject, got {subjects}")
    ts = arr[:, 1]
    if sample_rate_hz is None:
        if ts.size < 2:
            raise InputError(f"{path}: cannot infer the sample rate from one row")
        sample_rate_hz = float(1.0 / np.median(np.diff(ts)))
    return RawRecording(int(subjects[0]), sample_rate_hz, arr[:, 3:], arr[:, 2].astype(np.int64), ts)


def write_csv_dir(recordings: Sequence[RawRecording], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, rec in enumerate(recordings):
        p = out_dir / f"rec_{i:05d}_s{rec.subject_id}.csv"
        write_csv_recording(rec, p)
        paths.append(p)
    return paths


def read_csv_dir(in_dir, sample_rate_hz: float | None = None) -> list[RawRecording]:
    in_dir = Path(in_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"dataset directory {in_dir} does not exist")
    paths = sorted(in_dir.glob("*.csv"))
    if not paths:
        raise EmptyInput(f"no .csv recordings in {in_dir}")
    return [read_csv_recording(p, sample_rate_hz) for p in paths]


# ---------------------------------------------------------------------------
# native dataset layouts


def _constant_runs(labels: np.ndarray):
    """Yield (start, stop, label) for maximal runs of equal labels."""
    if labels.size == 0:
        return
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [labels.size]])
    for a, b in zip(starts, stops):
        yield int(a), int(b), int(labels[a])


def load_pamap2(root, activities=PAMAP2_DEFAULT_ACTIVITIES, channels=None) -> list[RawRecording]:
    """Read ``subjectNNN.dat`` files (Protocol folder layout).

    Columns are timestamp, activity id and 52 sensor columns (heart rate plus
    three 17-column IMUs). ``channels`` indexes into those 52; default keeps all.
    Each contiguous run of a kept activity becomes one recording.
    """
    root = Path(root)
    files = sorted(root.glob("subject*.dat"))
    if not files:
        raise FileNotFoundError(f"no subject*.dat files under {root}")
    keep = set(int(a) for a in activities)
    out = []
    for f in files:
        subject = int(re.findall(r"\d+", f.stem)[-1])
        arr = np.loadtxt(f, ndmin=2)
        ts, act, sensors = arr[:, 0], arr[:, 1].astype(np.int64), arr[:, 2:]
        if channels is not None:
            sensors = sensors[:, list(channels)]
        for a, b, lab in _constant_runs(act):
            if lab not in keep or b - a < 2:
                continue
            out.append(RawRecording(subject, PAMAP2_RATE_HZ, sensors[a:b], act[a:b], ts[a:b]))
    return out


def load_hapt(root) -> list[RawRecording]:
    """Read the HAPT ``RawData`` folder: acc/gyro text files plus ``labels.txt``.

    ``labels.txt`` rows are ``experiment user activity start end`` with 1-based
    inclusive sample indices. Each labelled segment becomes one recording.
    """
    root = Path(root)
    labels_file = root / "labels.txt"
    if not labels_file.exists():
        raise FileNotFoundError(f"{labels_file} not found")
    seg = np.loadtxt(labels_file, dtype=np.int64, ndmin=2)
    cache = {}
    out = []
    for exp, user, act, start, end in seg:
        key = (int(exp), int(user))
        if key not in cache:
            acc = np.loadtxt(root / f"acc_exp{exp:02d}_user{user:02d}.txt", ndmin=2)
            gyro = np.loadtxt(root / f"gyro_exp{exp:02d}_user{user:02d}.txt", ndmin=2)
            n = min(len(acc), len(gyro))
            cache[key] = np.hstack([acc[:n], gyro[:n]])
        data = cache[key]
        a, b = int(start) - 1, int(end)
        if b - a < 2:
            continue
        idx = np.arange(a, b)
        ts = exp * 1e5 + idx / HAPT_RATE_HZ  # experiments never overlap in time
        out.append(RawRecording(int(user), HAPT_RATE_HZ, data[a:b], np.full(b - a, int(act)), ts))
    return out


def load_dsads(root) -> list[RawRecording]:
    """Read DSADS ``aXX/pY/sZZ.txt`` segments (125 x 45, comma separated).

    The 5 s segments of one activity and subject are concatenated in order, so
    5 s windows with zero overlap reproduce the native units exactly.
    """
    root = Path(root)
    act_dirs = sorted(p for p in root.glob("a[0-9]*") if p.is_dir())
    if not act_dirs:
        raise FileNotFoundError(f"no aXX activity folders under {root}")
    out = []
    for ad in act_dirs:
        act = int(ad.name[1:])
        for pd in sorted(p for p in ad.glob("p[0-9]*") if p.is_dir()):
            subj = int(pd.name[1:])
            segs = [np.loadtxt(s, delimiter=",", ndmin=2) for s in sorted(pd.glob("s*.txt"))]
            if not segs:
                continue
            data = np.vstack(segs)
            ts = act * 1e5 + np.arange(len(data)) / DSADS_RATE_HZ
            out.append(RawRecording(subj, DSADS_RATE_HZ, data, np.full(len(data), act), ts))
    return out
