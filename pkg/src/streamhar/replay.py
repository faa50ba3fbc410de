"""Per-class embedding replay buffer with timestamp-sparsity replacement.

A full class only accepts an incoming sample if swapping it for one stored
sample strictly increases the class's temporal sparsity score ``d_m``: the sum,
over samples, of the distance to the temporally nearest other sample.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptArtifact, DimensionMismatch, EmptyClass, VersionMismatch
from .features import EmbeddingSample

SNAPSHOT_MAGIC = b"RPLY"
SNAPSHOT_VERSION = 1
_HEAD = struct.Struct("<4sHIII")  # magic, version, embedding_dim, capacity, n_classes
_CLASS = struct.Struct("<qIIB")  # class id, count, replaced_since_retrain, new-class flag

NEW_CLASS = "new_class"
REPLACEMENT = "replacement"


def d_m(timestamps) -> float:
    """Sum over samples of the gap to the nearest other timestamp (0 for < 2 samples)."""
    t = np.asarray(timestamps, dtype=np.float64).ravel()
    k = t.size
    if k < 2:
        return 0.0
    order = np.argsort(t, kind="stable")
    s = t[order]
    gaps = np.diff(s)
    nearest_sorted = np.empty(k)
    nearest_sorted[0] = gaps[0]
    nearest_sorted[-1] = gaps[-1]
    nearest_sorted[1:-1] = np.minimum(gaps[:-1], gaps[1:])
    nearest = np.empty(k)
    nearest[order] = nearest_sorted
    # sequential sum in input order
    return float(sum(nearest.tolist()))


@dataclass
class UpdateReport:
    inserted: list = field(default_factory=list)  # (class, timestamp)
    replaced: list = field(default_factory=list)  # (class, evicted timestamp, new timestamp)
    rejected: list = field(default_factory=list)  # (class, timestamp)
    new_classes: list = field(default_factory=list)


class ReplayBuffer:
    def __init__(self, capacity: int, embedding_dim: int | None = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.embedding_dim = embedding_dim
        self.store: dict[int, list[EmbeddingSample]] = {}
        self.replaced_since_retrain: dict[int, int] = {}
        self.new_since_retrain: set[int] = set()

    @property
    def known_classes(self) -> set:
        return set(self.store)

    @property
    def classes(self) -> list:
        return sorted(self.store)

    def __len__(self):
        return sum(len(v) for v in self.store.values())

    def counts(self) -> dict:
        return {c: len(v) for c, v in sorted(self.store.items())}

    def timestamps(self, c) -> list:
        return [s.timestamp for s in self.store[c]]

    def class_d_m(self, c) -> float:
        return d_m(self.timestamps(c))

    def arrays(self, c):
        """``(vectors [n, d] float32, timestamps [n])`` for class ``c``."""
        samples = self.store[c]
        return np.stack([s.vector for s in samples]).astype(np.float32), np.array([s.timestamp for s in samples])

    def _check_dim(self, vec):
        vec = np.asarray(vec, dtype=np.float32).ravel()
        if self.embedding_dim is None:
            self.embedding_dim = vec.size
        elif vec.size != self.embedding_dim:
            raise DimensionMismatch(f"embedding width {vec.size}, buffer holds {self.embedding_dim}")
        if not np.all(np.isfinite(vec)):
            raise DimensionMismatch("embedding has non-finite entries")
        return vec

    def nbytes(self) -> int:
        """Bytes of the binary snapshot of the current state."""
        return _HEAD.size + sum(
            _CLASS.size + len(v) * (4 * (self.embedding_dim or 0) + 8) for v in self.store.values()
        ) + 4


def init_from_base(embeddings_by_class: dict, N: int, rng: np.random.Generator) -> ReplayBuffer:
    """Uniformly sample ``min(N, available)`` embeddings per base class."""
    buf = ReplayBuffer(N)
    for c in sorted(embeddings_by_class):
        samples = list(embeddings_by_class[c])
        if not samples:
            raise EmptyClass(f"class {c} supplied no embeddings")
        take = min(N, len(samples))
        idx = np.sort(rng.choice(len(samples), size=take, replace=False))
        kept = []
        for i in idx:
            s = samples[int(i)]
            kept.append(EmbeddingSample(buf._check_dim(s.vector), int(c), float(s.timestamp)))
        buf.store[int(c)] = kept
        buf.replaced_since_retrain[int(c)] = 0
    return buf


def best_replacement(timestamps, t_new: float):
    """Best single eviction for inserting ``t_new`` into a full class.

    Returns ``(index, new_d_m)`` or ``None`` when no eviction strictly raises
    ``d_m``. Equal candidates evict the oldest timestamp.
    """
    ts = list(timestamps)
    current = d_m(ts)
    best = None
    for i in range(len(ts)):
        cand = ts[:i] + ts[i + 1 :] + [t_new]
        score = d_m(cand)
        if score <= current:
            continue
        if best is None or score > best[1] or (score == best[1] and ts[i] < ts[best[0]]):
            best = (i, score)
    return best


def update(buffer: ReplayBuffer, incoming) -> tuple:
    """Offer labelled embeddings to the buffer one by one (mutates ``buffer``)."""
    report = UpdateReport()
    for s in incoming:
        c = int(s.label)
        vec = buffer._check_dim(s.vector)
        t = float(s.timestamp)
        if not math.isfinite(t):
            raise DimensionMismatch("timestamp must be finite")
        sample = EmbeddingSample(vec, c, t)
        if c not in buffer.store:
            buffer.store[c] = [sample]
            buffer.replaced_since_retrain[c] = 0
            buffer.new_since_retrain.add(c)
            report.new_classes.append(c)
            report.inserted.append((c, t))
            continue
        samples = buffer.store[c]
        if len(samples) < buffer.capacity:
            samples.append(sample)
            report.inserted.append((c, t))
            continue
        choice = best_replacement([x.timestamp for x in samples], t)
        if choice is None:
            report.rejected.append((c, t))
            continue
        i, _ = choice
        evicted = samples.pop(i)
        samples.append(sample)
        buffer.replaced_since_retrain[c] += 1
        report.replaced.append((c, evicted.timestamp, t))
    return buffer, report


def replacement_threshold(capacity: int) -> int:
    return math.ceil(capacity / 4)


def should_retrain(buffer: ReplayBuffer):
    """``(fire, reason)``; a new class takes precedence over replacement drift."""
    if buffer.new_since_retrain:
        return True, NEW_CLASS
    need = replacement_threshold(buffer.capacity)
    if any(n >= need for n in buffer.replaced_since_retrain.values()):
        return True, REPLACEMENT
    return False, None


def reset_trigger(buffer: ReplayBuffer) -> ReplayBuffer:
    for c in buffer.replaced_since_retrain:
        buffer.replaced_since_retrain[c] = 0
    buffer.new_since_retrain.clear()
    return buffer


# ---------------------------------------------------------------------------
# snapshots


def snapshot_bytes(buffer: ReplayBuffer) -> bytes:
    d = buffer.embedding_dim or 0
    parts = [_HEAD.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, d, buffer.capacity, len(buffer.store))]
    rec = struct.Struct(f"<{d}fd")
    for c in buffer.classes:
        samples = buffer.store[c]
        parts.append(_CLASS.pack(c, len(samples), buffer.replaced_since_retrain.get(c, 0),
                                 int(c in buffer.new_since_retrain)))
        for s in samples:
            parts.append(rec.pack(*np.asarray(s.vector, dtype=np.float32).tolist(), s.timestamp))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def snapshot_save(buffer: ReplayBuffer, path) -> int:
    data = snapshot_bytes(buffer)
    Path(path).write_bytes(data)
    return len(data)


def snapshot_load(path) -> ReplayBuffer:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size + 4:
        raise CorruptArtifact(f"{path}: snapshot too short")
    magic, version, d, capacity, n_classes = _HEAD.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise CorruptArtifact(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise VersionMismatch(f"{path}: snapshot version {version}, expected {SNAPSHOT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptArtifact(f"{path}: checksum mismatch (truncated or modified)")
    buf = ReplayBuffer(capacity, d or None)
    rec = struct.Struct(f"<{d}fd")
    pos = _HEAD.size
    try:
        for _ in range(n_classes):
            c, count, replaced, is_new = _CLASS.unpack_from(body, pos)
            pos += _CLASS.size
            samples = []
            for _ in range(count):
                vals = rec.unpack_from(body, pos)
                pos += rec.size
                samples.append(EmbeddingSample(np.array(vals[:d], dtype=np.float32), int(c), vals[d]))
            buf.store[int(c)] = samples
            buf.replaced_since_retrain[int(c)] = replaced
            if is_new:
                buf.new_since_retrain.add(int(c))
    except struct.error as exc:
        raise CorruptArtifact(f"{path}: snapshot body ends early") from exc
    if pos != len(body):
        raise CorruptArtifact(f"{path}: {len(body) - pos} trailing bytes")
    return buf
