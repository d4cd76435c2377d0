"""Domain types, the ``.ccat`` dataset container and a synthetic trial generator."""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"CCAT"
SCHEMA_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIf")
_RECORD_HEAD = struct.Struct("<II")

SPATIAL = "spatial"
TEMPORAL = "temporal"


class FormatError(ValueError):
    """Raised when a container file is malformed or violates a dataset invariant."""


def _frozen_array(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trial:
    """One recorded segment: a channels x time matrix with its subject and class."""

    data: np.ndarray
    subject_id: int
    label: int

    def __post_init__(self):
        arr = _frozen_array(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"trial data must be a non-empty 2-D matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("trial data contains non-finite values")
        if int(self.label) < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")
        if int(self.subject_id) < 0:
            raise ValueError(f"subject_id must be non-negative, got {self.subject_id}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "subject_id", int(self.subject_id))
        object.__setattr__(self, "label", int(self.label))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def replace_data(self, data) -> "Trial":
        return Trial(data, self.subject_id, self.label)

    def __eq__(self, other):
        if not isinstance(other, Trial):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.label == other.label
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    trials: tuple
    num_classes: int
    sample_rate_hz: float = 250.0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        trials = tuple(self.trials)
        object.__setattr__(self, "trials", trials)
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.sample_rate_hz > 0 or not math.isfinite(self.sample_rate_hz):
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if trials:
            shape = trials[0].shape
            for i, tr in enumerate(trials):
                if tr.shape != shape:
                    raise ValueError(f"trial {i} has shape {tr.shape}, expected {shape}")
                if tr.label >= self.num_classes:
                    raise ValueError(f"trial {i} label {tr.label} >= num_classes {self.num_classes}")

    def __len__(self):
        return len(self.trials)

    def __getitem__(self, idx):
        return self.trials[idx]

    @property
    def shape(self) -> Optional[tuple[int, int]]:
        return self.trials[0].shape if self.trials else None

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=np.int64)

    @property
    def subjects(self) -> np.ndarray:
        return np.array([t.subject_id for t in self.trials], dtype=np.int64)

    def stacked(self) -> np.ndarray:
        """All trial matrices as one ``(N, C, T)`` array."""
        if not self.trials:
            return np.zeros((0, 0, 0))
        return np.stack([t.data for t in self.trials])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(
            tuple(self.trials[i] for i in indices),
            self.num_classes,
            self.sample_rate_hz,
            self.schema_version,
        )

    def with_trials(self, trials) -> "Dataset":
        return Dataset(tuple(trials), self.num_classes, self.sample_rate_hz, self.schema_version)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.sample_rate_hz == other.sample_rate_hz
            and self.schema_version == other.schema_version
            and self.trials == other.trials
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SoftLabel:
    """A probability distribution over ``K`` classes."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.probs)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probs must be a non-empty vector")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"probabilities must lie in [0, 1], got {p}")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {p.sum()!r}")
        object.__setattr__(self, "probs", p)

    @classmethod
    def one_hot(cls, k: int, num_classes: int) -> "SoftLabel":
        if not 0 <= k < num_classes:
            raise ValueError(f"class {k} outside [0, {num_classes})")
        p = np.zeros(num_classes)
        p[k] = 1.0
        return cls(p)

    @property
    def num_classes(self) -> int:
        return self.probs.size

    def argmax(self) -> int:
        return int(np.argmax(self.probs))

    def __eq__(self, other):
        if not isinstance(other, SoftLabel):
            return NotImplemented
        return self.probs.tobytes() == other.probs.tobytes()

    __hash__ = None


@dataclass(frozen=True)
class Provenance:
    """Which slice of which trial was spliced into the base.

    An empty window (nothing replaced) is stored as ``window_end == window_start - 1``.
    """

    base_index: int
    material_index: int
    axis: str
    window_start: int
    window_end: int
    realized_ratio: float
    axis_length: int

    def __post_init__(self):
        if self.axis not in (SPATIAL, TEMPORAL):
            raise ValueError(f"axis must be {SPATIAL!r} or {TEMPORAL!r}, got {self.axis!r}")
        if self.window_end < self.window_start - 1:
            raise ValueError("window_end precedes window_start")
        length = self.window_end - self.window_start + 1
        if self.realized_ratio != length / self.axis_length:
            raise ValueError(
                f"realized_ratio {self.realized_ratio} != window length {length} / {self.axis_length}"
            )

    @property
    def window_length(self) -> int:
        return self.window_end - self.window_start + 1

    def to_dict(self) -> dict:
        return {
            "base_index": self.base_index,
            "material_index": self.material_index,
            "axis": self.axis,
            "window_start": self.window_start,
            "window_end": self.window_end,
            "realized_ratio": self.realized_ratio,
            "axis_length": self.axis_length,
        }


@dataclass(frozen=True, eq=False)
class AugmentedPair:
    data: np.ndarray
    label: SoftLabel
    provenance: Optional[Provenance] = None

    def __post_init__(self):
        arr = _frozen_array(self.data)
        if arr.ndim != 2:
            raise ValueError(f"augmented data must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("augmented data contains non-finite values")
        object.__setattr__(self, "data", arr)

    def __eq__(self, other):
        if not isinstance(other, AugmentedPair):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and self.label == other.label
            and self.provenance == other.provenance
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# synthetic data


def _class_frequency(k: int) -> float:
    # mu/beta band, 4 Hz apart per class
    return 8.0 + 4.0 * k


def generate_synthetic(
    n_per_class: int,
    C: int,
    T: int,
    K: int,
    class_separation: float = 2.0,
    noise_sd: float = 1.0,
    seed: int = 0,
    sample_rate_hz: float = 250.0,
    n_subjects: int = 3,
    onset_frac: float = 0.2,
) -> Dataset:
    """Generate a labelled set of sinusoid-plus-noise trials.

    Class ``k`` drives every channel with a sinusoid at ``8 + 4k`` Hz (random
    phase per trial). The channel ``k mod C`` carries amplitude
    ``class_separation``; the others carry half of it, so classes differ in
    their spatial power pattern. The first ``onset_frac`` of each trial is
    noise only, mimicking a rest period before the cue. Values are rounded
    to float32 precision so the trials survive a container round-trip
    bit-exactly.
    """
    for name, v in (("n_per_class", n_per_class), ("C", C), ("T", T), ("K", K), ("n_subjects", n_subjects)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if not noise_sd > 0:
        raise ValueError(f"noise_sd must be positive, got {noise_sd}")
    if not 0 <= onset_frac < 1:
        raise ValueError(f"onset_frac must lie in [0, 1), got {onset_frac}")

    rng = np.random.default_rng(seed)
    t = np.arange(T) / sample_rate_hz
    envelope = (np.arange(T) >= int(round(onset_frac * T))).astype(np.float64)

    trials = []
    for i in range(n_per_class * K):
        k = i % K
        amp = np.full(C, 0.5 * class_separation)
        amp[k % C] = class_separation
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(C, 1))
        signal = amp[:, None] * np.sin(2.0 * np.pi * _class_frequency(k) * t[None, :] + phase) * envelope
        x = signal + noise_sd * rng.standard_normal((C, T))
        x = x.astype(np.float32).astype(np.float64)
        trials.append(Trial(x, subject_id=(i // K) % n_subjects, label=k))
    return Dataset(tuple(trials), K, float(np.float32(sample_rate_hz)))


# ---------------------------------------------------------------------------
# container I/O


def encode_dataset(dataset: Dataset) -> bytes:
    shape = dataset.shape or (0, 0)
    C, T = shape
    parts = [
        _HEADER.pack(
            MAGIC,
            dataset.schema_version,
            len(dataset),
            C,
            T,
            dataset.num_classes,
            dataset.sample_rate_hz,
        )
    ]
    for tr in dataset.trials:
        parts.append(_RECORD_HEAD.pack(tr.subject_id, tr.label))
        parts.append(np.ascontiguousarray(tr.data, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_dataset(buf: bytes) -> Dataset:
    if len(buf) < _HEADER.size:
        raise FormatError("missing header" if len(buf) == 0 else "truncated header")
    magic, version, n, C, T, K, fs = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic: expected {MAGIC!r}, got {magic!r}")
    if version != SCHEMA_VERSION:
        raise FormatError(f"schema_version: unsupported version {version}")
    if n > 0 and (C < 1 or T < 1):
        raise FormatError(f"shape: C={C}, T={T} must be positive")
    if K < 2:
        raise FormatError(f"num_classes: K={K} must be >= 2")
    if not (fs > 0 and math.isfinite(fs)):
        raise FormatError(f"sample_rate_hz: {fs} must be positive")

    rec_floats = C * T
    rec_size = _RECORD_HEAD.size + 4 * rec_floats
    expected = _HEADER.size + n * rec_size
    if len(buf) < expected:
        raise FormatError(
            f"truncated payload: header declares N={n} trials ({expected} bytes), file has {len(buf)}"
        )
    if len(buf) > expected:
        raise FormatError(f"shape mismatch: {len(buf) - expected} trailing bytes after N={n} trials")

    trials = []
    off = _HEADER.size
    for i in range(n):
        subject, label = _RECORD_HEAD.unpack_from(buf, off)
        off += _RECORD_HEAD.size
        data = np.frombuffer(buf, dtype="<f4", count=rec_floats, offset=off).reshape(C, T)
        off += 4 * rec_floats
        if label >= K:
            raise FormatError(f"label: trial {i} has label {label} >= K={K}")
        if not np.all(np.isfinite(data)):
            raise FormatError(f"data: trial {i} contains non-finite values")
        trials.append(Trial(data.astype(np.float64), subject, label))
    return Dataset(tuple(trials), K, float(fs), version)


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset`` to ``path`` in the ``.ccat`` container format.

    Samples are stored as float32; data that is not float32-representable
    is rounded on the way out.
    """
    atomic_write_bytes(path, encode_dataset(dataset))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_dataset(buf)
