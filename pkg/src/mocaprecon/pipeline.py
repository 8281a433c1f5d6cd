"""Preprocessing: hip-centering, normalization, splits and sliding windows."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bvh import PoseSequence, forward_kinematics, read_bvh
from .errors import (
    ConfigError,
    DegenerateData,
    DimensionMismatch,
    MissingHipMarker,
    SequenceTooShort,
    UnknownSequenceId,
)

DATA_ROOT_ENV = "MOCAPRECON_DATA_ROOT"


def hip_center(poses: PoseSequence, hip_marker: str | None = None) -> PoseSequence:
    """Subtract the hip marker from every marker, frame by frame.

    ``hip_marker`` defaults to the first marker, which is the BVH root.
    """
    name = poses.marker_names[0] if hip_marker is None else hip_marker
    if name not in poses.marker_names:
        raise MissingHipMarker(f"hip marker {name!r} not among markers")
    hip = poses.marker(name)
    frames = poses.positions.reshape(poses.n_frames, poses.n_markers, 3)
    centered = frames - hip[:, None, :]
    return poses.replace(centered.reshape(poses.n_frames, -1))


@dataclass
class Normalizer:
    mean_pose: np.ndarray
    max_abs: float
    sigma: np.ndarray

    def __post_init__(self):
        self.mean_pose = np.asarray(self.mean_pose, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.max_abs = float(self.max_abs)
        if not self.max_abs > 0 or not np.isfinite(self.max_abs):
            raise DegenerateData(f"max_abs must be positive and finite, got {self.max_abs}")
        if self.mean_pose.shape != self.sigma.shape:
            raise DimensionMismatch("mean_pose and sigma shapes differ")
        if (self.sigma < 0).any() or not np.isfinite(self.sigma).all() or not np.isfinite(self.mean_pose).all():
            raise ValueError("normalizer statistics must be finite with sigma >= 0")

    @property
    def dim(self) -> int:
        return self.mean_pose.shape[0]

    @property
    def normalized_sigma(self) -> np.ndarray:
        """Per-coordinate training standard deviation in normalized units."""
        return self.sigma / self.max_abs

    def to_dict(self) -> dict:
        return {"mean_pose": self.mean_pose.tolist(), "max_abs": self.max_abs, "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Normalizer:
        return cls(np.array(d["mean_pose"]), d["max_abs"], np.array(d["sigma"]))


def _as_array(poses) -> np.ndarray:
    return poses.positions if isinstance(poses, PoseSequence) else np.asarray(poses, dtype=np.float64)


def fit_normalizer(training) -> Normalizer:
    """Statistics of the training frames: mean pose, global max deviation, per-coordinate std.

    ``training`` is a list of hip-centered :class:`PoseSequence` (or 2-D arrays).
    """
    if len(training) == 0:
        raise ValueError("training set is empty")
    data = np.concatenate([_as_array(p) for p in training], axis=0)
    mean = data.mean(axis=0)
    sigma = data.std(axis=0)
    max_abs = float(np.abs(data - mean).max())
    if max_abs == 0:
        raise DegenerateData("all training poses are identical")
    return Normalizer(mean, max_abs, sigma)


def _check_dim(arr: np.ndarray, norm: Normalizer):
    if arr.shape[-1] != norm.dim:
        raise DimensionMismatch(f"pose dimension {arr.shape[-1]} != normalizer dimension {norm.dim}")


def normalize(poses, norm: Normalizer):
    arr = _as_array(poses)
    _check_dim(arr, norm)
    out = (arr - norm.mean_pose) / norm.max_abs
    return poses.replace(out) if isinstance(poses, PoseSequence) else out


def denormalize(normalized, norm: Normalizer):
    arr = _as_array(normalized)
    _check_dim(arr, norm)
    out = arr * norm.max_abs + norm.mean_pose
    return normalized.replace(out) if isinstance(normalized, PoseSequence) else out


@dataclass
class WindowBatch:
    """Flattened windows ``(B, length * 3n)`` plus where each one came from."""

    windows: np.ndarray
    length: int
    seq_ids: list
    starts: np.ndarray

    def __len__(self):
        return self.windows.shape[0]


def window_count(n_frames: int, length: int, stride: int) -> int:
    if n_frames < length:
        raise SequenceTooShort(f"{n_frames} frames is shorter than window length {length}")
    return (n_frames - length) // stride + 1


def sliding_windows(sequence, length: int, stride: int = 1, seq_id=None) -> WindowBatch:
    """All windows of ``length`` frames starting at ``0, stride, 2*stride, ...``.

    The returned windows are a read-only view into ``sequence``.
    """
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be positive")
    arr = _as_array(sequence)
    count = window_count(arr.shape[0], length, stride)
    view = np.lib.stride_tricks.sliding_window_view(arr, (length, arr.shape[1]))[::stride, 0]
    view = view[:count].reshape(count, length * arr.shape[1]) if count else view
    starts = np.arange(count) * stride
    return WindowBatch(view, length, [seq_id] * count, starts)


@dataclass(frozen=True)
class SequenceEntry:
    id: str
    path: str
    subject: str
    motion: str


@dataclass
class Catalog:
    """Sequence id -> BVH path, subject and motion tag, plus dataset-wide settings."""

    entries: list[SequenceEntry]
    unit_scale_to_cm: float = 1.0
    hip_marker: str | None = None
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate sequence ids in catalog")
        self._by_id = {e.id: e for e in self.entries}

    def __contains__(self, seq_id):
        return seq_id in self._by_id

    def __getitem__(self, seq_id) -> SequenceEntry:
        try:
            return self._by_id[seq_id]
        except KeyError:
            raise UnknownSequenceId(f"unknown sequence id {seq_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def resolve(self, entry: SequenceEntry) -> Path:
        path = Path(entry.path)
        return path if path.is_absolute() else self.root / path

    def load(self, seq_id: str) -> PoseSequence:
        """Read a sequence, run forward kinematics and hip-center it."""
        entry = self[seq_id]
        skeleton, frames = read_bvh(self.resolve(entry))
        return hip_center(forward_kinematics(skeleton, frames, self.unit_scale_to_cm), self.hip_marker)


_CATALOG_KEYS = {"unit_scale_to_cm", "hip_marker", "sequences"}
_ENTRY_KEYS = {"id", "path", "subject", "motion"}


def load_catalog(path) -> Catalog:
    """Read a catalog JSON file.

    Relative BVH paths resolve against ``$MOCAPRECON_DATA_ROOT`` when set,
    otherwise against the catalog's directory.
    """
    path = Path(path)
    data = json.loads(path.read_text())
    unknown = set(data) - _CATALOG_KEYS
    if unknown:
        raise ConfigError(f"unknown catalog keys: {sorted(unknown)}")
    entries = []
    for item in data.get("sequences", []):
        bad = set(item) ^ _ENTRY_KEYS
        if bad:
            raise ConfigError(f"catalog entry {item.get('id')!r} has bad keys: {sorted(bad)}")
        entries.append(SequenceEntry(str(item["id"]), item["path"], str(item["subject"]), item["motion"]))
    root = Path(os.environ.get(DATA_ROOT_ENV, path.parent))
    return Catalog(entries, float(data.get("unit_scale_to_cm", 1.0)), data.get("hip_marker"), root)


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        a, b, c = set(self.train), set(self.validation), set(self.test)
        if a & b or a & c or b & c:
            raise ConfigError(f"split lists overlap: {sorted((a & b) | (a & c) | (b & c))}")

    @classmethod
    def load(cls, path) -> SplitSpec:
        data = json.loads(Path(path).read_text())
        unknown = set(data) - {"train", "validation", "test"}
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        return cls(data.get("train", ()), data.get("validation", ()), data.get("test", ()))

    def save(self, path):
        Path(path).write_text(
            json.dumps({"train": list(self.train), "validation": list(self.validation), "test": list(self.test)}, indent=2)
        )


@dataclass(frozen=True)
class Dataset:
    """An immutable handle on a list of catalog sequences."""

    name: str
    entries: tuple[SequenceEntry, ...]

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def load(self, catalog: Catalog) -> dict[str, PoseSequence]:
        return {e.id: catalog.load(e.id) for e in self.entries}


def make_splits(
    catalog: Catalog,
    spec: SplitSpec,
    without_subjects=(),
    without_motions=(),
) -> tuple[Dataset, Dataset, Dataset]:
    """Train, validation and test handles.

    ``without_subjects`` / ``without_motions`` drop matching recordings from
    the training handle only, for the generalization experiments.
    """
    for seq_id in spec.train + spec.validation + spec.test:
        catalog[seq_id]
    drop_subjects = {str(s) for s in without_subjects}
    drop_motions = set(without_motions)
    train = tuple(
        catalog[i]
        for i in spec.train
        if catalog[i].subject not in drop_subjects and catalog[i].motion not in drop_motions
    )
    return (
        Dataset("train", train),
        Dataset("validation", tuple(catalog[i] for i in spec.validation)),
        Dataset("test", tuple(catalog[i] for i in spec.test)),
    )
