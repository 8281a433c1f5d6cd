"""Missing-marker masks and the corruption applied to network inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadWindow, DimensionMismatch, UnreachableRate

RATE_TOLERANCE = 0.01


@dataclass
class MaskSequence:
    """Per-frame, per-marker presence; ``True`` means observed.

    The mask is marker-granular, so the three coordinates of a marker are
    always missing or present together.
    """

    present: np.ndarray

    def __post_init__(self):
        self.present = np.asarray(self.present, dtype=bool)
        if self.present.ndim != 2:
            raise DimensionMismatch(f"mask must be 2-D (frames, markers), got shape {self.present.shape}")

    @property
    def n_frames(self) -> int:
        return self.present.shape[0]

    @property
    def n_markers(self) -> int:
        return self.present.shape[1]

    @property
    def missing_rate(self) -> float:
        return float(np.count_nonzero(~self.present)) / self.present.size

    @property
    def any_missing(self) -> bool:
        return not self.present.all()

    def coordinates(self) -> np.ndarray:
        """Presence expanded to ``(frames, 3 * markers)``."""
        return np.repeat(self.present, 3, axis=1)

    def __getitem__(self, frames) -> MaskSequence:
        return MaskSequence(self.present[frames])

    def __eq__(self, other):
        return isinstance(other, MaskSequence) and np.array_equal(self.present, other.present)

    def to_csv(self, path):
        np.savetxt(path, self.present.astype(np.uint8), fmt="%d", delimiter=",")

    @classmethod
    def from_csv(cls, path) -> MaskSequence:
        data = np.loadtxt(Path(path), delimiter=",", dtype=np.int64, ndmin=2)
        if not np.isin(data, (0, 1)).all():
            raise ValueError(f"{path}: mask CSV must hold only 0/1")
        return cls(data.astype(bool))

    @classmethod
    def full(cls, n_frames: int, n_markers: int) -> MaskSequence:
        return cls(np.ones((n_frames, n_markers), dtype=bool))


@dataclass(frozen=True)
class GapSpec:
    missing_rate: float
    gap_mean: float = 10.0
    gap_std: float = 5.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.missing_rate < 1.0:
            raise UnreachableRate(f"missing rate must lie in [0, 1), got {self.missing_rate}")
        if not self.gap_mean > 0 or self.gap_std < 0:
            raise ValueError("gap_mean must be positive and gap_std non-negative")


def sample_mask(frames: int, markers: int, spec: GapSpec, rng: np.random.Generator | None = None) -> MaskSequence:
    """Random gaps until the missing rate reaches ``spec.missing_rate``.

    Each gap picks a marker and start frame uniformly and a duration from
    ``N(gap_mean, gap_std)`` rounded and clamped to ``[1, frames - start]``.
    Gaps that would push the rate more than one percentage point above the
    target are rejected; overlapping gaps merge. The realized rate ends in
    ``[target, target + 0.01]``. On masks so small that no cell count fits
    in that band, sampling stops at the smallest count reaching the target.
    Pass ``rng`` to draw from an existing stream instead of ``spec.rng_seed``.
    """
    if frames < 1 or markers < 1:
        raise ValueError("mask needs at least one frame and one marker")
    present = np.ones((frames, markers), dtype=bool)
    if spec.missing_rate == 0:
        return MaskSequence(present)
    total = frames * markers
    need = math.ceil(spec.missing_rate * total - 1e-9)
    limit = max(math.floor((spec.missing_rate + RATE_TOLERANCE) * total + 1e-9), need)
    if need > total:
        raise UnreachableRate(f"rate {spec.missing_rate} not reachable on a {frames}x{markers} mask")
    rng = np.random.default_rng(spec.rng_seed) if rng is None else rng
    missing = 0
    for _ in range(10 * total):
        marker = int(rng.integers(markers))
        start = int(rng.integers(frames))
        length = int(round(rng.normal(spec.gap_mean, spec.gap_std)))
        length = min(max(length, 1), frames - start)
        column = present[start : start + length, marker]
        added = int(column.sum())
        if missing + added > limit:
            continue
        column[:] = False
        missing += added
        if missing >= need:
            return MaskSequence(present)
    raise UnreachableRate(f"rate {spec.missing_rate} not reached after {10 * total} gap placements")


def long_gap_mask(frames: int, markers: int, markers_missing, lead_in: int, gap: int) -> MaskSequence:
    """All markers present except ``markers_missing`` over ``[lead_in, lead_in + gap)``."""
    if lead_in < 0 or gap < 0 or lead_in + gap > frames:
        raise BadWindow(f"gap [{lead_in}, {lead_in + gap}) does not fit in {frames} frames")
    present = np.ones((frames, markers), dtype=bool)
    idx = sorted(markers_missing)
    if idx and not (0 <= idx[0] and idx[-1] < markers):
        raise BadWindow(f"marker indices {idx} outside [0, {markers})")
    present[lead_in : lead_in + gap, idx] = False
    return MaskSequence(present)


def corrupt(x, mask, noise_alpha: float = 0.0, sigma=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Null out missing markers and add training noise to the observed ones.

    ``x`` has shape ``(..., frames, 3n)`` in normalized units; ``mask`` is a
    :class:`MaskSequence` or a boolean array ``(..., frames, n)`` that
    broadcasts against it. Observed coordinates get Gaussian noise with
    standard deviation ``noise_alpha * sigma`` (per coordinate).
    """
    x = np.asarray(x, dtype=np.float64)
    present = mask.present if isinstance(mask, MaskSequence) else np.asarray(mask, dtype=bool)
    if present.shape[-1] * 3 != x.shape[-1] or present.shape[-2] != x.shape[-2]:
        raise DimensionMismatch(f"mask {present.shape} does not fit poses {x.shape}")
    if noise_alpha < 0:
        raise ValueError("noise_alpha must be non-negative")
    coords = np.repeat(present, 3, axis=-1)
    if noise_alpha > 0:
        if sigma is None or rng is None:
            raise ValueError("noise needs both sigma and rng")
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.shape != (x.shape[-1],):
            raise DimensionMismatch(f"sigma shape {sigma.shape} != ({x.shape[-1]},)")
        x = x + rng.standard_normal(x.shape) * (noise_alpha * sigma)
    return np.where(coords, x, 0.0)
