"""Non-learned reconstructors: per-marker linear interpolation and mean-pose filling."""

from __future__ import annotations

import numpy as np

from .bvh import PoseSequence
from .corruption import MaskSequence
from .errors import DimensionMismatch


def _unpack(poses, mask):
    arr = poses.positions if isinstance(poses, PoseSequence) else np.asarray(poses, dtype=np.float64)
    present = mask.present if isinstance(mask, MaskSequence) else np.asarray(mask, dtype=bool)
    if arr.ndim != 2 or present.shape != (arr.shape[0], arr.shape[1] // 3) or arr.shape[1] % 3:
        raise DimensionMismatch(f"mask {present.shape} does not fit poses {arr.shape}")
    return arr, present


def _wrap(poses, out):
    return poses.replace(out) if isinstance(poses, PoseSequence) else out


def interpolate_linear(poses, mask, mean_pose=None):
    """Fill every gap by a straight line between the observations around it.

    Gaps touching the start or end continue the line through the two nearest
    observations (a single observation is held). A marker that is never
    observed takes its ``mean_pose`` coordinates (zeros when not given, which
    is the mean in normalized units).
    """
    arr, present = _unpack(poses, mask)
    out = arr.copy()
    frames = np.arange(arr.shape[0])
    fill = np.zeros(arr.shape[1]) if mean_pose is None else np.asarray(mean_pose, dtype=np.float64)
    for m in range(present.shape[1]):
        seen = present[:, m]
        if seen.all():
            continue
        cols = slice(3 * m, 3 * m + 3)
        if not seen.any():
            out[:, cols] = fill[cols]
            continue
        known = frames[seen]
        values = arr[seen, cols]
        out[~seen, cols] = np.stack([np.interp(frames[~seen], known, values[:, k]) for k in range(3)], axis=1)
        if len(known) < 2:
            continue
        for edge, (a, b) in ((frames < known[0], (0, 1)), (frames > known[-1], (-2, -1))):
            if edge.any():
                slope = (values[b] - values[a]) / (known[b] - known[a])
                out[edge, cols] = values[a] + (frames[edge, None] - known[a]) * slope
    return _wrap(poses, out)


def fill_mean(poses, mask, norm):
    """Replace missing markers with the normalizer's mean pose."""
    arr, present = _unpack(poses, mask)
    coords = np.repeat(present, 3, axis=1)
    return _wrap(poses, np.where(coords, arr, norm.mean_pose))
