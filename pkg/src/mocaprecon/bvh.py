"""BVH reading, writing and forward kinematics.

A BVH file holds a joint hierarchy (offsets and channel layout per joint) and
a block of per-frame channel values. :func:`parse_bvh` turns the text into a
:class:`Skeleton` plus :class:`ChannelFrames`; :func:`forward_kinematics` turns
those into a :class:`PoseSequence` of global joint positions, which is the
marker representation used everywhere else in the package.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BvhSyntaxError, ChannelMismatch, DimensionMismatch, EmptyMotion

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
VALID_CHANNELS = frozenset(POSITION_CHANNELS + ROTATION_CHANNELS)

# CMU BVH conversions keep the ASF length unit: inches scaled by 1/0.45.
CMU_UNIT_SCALE_TO_CM = 2.54 / 0.45


@dataclass
class Joint:
    name: str
    parent: int | None
    offset: np.ndarray
    channels: tuple[str, ...]
    end_site: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, Joint):
            return NotImplemented
        if (self.end_site is None) != (other.end_site is None):
            return False
        return (
            self.name == other.name
            and self.parent == other.parent
            and self.channels == other.channels
            and np.array_equal(self.offset, other.offset)
            and (self.end_site is None or np.array_equal(self.end_site, other.end_site))
        )


@dataclass
class Skeleton:
    joints: list[Joint]

    def __post_init__(self):
        if not self.joints:
            raise BvhSyntaxError("skeleton has no joints")
        if self.joints[0].parent is not None:
            raise BvhSyntaxError("joint 0 must be the root")
        for i, joint in enumerate(self.joints[1:], start=1):
            if joint.parent is None or not 0 <= joint.parent < i:
                raise BvhSyntaxError(f"joint {joint.name!r} is not in topological order")
            if len(joint.channels) not in (3, 6):
                raise BvhSyntaxError(f"joint {joint.name!r} has {len(joint.channels)} channels")
        if len(self.joints[0].channels) not in (3, 6):
            raise BvhSyntaxError(f"root has {len(self.joints[0].channels)} channels")

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    @property
    def parents(self) -> list[int | None]:
        return [j.parent for j in self.joints]

    @property
    def n_channels(self) -> int:
        return sum(len(j.channels) for j in self.joints)

    def channel_slices(self) -> list[slice]:
        slices, start = [], 0
        for j in self.joints:
            slices.append(slice(start, start + len(j.channels)))
            start += len(j.channels)
        return slices

    def children(self, index: int) -> list[int]:
        return [i for i, j in enumerate(self.joints) if j.parent == index]


@dataclass
class ChannelFrames:
    frame_time: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise EmptyMotion("motion needs at least one frame")
        if not self.frame_time > 0:
            raise BvhSyntaxError(f"frame time must be positive, got {self.frame_time}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.frame_time


@dataclass
class PoseSequence:
    """Marker positions, one row per frame, ``x, y, z`` interleaved per marker."""

    marker_names: list[str]
    frame_rate: float
    unit_scale_to_cm: float
    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 * len(self.marker_names):
            raise DimensionMismatch(
                f"positions shape {self.positions.shape} does not match "
                f"{len(self.marker_names)} markers"
            )
        if not np.isfinite(self.positions).all():
            raise ValueError("positions contain non-finite values")

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_markers(self) -> int:
        return len(self.marker_names)

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate

    def marker(self, name: str) -> np.ndarray:
        i = self.marker_names.index(name)
        return self.positions[:, 3 * i : 3 * i + 3]

    def replace(self, positions: np.ndarray) -> PoseSequence:
        return PoseSequence(list(self.marker_names), self.frame_rate, self.unit_scale_to_cm, positions)


_TOKEN = re.compile(r"[{}]|[^\s{}]+")


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            self.items.extend((m.group(0), lineno) for m in _TOKEN.finditer(line))
        self.pos = 0

    def peek(self):
        return self.items[self.pos] if self.pos < len(self.items) else (None, self.last_line)

    @property
    def last_line(self):
        return self.items[-1][1] if self.items else 1

    def next(self, what="token"):
        if self.pos >= len(self.items):
            raise BvhSyntaxError(f"unexpected end of file, expected {what}", self.last_line)
        tok = self.items[self.pos]
        self.pos += 1
        return tok

    def expect(self, literal):
        tok, line = self.next(repr(literal))
        if tok != literal:
            raise BvhSyntaxError(f"expected {literal!r}, found {tok!r}", line)
        return line

    def number(self, what="number"):
        tok, line = self.next(what)
        try:
            return float(tok), line
        except ValueError:
            raise BvhSyntaxError(f"expected {what}, found {tok!r}", line) from None


def _parse_offset(tokens: _Tokens) -> np.ndarray:
    tokens.expect("OFFSET")
    return np.array([tokens.number("offset value")[0] for _ in range(3)])


def _parse_joint(tokens: _Tokens, name: str, parent: int | None, joints: list[Joint]):
    tokens.expect("{")
    offset = _parse_offset(tokens)
    tokens.expect("CHANNELS")
    count, line = tokens.number("channel count")
    if count not in (3, 6):
        raise BvhSyntaxError(f"joint {name!r} declares {count:g} channels, expected 3 or 6", line)
    channels = []
    for _ in range(int(count)):
        ch, line = tokens.next("channel name")
        if ch not in VALID_CHANNELS:
            raise BvhSyntaxError(f"unknown channel {ch!r}", line)
        channels.append(ch)
    index = len(joints)
    joints.append(Joint(name, parent, offset, tuple(channels)))
    while True:
        tok, line = tokens.next("'}'")
        if tok == "}":
            return
        if tok == "JOINT":
            child_name, _ = tokens.next("joint name")
            _parse_joint(tokens, child_name, index, joints)
        elif tok == "End":
            tokens.expect("Site")
            tokens.expect("{")
            end = _parse_offset(tokens)
            tokens.expect("}")
            if joints[index].end_site is not None:
                raise BvhSyntaxError(f"joint {name!r} has two End Sites", line)
            joints[index].end_site = end
        else:
            raise BvhSyntaxError(f"unknown keyword {tok!r}", line)


def parse_bvh(text: str) -> tuple[Skeleton, ChannelFrames]:
    """Parse a BVH document.

    Raises
    ------
    BvhSyntaxError
        Unknown keyword, unbalanced braces, bad channel declaration.
    ChannelMismatch
        Motion lines disagree with the declared frame count or channel count.
    EmptyMotion
        The file declares zero frames.
    """
    marker = re.search(r"^[ \t]*MOTION[ \t]*$", text, flags=re.MULTILINE)
    if marker is None:
        raise BvhSyntaxError("missing MOTION section", text.count("\n") + 1)
    head, motion = text[: marker.start()], text[marker.end() :]
    motion_line0 = head.count("\n") + 1

    tokens = _Tokens(head)
    tokens.expect("HIERARCHY")
    tokens.expect("ROOT")
    root_name, _ = tokens.next("root name")
    joints: list[Joint] = []
    _parse_joint(tokens, root_name, None, joints)
    tok, line = tokens.peek()
    if tok is not None:
        raise BvhSyntaxError(f"unexpected {tok!r} after hierarchy", line)
    skeleton = Skeleton(joints)

    lines = motion.splitlines()
    n_frames, frame_time, data_start = None, None, None
    for i, raw in enumerate(lines):
        stripped = raw.strip()
        if not stripped:
            continue
        lineno = motion_line0 + i
        if n_frames is None:
            m = re.fullmatch(r"Frames:\s*(\S+)", stripped)
            if m is None:
                raise BvhSyntaxError(f"expected 'Frames:', found {stripped!r}", lineno)
            try:
                n_frames = int(m.group(1))
            except ValueError:
                raise BvhSyntaxError(f"bad frame count {m.group(1)!r}", lineno) from None
        elif frame_time is None:
            m = re.fullmatch(r"Frame\s+Time:\s*(\S+)", stripped)
            if m is None:
                raise BvhSyntaxError(f"expected 'Frame Time:', found {stripped!r}", lineno)
            try:
                frame_time = float(m.group(1))
            except ValueError:
                raise BvhSyntaxError(f"bad frame time {m.group(1)!r}", lineno) from None
            data_start = i + 1
            break
    if frame_time is None:
        raise BvhSyntaxError("incomplete MOTION header", motion_line0 + len(lines))
    if n_frames == 0:
        raise EmptyMotion("file declares 0 frames", motion_line0)
    if n_frames < 0:
        raise BvhSyntaxError(f"negative frame count {n_frames}", motion_line0)

    n_channels = skeleton.n_channels
    rows = []
    for i in range(data_start, len(lines)):
        parts = lines[i].split()
        if not parts:
            continue
        lineno = motion_line0 + i
        if len(parts) != n_channels:
            raise ChannelMismatch(f"frame has {len(parts)} values, expected {n_channels}", lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise BvhSyntaxError("non-numeric motion value", lineno) from None
    if len(rows) != n_frames:
        raise ChannelMismatch(f"declared {n_frames} frames but found {len(rows)}", motion_line0)
    return skeleton, ChannelFrames(frame_time, np.array(rows, dtype=np.float64))


def read_bvh(path) -> tuple[Skeleton, ChannelFrames]:
    return parse_bvh(Path(path).read_text())


def _fmt(value: float, precision: int | None) -> str:
    if precision is None:
        text = repr(float(value))
        return text[:-2] if text.endswith(".0") else text
    return f"{value:.{precision}g}"


def serialize_bvh(skeleton: Skeleton, frames: ChannelFrames, precision: int | None = None) -> str:
    """Write a BVH document.

    With ``precision=None`` every float is written in its shortest exact
    form, so parsing the output gives back identical values. Values read
    from a file written with at most 6 significant digits come out in the
    same 6-digit form.
    """
    if frames.values.shape[1] != skeleton.n_channels:
        raise DimensionMismatch(
            f"{frames.values.shape[1]} channel columns for a skeleton with {skeleton.n_channels}"
        )
    out = ["HIERARCHY"]

    def vec(v):
        return " ".join(_fmt(x, precision) for x in v)

    def emit(index, depth):
        joint = skeleton.joints[index]
        pad = "\t" * depth
        out.append(f"{pad}{'ROOT' if joint.parent is None else 'JOINT'} {joint.name}")
        out.append(pad + "{")
        out.append(f"{pad}\tOFFSET {vec(joint.offset)}")
        out.append(f"{pad}\tCHANNELS {len(joint.channels)} {' '.join(joint.channels)}")
        for child in skeleton.children(index):
            emit(child, depth + 1)
        if joint.end_site is not None:
            out.append(f"{pad}\tEnd Site")
            out.append(pad + "\t{")
            out.append(f"{pad}\t\tOFFSET {vec(joint.end_site)}")
            out.append(pad + "\t}")
        out.append(pad + "}")

    emit(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {frames.n_frames}")
    out.append(f"Frame Time: {_fmt(frames.frame_time, precision)}")
    out.extend(vec(row) for row in frames.values)
    return "\n".join(out) + "\n"


def write_bvh(path, skeleton: Skeleton, frames: ChannelFrames, precision: int | None = None):
    Path(path).write_text(serialize_bvh(skeleton, frames, precision))


def axis_rotation(axis: str, degrees: np.ndarray) -> np.ndarray:
    """Rotation matrices about a coordinate axis, shape ``degrees.shape + (3, 3)``."""
    theta = np.deg2rad(np.asarray(degrees, dtype=np.float64))
    c, s = np.cos(theta), np.sin(theta)
    one, zero = np.ones_like(c), np.zeros_like(c)
    if axis == "X":
        rows = [[one, zero, zero], [zero, c, -s], [zero, s, c]]
    elif axis == "Y":
        rows = [[c, zero, s], [zero, one, zero], [-s, zero, c]]
    elif axis == "Z":
        rows = [[c, -s, zero], [s, c, zero], [zero, zero, one]]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def local_transforms(joint: Joint, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame local rotation ``(F, 3, 3)`` and translation ``(F, 3)`` of one joint.

    Rotations compose intrinsically in declaration order, so channels
    ``Zrotation Yrotation Xrotation`` give ``Rz @ Ry @ Rx``.
    """
    n = values.shape[0]
    rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    trans = np.broadcast_to(joint.offset, (n, 3)).copy()
    for k, ch in enumerate(joint.channels):
        if ch in ROTATION_CHANNELS:
            rot = rot @ axis_rotation(ch[0], values[:, k])
        else:
            trans[:, "XYZ".index(ch[0])] += values[:, k]
    return rot, trans


def forward_kinematics(
    skeleton: Skeleton, frames: ChannelFrames, unit_scale_to_cm: float = 1.0
) -> PoseSequence:
    """Global joint positions for every frame; one marker per joint."""
    if frames.values.shape[1] != skeleton.n_channels:
        raise DimensionMismatch(
            f"{frames.values.shape[1]} channel columns for a skeleton with {skeleton.n_channels}"
        )
    n_frames, n_joints = frames.n_frames, len(skeleton.joints)
    glob_rot = np.empty((n_joints, n_frames, 3, 3))
    glob_pos = np.empty((n_joints, n_frames, 3))
    for i, (joint, sl) in enumerate(zip(skeleton.joints, skeleton.channel_slices())):
        rot, trans = local_transforms(joint, frames.values[:, sl])
        if joint.parent is None:
            glob_rot[i], glob_pos[i] = rot, trans
        else:
            p = joint.parent
            glob_rot[i] = glob_rot[p] @ rot
            glob_pos[i] = glob_pos[p] + np.einsum("fij,fj->fi", glob_rot[p], trans)
    positions = glob_pos.transpose(1, 0, 2).reshape(n_frames, 3 * n_joints)
    return PoseSequence(skeleton.names, frames.frame_rate, unit_scale_to_cm, positions)
