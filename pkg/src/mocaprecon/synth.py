"""Procedural CMU-style motion capture data.

Generates BVH files on a 41-joint skeleton laid out like a CMU BVH
conversion (Y up, facing +Z, lengths in CMU units of 1/0.45 inch, 120 Hz).
Motions are built from cyclic joint-angle patterns, randomly timed movement
events (punches, shots, jumps, kicks) and smoothed angle noise, with
per-subject bone lengths and movement style. The catalog mirrors the CMU
subject/sequence layout so split filters by subject and motion type work the
same way as on the real database.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.special import ndtr

from .bvh import CMU_UNIT_SCALE_TO_CM, ChannelFrames, Joint, Skeleton, serialize_bvh

FRAME_RATE = 120.0
_AXES = {"X": 0, "Y": 1, "Z": 2}

# name, parent, offset (left side and midline; right side mirrors X)
_LEFT_AND_MID = [
    ("Hips", None, (0.0, 0.0, 0.0)),
    ("LHip", "Hips", (1.6, -0.4, 0.0)),
    ("LKnee", "LHip", (0.0, -7.4, 0.0)),
    ("LAnkle", "LKnee", (0.0, -7.4, 0.0)),
    ("LToe", "LAnkle", (0.0, -0.7, 2.5)),
    ("LHeel", "LAnkle", (0.0, -0.7, -0.8)),
    ("LThigh", "LHip", (0.5, -3.7, 0.4)),
    ("LShin", "LKnee", (0.3, -3.7, 0.45)),
    ("LowerBack", "Hips", (0.0, 1.8, -0.1)),
    ("Spine", "LowerBack", (0.0, 1.8, -0.1)),
    ("Chest", "Spine", (0.0, 1.8, 0.1)),
    ("Neck", "Chest", (0.0, 2.2, -0.1)),
    ("Head", "Neck", (0.0, 1.3, 0.2)),
    ("HeadTop", "Head", (0.0, 1.6, -0.1)),
    ("HeadFront", "Head", (0.0, 0.7, 1.5)),
    ("Sternum", "Chest", (0.0, -0.5, 1.5)),
    ("UpperBack", "Chest", (0.0, 0.5, -1.4)),
    ("LCollar", "Chest", (0.6, 1.6, 0.1)),
    ("LShoulder", "LCollar", (2.6, 0.1, -0.2)),
    ("LElbow", "LShoulder", (5.3, 0.0, 0.0)),
    ("LWrist", "LElbow", (4.6, 0.0, 0.0)),
    ("LHand", "LWrist", (1.4, 0.0, 0.0)),
    ("LFinger", "LHand", (1.4, 0.0, 0.0)),
    ("LUpperArm", "LShoulder", (2.6, 0.2, -0.5)),
    ("LForearm", "LElbow", (2.3, 0.4, 0.3)),
    ("LowerBackMarker", "Spine", (0.0, 0.3, -1.5)),
]


def _mirror_name(name: str) -> str:
    return "R" + name[1:] if name.startswith("L") and name[1].isupper() else name


def _is_left(name: str) -> bool:
    return name.startswith("L") and name[1].isupper()


def _joint_table():
    table = []
    for name, parent, offset in _LEFT_AND_MID:
        table.append((name, parent, offset))
    for name, parent, offset in _LEFT_AND_MID:
        if _is_left(name):
            x, y, z = offset
            table.append((_mirror_name(name), _mirror_name(parent), (-x, y, z)))
    # keep children after parents: sort by depth-first order of the left layout
    order = []
    names = [t[0] for t in table]

    def visit(parent):
        for entry in table:
            if entry[1] == parent:
                order.append(entry)
                visit(entry[0])

    visit(None)
    assert len(order) == len(names) == 41
    return order


JOINT_TABLE = _joint_table()
JOINT_NAMES = [t[0] for t in JOINT_TABLE]
ROOT_CHANNELS = ("Xposition", "Yposition", "Zposition", "Zrotation", "Yrotation", "Xrotation")
JOINT_CHANNELS = ("Zrotation", "Yrotation", "Xrotation")


def cmu_style_skeleton(bone_scale: float = 1.0, limb_scales: dict[str, float] | None = None) -> Skeleton:
    """The 41-joint skeleton; ``limb_scales`` rescales offsets of named joints."""
    limb_scales = limb_scales or {}
    index = {name: i for i, name in enumerate(JOINT_NAMES)}
    joints = []
    for name, parent, offset in JOINT_TABLE:
        scale = bone_scale * limb_scales.get(name, 1.0)
        off = np.round(np.array(offset) * scale, 4)
        joints.append(
            Joint(
                name=name,
                parent=None if parent is None else index[parent],
                offset=off,
                channels=ROOT_CHANNELS if parent is None else JOINT_CHANNELS,
                end_site=np.array([0.0, 0.0, 0.0]) if name in ("HeadTop", "LFinger", "RFinger", "LToe", "RToe") else None,
            )
        )
    return Skeleton(joints)


# Cyclic components: joint -> list of (axis, base_deg, amp_deg, harmonic, phase).
# Right-side joints mirror the left with an extra phase of ``lr_phase``.
_BASE_POSTURE = {
    "LShoulder": [("Z", -72.0)],
    "LElbow": [("Y", -15.0)],
    "LKnee": [("X", 5.0)],
    "LHip": [("X", -3.0)],
}

MOTION_TYPES = {
    "walk": dict(
        freq=0.9, lr_phase=np.pi, noise=3.0, noise_time=0.25, bounce=0.3, yaw_wander=25.0,
        cyclic={
            "LHip": [("X", -5.0, 22.0, 1, 0.0)],
            "LKnee": [("X", 20.0, 18.0, 1, -1.2), ("X", 0.0, 6.0, 2, 0.3)],
            "LAnkle": [("X", 0.0, 10.0, 1, -0.6)],
            "LShoulder": [("Y", 0.0, 16.0, 1, 0.0)],
            "LElbow": [("Y", -10.0, 8.0, 1, 0.5)],
            "Spine": [("Y", 0.0, 4.0, 1, np.pi)],
            "Hips": [("Y", 0.0, 4.0, 1, 0.0)],
        },
        events=[],
    ),
    "run": dict(
        freq=1.4, lr_phase=np.pi, noise=4.0, noise_time=0.2, bounce=0.8, yaw_wander=30.0,
        cyclic={
            "LHip": [("X", -15.0, 35.0, 1, 0.0)],
            "LKnee": [("X", 50.0, 40.0, 1, -1.3)],
            "LAnkle": [("X", 0.0, 15.0, 1, -0.6)],
            "LShoulder": [("Y", 0.0, 28.0, 1, 0.0)],
            "LElbow": [("Y", -75.0, 14.0, 1, 0.4)],
            "Spine": [("Y", 0.0, 8.0, 1, np.pi), ("X", 8.0, 0.0, 1, 0.0)],
            "Hips": [("Y", 0.0, 6.0, 1, 0.0)],
        },
        events=[],
    ),
    "basketball": dict(
        freq=1.8, lr_phase=np.pi, noise=4.0, noise_time=0.25, bounce=0.2, yaw_wander=45.0,
        cyclic={
            "RShoulder": [("Y", 35.0, 14.0, 1, 0.0)],
            "RElbow": [("Y", 30.0, 22.0, 1, 0.9)],
            "RWrist": [("Z", 0.0, 20.0, 1, 1.6)],
            "LHip": [("X", -20.0, 10.0, 0.45, 0.0)],
            "LKnee": [("X", 30.0, 10.0, 0.45, -1.0)],
            "Spine": [("X", 10.0, 3.0, 1, 0.0), ("Y", 0.0, 6.0, 0.45, 0.0)],
        },
        events=[
            dict(rate=0.15, width=0.35, side="both", jump=1.2, crouch=35.0,
                 pose={"LShoulder": [("Z", 110.0), ("Y", -40.0)], "LElbow": [("Y", -70.0)], "Spine": [("X", -8.0)]}),
            dict(rate=0.3, width=0.3, side="random", turn=70.0,
                 pose={"LShoulder": [("Y", -30.0)], "Spine": [("Y", 20.0)]}),
        ],
    ),
    "boxing": dict(
        freq=1.6, lr_phase=0.0, noise=4.0, noise_time=0.2, bounce=0.3, yaw_wander=30.0,
        cyclic={
            "LShoulder": [("Y", -45.0, 0.0, 1, 0.0), ("Z", 12.0, 4.0, 1, 0.0)],
            "LElbow": [("Y", -100.0, 5.0, 1, 0.5)],
            "LKnee": [("X", 15.0, 8.0, 1, 0.0)],
            "LHip": [("X", -10.0, 5.0, 1, 0.0)],
            "Spine": [("X", 8.0, 2.0, 1, 0.0)],
        },
        events=[
            dict(rate=0.9, width=0.12, side="random",
                 pose={"LShoulder": [("Y", -30.0), ("Z", 25.0)], "LElbow": [("Y", 95.0)], "Spine": [("Y", 18.0)]}),
            dict(rate=0.2, width=0.3, side="both",
                 pose={"Spine": [("X", 15.0)], "LKnee": [("X", 20.0)], "LHip": [("X", -15.0)]}),
        ],
    ),
    "jump_turn": dict(
        freq=0.5, lr_phase=0.0, noise=3.0, noise_time=0.3, bounce=0.0, yaw_wander=10.0,
        cyclic={
            "LShoulder": [("Y", 0.0, 10.0, 1, 0.0)],
            "LKnee": [("X", 10.0, 4.0, 1, 0.0)],
        },
        events=[
            dict(rate=0.35, width=0.22, side="both", jump=2.2, crouch=55.0, turn=180.0,
                 pose={"LShoulder": [("Z", 45.0), ("Y", -25.0)], "LElbow": [("Y", -30.0)]}),
        ],
    ),
    "dance": dict(
        freq=1.0, lr_phase=np.pi / 2, noise=6.0, noise_time=0.3, bounce=0.35, yaw_wander=60.0,
        cyclic={
            "LShoulder": [("Z", 20.0, 35.0, 1, 0.0), ("Y", 0.0, 20.0, 2, 0.0)],
            "LElbow": [("Y", -40.0, 30.0, 1, 1.0)],
            "LHip": [("X", -10.0, 15.0, 1, 0.0), ("Z", 0.0, 6.0, 1, 0.0)],
            "LKnee": [("X", 20.0, 15.0, 2, 0.0)],
            "Hips": [("Y", 0.0, 15.0, 1, 0.0)],
            "Spine": [("Z", 0.0, 8.0, 1, 0.5)],
            "Neck": [("Y", 0.0, 10.0, 1, 0.3)],
        },
        events=[dict(rate=0.2, width=0.4, side="both", turn=120.0, pose={"LShoulder": [("Z", 50.0)]})],
    ),
    "pantomime": dict(
        freq=0.4, lr_phase=np.pi / 3, noise=14.0, noise_time=0.6, bounce=0.05, yaw_wander=30.0,
        cyclic={
            "LShoulder": [("Y", -20.0, 15.0, 1, 0.0)],
            "LElbow": [("Y", -50.0, 20.0, 1, 0.6)],
            "Head": [("Y", 0.0, 15.0, 1, 0.0)],
        },
        events=[
            dict(rate=0.5, width=0.5, side="random",
                 pose={"LShoulder": [("Z", 70.0), ("Y", -35.0)], "LElbow": [("Y", -60.0)], "LWrist": [("Z", 30.0)]}),
            dict(rate=0.15, width=0.7, side="both", pose={"Spine": [("X", 25.0)], "LKnee": [("X", 25.0)]}),
        ],
    ),
    "sports": dict(
        freq=0.7, lr_phase=np.pi, noise=5.0, noise_time=0.3, bounce=0.2, yaw_wander=40.0,
        cyclic={
            "LHip": [("X", -8.0, 12.0, 1, 0.0)],
            "LKnee": [("X", 20.0, 14.0, 1, -1.0)],
            "LShoulder": [("Y", 0.0, 15.0, 1, 0.0)],
        },
        events=[
            dict(rate=0.3, width=0.18, side="random",
                 pose={"LHip": [("X", -65.0)], "LKnee": [("X", -30.0)], "LShoulder": [("Z", 30.0)]}),
            dict(rate=0.25, width=0.3, side="both",
                 pose={"Spine": [("Y", 40.0), ("X", 15.0)], "LShoulder": [("Y", -60.0)], "RShoulder": [("Y", 60.0)]}),
        ],
    ),
    "jumping": dict(
        freq=0.8, lr_phase=0.0, noise=3.0, noise_time=0.25, bounce=0.0, yaw_wander=15.0,
        cyclic={"LShoulder": [("Y", 0.0, 20.0, 1, 0.0)]},
        events=[
            dict(rate=0.8, width=0.18, side="both", jump=2.6, crouch=60.0,
                 pose={"LShoulder": [("Y", -50.0), ("Z", 30.0)]}),
        ],
    ),
    "general": dict(
        freq=0.6, lr_phase=np.pi, noise=9.0, noise_time=0.5, bounce=0.15, yaw_wander=40.0,
        cyclic={
            "LHip": [("X", -5.0, 12.0, 1, 0.0)],
            "LKnee": [("X", 12.0, 12.0, 1, -1.0)],
            "LShoulder": [("Y", 0.0, 12.0, 1, 0.0)],
        },
        events=[
            dict(rate=0.2, width=0.6, side="both",
                 pose={"Spine": [("X", 35.0)], "LowerBack": [("X", 20.0)], "LShoulder": [("Y", -40.0)]}),
            dict(rate=0.3, width=0.4, side="random", pose={"LShoulder": [("Z", 90.0)], "LElbow": [("Y", -40.0)]}),
        ],
    ),
}


@dataclass
class SubjectStyle:
    bone_scale: float
    limb_scales: dict[str, float]
    amp_scale: float
    tempo: float
    posture: dict[tuple[str, str], float]


def subject_style(subject: int, seed: int = 0) -> SubjectStyle:
    rng = np.random.default_rng([seed, 7919, subject])
    limbs = {}
    for name in ("LKnee", "LAnkle", "LElbow", "LWrist", "Spine", "Chest", "Neck", "LShoulder"):
        s = float(rng.uniform(0.95, 1.05))
        limbs[name] = s
        limbs[_mirror_name(name)] = s
    posture = {}
    for name in ("Spine", "Neck", "LShoulder", "LElbow", "LKnee", "LHip"):
        for axis in "XYZ":
            posture[(name, axis)] = float(rng.normal(0.0, 3.0))
    return SubjectStyle(
        bone_scale=float(rng.uniform(0.9, 1.1)),
        limb_scales=limbs,
        amp_scale=float(rng.uniform(0.85, 1.15)),
        tempo=float(rng.uniform(0.9, 1.1)),
        posture=posture,
    )


def _add(angles, name, axis, values, mirror):
    """Add degrees to a joint axis, also to the mirrored joint when requested."""
    angles[JOINT_NAMES.index(name)][:, _AXES[axis]] += values
    if mirror and _is_left(name):
        sign = 1.0 if axis == "X" else -1.0
        angles[JOINT_NAMES.index(_mirror_name(name))][:, _AXES[axis]] += sign * mirror(values)


def _smooth_noise(rng, n, width_frames):
    noise = gaussian_filter1d(rng.standard_normal(n + 8 * int(width_frames)), width_frames, mode="wrap")
    noise = noise[4 * int(width_frames) : 4 * int(width_frames) + n]
    return noise / (noise.std() + 1e-12)


def synthesize_motion(motion: str, subject: int, n_frames: int, seed: int) -> tuple[Skeleton, ChannelFrames]:
    """One BVH take of ``motion`` performed by ``subject``."""
    recipe = MOTION_TYPES[motion]
    style = subject_style(subject)
    rng = np.random.default_rng([seed, subject, n_frames, list(MOTION_TYPES).index(motion)])
    t = np.arange(n_frames) / FRAME_RATE
    n_j = len(JOINT_NAMES)
    angles = [np.zeros((n_frames, 3)) for _ in range(n_j)]
    amp = style.amp_scale
    omega = 2 * np.pi * recipe["freq"] * style.tempo * rng.uniform(0.92, 1.08)
    phase0 = rng.uniform(0, 2 * np.pi)

    for name, axes in _BASE_POSTURE.items():
        for axis, base in axes:
            _add(angles, name, axis, np.full(n_frames, base), mirror=lambda v: v)
    for (name, axis), offset in style.posture.items():
        _add(angles, name, axis, np.full(n_frames, offset), mirror=lambda v: v)

    for name, comps in recipe["cyclic"].items():
        for axis, base, a, harmonic, phase in comps:
            def wave(shift, harmonic=harmonic, phase=phase, a=a):
                return amp * a * np.sin(harmonic * (omega * t + phase0 + shift) + phase)

            _add(angles, name, axis, base + wave(0.0), mirror=None)
            if _is_left(name):
                sign = 1.0 if axis == "X" else -1.0
                mirrored = base + wave(recipe["lr_phase"])
                angles[JOINT_NAMES.index(_mirror_name(name))][:, _AXES[axis]] += sign * mirrored

    yaw = np.zeros(n_frames)
    height = np.zeros(n_frames)
    for ev in recipe["events"]:
        n_events = rng.poisson(ev["rate"] * t[-1] + 1e-9)
        for t0 in np.sort(rng.uniform(0.3, max(t[-1] - 0.3, 0.31), n_events)):
            w = ev["width"] * rng.uniform(0.8, 1.25)
            bump = np.exp(-0.5 * ((t - t0) / w) ** 2)
            strength = rng.uniform(0.7, 1.2) * amp
            side = ev["side"]
            if side == "random":
                side = "L" if rng.random() < 0.5 else "R"
            for name, comps in ev["pose"].items():
                for axis, a in comps:
                    values = strength * a * bump
                    if not _is_left(name) or side == "L":
                        _add(angles, name, axis, values, mirror=None)
                    if _is_left(name) and side in ("R", "both"):
                        sign = 1.0 if axis == "X" else -1.0
                        angles[JOINT_NAMES.index(_mirror_name(name))][:, _AXES[axis]] += sign * values
            if "crouch" in ev:
                pre = np.exp(-0.5 * ((t - (t0 - 1.6 * w)) / w) ** 2)
                c = ev["crouch"] * strength
                _add(angles, "LKnee", "X", c * pre, mirror=lambda v: v)
                _add(angles, "LHip", "X", -0.5 * c * pre, mirror=lambda v: v)
                _add(angles, "LAnkle", "X", -0.3 * c * pre, mirror=lambda v: v)
            if "jump" in ev:
                height += ev["jump"] * strength * bump
            if "turn" in ev:
                yaw += rng.choice([-1.0, 1.0]) * ev["turn"] * rng.uniform(0.7, 1.1) * ndtr((t - t0) / w)

    width = recipe["noise_time"] * FRAME_RATE
    for name in JOINT_NAMES:
        if name in ("Hips",) or name.endswith(("Toe", "Heel", "Thigh", "Shin", "Top", "Front", "Finger", "Marker", "UpperArm", "Forearm")) or name in ("Sternum", "UpperBack"):
            continue
        scale = recipe["noise"] * (1.0 if any(k in name for k in ("Shoulder", "Elbow", "Wrist", "Hip", "Knee")) else 0.4)
        for axis in range(3):
            angles[JOINT_NAMES.index(name)][:, axis] += scale * _smooth_noise(rng, n_frames, width)

    yaw += recipe["yaw_wander"] * _smooth_noise(rng, n_frames, 2.0 * FRAME_RATE) + rng.uniform(-180, 180)
    root_rot = angles[0]
    root_rot[:, 1] += yaw
    bounce = recipe["bounce"] * amp * np.sin(2 * (omega * t + phase0))
    leg = 15.5 * style.bone_scale
    heading = np.deg2rad(yaw)
    speed = {"walk": 20.0, "run": 45.0}.get(motion, 3.0)
    x = np.cumsum(speed * np.sin(heading)) / FRAME_RATE
    z = np.cumsum(speed * np.cos(heading)) / FRAME_RATE
    y = leg + bounce + height

    skeleton = cmu_style_skeleton(style.bone_scale, style.limb_scales)
    columns = [x, y, z, root_rot[:, 2], root_rot[:, 1], root_rot[:, 0]]
    for i in range(1, n_j):
        columns.extend([angles[i][:, 2], angles[i][:, 1], angles[i][:, 0]])
    values = np.stack(columns, axis=1)
    # round through the 6-significant-digit text form so files and arrays agree
    values = np.array([float(f"{v:.6g}") for v in values.ravel()]).reshape(values.shape)
    return skeleton, ChannelFrames(float(f"{1.0 / FRAME_RATE:.6g}"), values)


# subject -> list of (take, motion); mirrors the CMU folder layout
CATALOG_LAYOUT = {
    6: [(1, "basketball"), (2, "basketball"), (3, "walk")],
    14: [(1, "boxing"), (2, "boxing"), (3, "general"), (4, "walk")],
    32: [(1, "pantomime"), (2, "pantomime"), (3, "walk")],
    40: [(1, "run"), (2, "dance"), (3, "jumping")],
    54: [(1, "pantomime"), (2, "pantomime"), (3, "dance")],
    85: [(1, "jump_turn"), (2, "jump_turn"), (3, "dance"), (4, "run")],
    86: [(1, "sports"), (2, "sports"), (3, "boxing"), (4, "walk")],
    102: [(1, "basketball"), (2, "basketball"), (3, "basketball"), (4, "run")],
    118: [(1, "jumping"), (2, "jumping"), (3, "jump_turn"), (4, "jumping")],
    127: [(1, "sports"), (2, "sports"), (3, "run"), (4, "boxing")],
    141: [(1, "general"), (2, "walk"), (3, "basketball"), (4, "jumping")],
    143: [(1, "general"), (2, "general"), (3, "boxing"), (4, "dance")],
}
TEST_IDS = ["102_03", "14_01", "85_02"]
VALIDATION_IDS = ["32_01", "54_01", "86_01", "127_01", "118_01", "118_02", "143_01", "143_02"]


def write_dataset(root, seed: int = 0, seconds: tuple[float, float] = (8.0, 14.0), test_seconds: float = 20.0):
    """Write every take as BVH under ``root`` plus ``catalog.json`` and ``split.json``.

    Returns the catalog path.
    """
    root = Path(root)
    (root / "bvh").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for subject, takes in CATALOG_LAYOUT.items():
        for take, motion in takes:
            seq_id = f"{subject}_{take:02d}"
            secs = test_seconds if seq_id in TEST_IDS else rng.uniform(*seconds)
            n_frames = int(round(secs * FRAME_RATE))
            skel, frames = synthesize_motion(motion, subject, n_frames, seed=seed * 1000 + take)
            rel = f"bvh/{seq_id}.bvh"
            (root / rel).write_text(serialize_bvh(skel, frames, precision=6))
            entries.append({"id": seq_id, "path": rel, "subject": str(subject), "motion": motion})
    catalog = {
        "unit_scale_to_cm": CMU_UNIT_SCALE_TO_CM,
        "hip_marker": "Hips",
        "sequences": entries,
    }
    (root / "catalog.json").write_text(json.dumps(catalog, indent=2))
    all_ids = [e["id"] for e in entries]
    split = {
        "train": [i for i in all_ids if i not in TEST_IDS and i not in VALIDATION_IDS],
        "validation": list(VALIDATION_IDS),
        "test": list(TEST_IDS),
    }
    (root / "split.json").write_text(json.dumps(split, indent=2))
    return root / "catalog.json"
