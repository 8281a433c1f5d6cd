import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from mocaprecon import synth
from mocaprecon.bvh import (
    CMU_UNIT_SCALE_TO_CM,
    ChannelFrames,
    PoseSequence,
    forward_kinematics,
    parse_bvh,
    read_bvh,
    serialize_bvh,
    write_bvh,
)
from mocaprecon.errors import BvhSyntaxError, ChannelMismatch, DimensionMismatch, EmptyMotion


def fk_oracle(skeleton, frames):
    """Joint positions via scipy rotations and a plain per-frame recursion."""
    out = np.zeros((frames.n_frames, len(skeleton.joints), 3))
    for f in range(frames.n_frames):
        rots, pos = [], []
        for joint, sl in zip(skeleton.joints, skeleton.channel_slices()):
            values = frames.values[f, sl]
            order = "".join(ch[0] for ch in joint.channels if ch.endswith("rotation"))
            angles = [v for v, ch in zip(values, joint.channels) if ch.endswith("rotation")]
            local = Rotation.from_euler(order, angles, degrees=True).as_matrix()
            trans = joint.offset.astype(float).copy()
            for v, ch in zip(values, joint.channels):
                if ch.endswith("position"):
                    trans["XYZ".index(ch[0])] += v
            if joint.parent is None:
                rots.append(local)
                pos.append(trans)
            else:
                rots.append(rots[joint.parent] @ local)
                pos.append(pos[joint.parent] + rots[joint.parent] @ trans)
        out[f] = pos
    return out.reshape(frames.n_frames, -1)


def test_parse_small_hierarchy(small_bvh_text):
    skeleton, frames = parse_bvh(small_bvh_text)
    assert skeleton.names == ["Hips", "Spine", "Head", "LeftLeg"]
    assert skeleton.parents == [None, 0, 1, 0]
    assert skeleton.n_channels == 15
    assert skeleton.joints[2].channels == ("Zrotation", "Xrotation", "Yrotation")
    np.testing.assert_array_equal(skeleton.joints[2].end_site, [0, 3, 0])
    assert frames.n_frames == 3
    assert frames.frame_rate == pytest.approx(120.0, rel=1e-3)


def test_identity_frame_gives_offsets(small_bvh_text):
    skeleton, frames = parse_bvh(small_bvh_text)
    poses = forward_kinematics(skeleton, frames)
    # end sites are not markers
    assert poses.n_markers == 4
    np.testing.assert_allclose(poses.positions[0], [1, 2, 3, 1, 12, 3, 1, 17, 4, 5, 0, 3])


def test_root_rotation_about_z(small_bvh_text):
    skeleton, frames = parse_bvh(small_bvh_text)
    spine = forward_kinematics(skeleton, frames).positions[1, 3:6]
    # a 90 degree Z turn maps the (0, 10, 0) offset to (-10, 0, 0)
    np.testing.assert_allclose(spine, [1.5 - 10, 2, 3], atol=1e-12)


def test_fk_matches_scipy_oracle(small_bvh_text):
    skeleton, frames = parse_bvh(small_bvh_text)
    np.testing.assert_allclose(forward_kinematics(skeleton, frames).positions, fk_oracle(skeleton, frames), atol=1e-10)


def test_fk_oracle_on_synthetic_skeleton():
    skeleton, frames = synth.synthesize_motion("dance", 86, 50, seed=3)
    np.testing.assert_allclose(forward_kinematics(skeleton, frames).positions, fk_oracle(skeleton, frames), atol=1e-9)


def test_unit_scale_multiplies_positions(small_bvh_text):
    skeleton, frames = parse_bvh(small_bvh_text)
    raw = forward_kinematics(skeleton, frames)
    cm = forward_kinematics(skeleton, frames, unit_scale_to_cm=CMU_UNIT_SCALE_TO_CM)
    assert cm.unit_scale_to_cm == CMU_UNIT_SCALE_TO_CM
    # positions stay in dataset units; the scale only travels along
    np.testing.assert_array_equal(raw.positions, cm.positions)


def test_cmu_style_skeleton_has_41_markers():
    skeleton, frames = synth.synthesize_motion("walk", 6, 10, seed=0)
    poses = forward_kinematics(skeleton, frames)
    assert poses.n_markers == 41
    assert poses.positions.shape == (10, 123)
    assert frames.frame_rate == pytest.approx(120.0, rel=1e-4)


def test_round_trip_is_value_identical(small_bvh_text, tmp_path):
    skeleton, frames = parse_bvh(small_bvh_text)
    path = tmp_path / "a.bvh"
    write_bvh(path, skeleton, frames)
    skeleton2, frames2 = read_bvh(path)
    assert skeleton2.joints == skeleton.joints
    np.testing.assert_array_equal(frames2.values, frames.values)
    assert frames2.frame_time == frames.frame_time


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False), min_size=15, max_size=15 * 4))
def test_round_trip_random_values(small_bvh_text, values):
    skeleton, _ = parse_bvh(small_bvh_text)
    n = len(values) // 15
    frames = ChannelFrames(1 / 120, np.array(values[: 15 * n]).reshape(n, 15))
    skeleton2, frames2 = parse_bvh(serialize_bvh(skeleton, frames))
    np.testing.assert_array_equal(frames2.values, frames.values)
    assert skeleton2.joints == skeleton.joints


def test_six_digit_files_round_trip_textually(dataset_dir):
    path = next((dataset_dir / "bvh").glob("*.bvh"))
    text = path.read_text()
    skeleton, frames = parse_bvh(text)
    again = serialize_bvh(skeleton, frames, precision=6)
    s2, f2 = parse_bvh(again)
    np.testing.assert_array_equal(f2.values, frames.values)
    assert serialize_bvh(s2, f2, precision=6) == again


def test_channel_count_mismatch_reports_line(small_bvh_text):
    lines = small_bvh_text.splitlines()
    lines[-1] = "1 2 3"
    with pytest.raises(ChannelMismatch, match=f"line {len(lines)}"):
        parse_bvh("\n".join(lines) + "\n")


def test_frame_count_mismatch(small_bvh_text):
    with pytest.raises(ChannelMismatch, match="declared 4"):
        parse_bvh(small_bvh_text.replace("Frames: 3", "Frames: 4"))


def test_zero_frames():
    text = "HIERARCHY\nROOT a\n{\nOFFSET 0 0 0\nCHANNELS 3 Zrotation Yrotation Xrotation\n}\nMOTION\nFrames: 0\nFrame Time: 0.01\n"
    with pytest.raises(EmptyMotion):
        parse_bvh(text)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda t: t.replace("MOTION", "MOTON"),
        lambda t: t.replace("CHANNELS 3 Zrotation Yrotation Xrotation", "CHANNELS 3 Zrotation Yrotation Wrotation", 1),
        lambda t: t.replace("OFFSET 0 10 0", "OFFSET 0 ten 0"),
        lambda t: t.replace("\t\t}\n\t}\n\tJOINT LeftLeg", "\t\t}\n\tJOINT LeftLeg"),
        lambda t: t.replace("Frame Time: 0.008333", "Frame Time: x"),
    ],
)
def test_malformed_documents(small_bvh_text, mutate):
    with pytest.raises(BvhSyntaxError, match="line"):
        parse_bvh(mutate(small_bvh_text))


def test_pose_sequence_validates_shape():
    with pytest.raises(DimensionMismatch):
        PoseSequence(["a", "b"], 120.0, 1.0, np.zeros((3, 5)))
    seq = PoseSequence(["a", "b"], 120.0, 1.0, np.arange(12.0).reshape(2, 6))
    np.testing.assert_array_equal(seq.marker("b"), [[3, 4, 5], [9, 10, 11]])
    assert seq.duration == pytest.approx(2 / 120)
