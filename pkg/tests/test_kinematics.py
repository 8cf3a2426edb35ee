"""Forward kinematics, delta features, and the skeleton file format.

The FK oracle here is an independent matrix-chain walk using scipy for
rotation handling, written without reference to the library internals.
"""

import numpy as np
import pytest

from motionforge.pose import (
    DELTA_DIM,
    POSE_DIM,
    DeltaFeature,
    PoseState,
    apply_delta,
    compute_delta,
    forward_kinematics,
    forward_kinematics_full,
    heading_xy,
    root_yaw,
)
from motionforge.rotations import matrix_to_rot6d, rot6d_to_matrix, rotation_z
from motionforge.skeleton import (
    CONTROL_JOINT_NAMES,
    default_skeleton,
    parse_skeleton,
)
from conftest import random_rotation_matrices


def identity_pose(pelvis=(0.0, 0.0, 0.0)) -> PoseState:
    return PoseState(
        np.asarray(pelvis, dtype=np.float64),
        np.array([1, 0, 0, 0, 1, 0], dtype=np.float64),
        np.tile(np.array([1, 0, 0, 0, 1, 0], dtype=np.float64), (21, 1)),
    )


def random_pose(rng) -> PoseState:
    mats = random_rotation_matrices(22, seed=int(rng.integers(1 << 30)))
    return PoseState(
        rng.uniform(-2, 2, size=3),
        matrix_to_rot6d(mats[0]),
        np.stack([matrix_to_rot6d(m) for m in mats[1:]]),
    )


def fk_oracle(pose: PoseState, skeleton) -> np.ndarray:
    """Straightforward per-joint matrix chain, independent of the library."""
    rots = [rot6d_to_matrix(pose.root_orientation)]
    positions = [np.asarray(pose.pelvis_translation, dtype=np.float64)]
    for j in range(1, len(skeleton.names)):
        par = skeleton.parent[j]
        local = rot6d_to_matrix(pose.joint_rotations[j - 1])
        positions.append(positions[par] + rots[par] @ skeleton.offsets[j])
        rots.append(rots[par] @ local)
    return np.stack(positions)


def test_pose_flat_round_trip():
    rng = np.random.default_rng(0)
    pose = random_pose(rng)
    flat = pose.flatten()
    assert flat.shape == (POSE_DIM,)
    back = PoseState.from_flat(flat)
    np.testing.assert_array_equal(back.flatten(), flat)


def test_identity_fk_cumulative_offsets(skeleton):
    positions = forward_kinematics(identity_pose(), skeleton)
    expected = np.zeros((len(skeleton.names), 3))
    for j in range(1, len(skeleton.names)):
        expected[j] = expected[skeleton.parent[j]] + skeleton.offsets[j]
    np.testing.assert_allclose(positions, expected, atol=1e-12)


def test_fk_translation_equivariance(skeleton):
    rng = np.random.default_rng(1)
    pose = random_pose(rng)
    base = forward_kinematics(pose, skeleton)
    shifted = PoseState(pose.pelvis_translation + np.array([1.0, 2.0, 3.0]),
                        pose.root_orientation, pose.joint_rotations)
    np.testing.assert_allclose(forward_kinematics(shifted, skeleton),
                               base + np.array([1.0, 2.0, 3.0]), atol=1e-12)


def test_fk_90_degree_yaw_rotates_xy(skeleton):
    pose = identity_pose()
    yawed = PoseState(pose.pelvis_translation, matrix_to_rot6d(rotation_z(np.pi / 2)),
                      pose.joint_rotations)
    base = forward_kinematics(pose, skeleton)
    got = forward_kinematics(yawed, skeleton)
    rot = rotation_z(np.pi / 2)
    np.testing.assert_allclose(got, base @ rot.T, atol=1e-12)


def test_fk_matches_independent_oracle(skeleton):
    rng = np.random.default_rng(2)
    for _ in range(25):
        pose = random_pose(rng)
        np.testing.assert_allclose(forward_kinematics(pose, skeleton),
                                   fk_oracle(pose, skeleton), atol=1e-10)


def test_fk_full_returns_global_rotations(skeleton):
    rng = np.random.default_rng(3)
    pose = random_pose(rng)
    positions, rotations = forward_kinematics_full(pose, skeleton)
    np.testing.assert_allclose(positions, forward_kinematics(pose, skeleton), atol=1e-12)
    # spot-check: child global rotation = parent global rotation @ local
    j = skeleton.index("left_knee")
    par = skeleton.parent[j]
    local = rot6d_to_matrix(pose.joint_rotations[j - 1])
    np.testing.assert_allclose(rotations[j], rotations[par] @ local, atol=1e-12)


def test_heading_at_identity_is_plus_x():
    np.testing.assert_allclose(heading_xy(identity_pose()), [1.0, 0.0], atol=1e-12)
    assert abs(root_yaw(identity_pose())) < 1e-12


def test_delta_zero_for_equal_poses():
    rng = np.random.default_rng(4)
    pose = random_pose(rng)
    delta = compute_delta(pose, pose)
    np.testing.assert_allclose(delta.translation_xy, [0.0, 0.0], atol=1e-9)
    for block in [delta.root_rotation, *delta.joint_rotations]:
        np.testing.assert_allclose(rot6d_to_matrix(block), np.eye(3), atol=1e-9)


def test_delta_dimension():
    rng = np.random.default_rng(5)
    pose = random_pose(rng)
    assert compute_delta(pose, pose).flatten().shape == (DELTA_DIM,)
    assert DELTA_DIM == 2 + 6 + 126


def test_forward_step_yaw_invariant():
    """1 m along the facing direction reads (1, 0) at any global yaw."""
    for yaw in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        rot = rotation_z(yaw)
        prev = PoseState(np.zeros(3), matrix_to_rot6d(rot),
                         identity_pose().joint_rotations)
        forward = rot @ np.array([1.0, 0.0, 0.0])
        nxt = PoseState(prev.pelvis_translation + forward, prev.root_orientation,
                        prev.joint_rotations)
        delta = compute_delta(prev, nxt)
        np.testing.assert_allclose(delta.translation_xy, [1.0, 0.0], atol=1e-9)


def test_extra_yaw_encodes_in_delta():
    prev = identity_pose()
    ten_degrees = np.deg2rad(10.0)
    nxt = PoseState(prev.pelvis_translation,
                    matrix_to_rot6d(rotation_z(ten_degrees)), prev.joint_rotations)
    delta = compute_delta(prev, nxt)
    m = rot6d_to_matrix(delta.root_rotation)
    angle = np.arccos(np.clip((np.trace(m) - 1) / 2, -1, 1))
    assert abs(angle - ten_degrees) < 1e-9


def test_delta_yaw_covariance_property():
    """Rotating both poses by the same global yaw leaves the delta unchanged."""
    rng = np.random.default_rng(6)
    for _ in range(10):
        a, b = random_pose(rng), random_pose(rng)
        base = compute_delta(a, b).flatten()
        yaw = rng.uniform(0, 2 * np.pi)
        rot = rotation_z(yaw)

        def spin(p):
            return PoseState(rot @ p.pelvis_translation,
                             matrix_to_rot6d(rot @ rot6d_to_matrix(p.root_orientation)),
                             p.joint_rotations)

        spun = compute_delta(spin(a), spin(b)).flatten()
        np.testing.assert_allclose(spun, base, atol=1e-9)


def test_apply_delta_round_trip(skeleton):
    rng = np.random.default_rng(7)
    for _ in range(10):
        a, b = random_pose(rng), random_pose(rng)
        rebuilt = apply_delta(a, compute_delta(a, b))
        np.testing.assert_allclose(rebuilt.pelvis_translation[:2],
                                   b.pelvis_translation[:2], atol=1e-5)
        # z is carried from a, not b
        assert abs(rebuilt.pelvis_translation[2] - a.pelvis_translation[2]) < 1e-12
        np.testing.assert_allclose(rot6d_to_matrix(rebuilt.root_orientation),
                                   rot6d_to_matrix(b.root_orientation), atol=1e-5)
        for got, want in zip(rebuilt.joint_rotations, b.joint_rotations):
            np.testing.assert_allclose(rot6d_to_matrix(got), rot6d_to_matrix(want), atol=1e-5)


def test_apply_zero_delta_is_identity():
    rng = np.random.default_rng(8)
    pose = random_pose(rng)
    zero = compute_delta(pose, pose)
    out = apply_delta(pose, zero)
    np.testing.assert_allclose(out.flatten(), PoseState(
        pose.pelvis_translation,
        matrix_to_rot6d(rot6d_to_matrix(pose.root_orientation)),
        np.stack([matrix_to_rot6d(rot6d_to_matrix(r)) for r in pose.joint_rotations]),
    ).flatten(), atol=1e-9)


def test_apply_delta_respects_facing_frame():
    """(1, 0) forward delta on a +y-facing pose moves pelvis along world +y."""
    facing_y = PoseState(np.zeros(3), matrix_to_rot6d(rotation_z(np.pi / 2)),
                         identity_pose().joint_rotations)
    delta = compute_delta(facing_y, facing_y)
    forward = DeltaFeature(np.array([1.0, 0.0]), delta.root_rotation, delta.joint_rotations)
    out = apply_delta(facing_y, forward)
    np.testing.assert_allclose(out.pelvis_translation, [0.0, 1.0, 0.0], atol=1e-9)


def test_apply_delta_z_override():
    rng = np.random.default_rng(9)
    pose = random_pose(rng)
    delta = compute_delta(pose, pose)
    out = apply_delta(pose, delta, z_mode="override", z_value=0.42)
    assert out.pelvis_translation[2] == 0.42
    with pytest.raises(ValueError):
        apply_delta(pose, delta, z_mode="override")
    with pytest.raises(ValueError):
        apply_delta(pose, delta, z_mode="bogus")


def test_default_skeleton_structure(skeleton):
    assert len(skeleton.names) == 22
    assert skeleton.parent[0] == -1
    for j in range(1, 22):
        assert 0 <= skeleton.parent[j] < j
    for name in CONTROL_JOINT_NAMES:
        assert name in skeleton.names


def test_skeleton_serialize_round_trip(skeleton):
    text = skeleton.serialize()
    back = parse_skeleton(text)
    assert back.names == skeleton.names
    np.testing.assert_array_equal(back.parent, skeleton.parent)
    np.testing.assert_array_equal(back.offsets, skeleton.offsets)
    assert back.content_hash() == skeleton.content_hash()


def test_skeleton_hash_is_stable(skeleton):
    a = skeleton.content_hash()
    assert len(a) == 16
    assert a == default_skeleton().content_hash()
    # any offset change must change the hash
    other = parse_skeleton(skeleton.serialize().replace("0.40", "0.41"))
    assert other.content_hash() != a
