"""Goal features: per-joint displacement rates, the saturating pelvis
attractor, heading steering, assembly with mask gating, and the yaw
localization applied at the model boundary."""

import numpy as np
import pytest

from motionforge.errors import (
    GoalFrameReached,
    NoActiveJointForPelvisIntention,
    NotUnitVector,
)
from motionforge.intention import (
    INTENTION_DIM,
    ControlMask,
    GoalSpec,
    IntentionVector,
    JointGoal,
    assemble_intention,
    control_joint_intention,
    default_goal_heading,
    goal_centroid_xy,
    orientation_intention,
    pelvis_intention,
    yaw_localize,
)
from motionforge.pose import PoseState, forward_kinematics, heading_xy
from motionforge.skeleton import CONTROL_JOINT_NAMES
from motionforge.synth import standing_pose


def test_intention_dim():
    assert INTENTION_DIM == 22


class TestControlJointIntention:
    def test_reaches_goal_on_deadline(self):
        out = control_joint_intention((1.0, 0.0, 1.0), (0.0, 0.0, 1.0), 10, 0)
        np.testing.assert_allclose(out, [0.1, 0.0, 0.0])

    def test_zero_at_goal(self):
        out = control_joint_intention((0.3, -0.2, 1.1), (0.3, -0.2, 1.1), 7, 2)
        np.testing.assert_array_equal(out, np.zeros(3))

    def test_unit_denominator(self):
        g, p = np.array([0.5, 1.5, 0.2]), np.array([-1.0, 0.5, 0.0])
        out = control_joint_intention(g, p, 6, 5)
        np.testing.assert_allclose(out, g - p)

    def test_expired_deadline_raises(self):
        with pytest.raises(GoalFrameReached):
            control_joint_intention((1, 0, 0), (0, 0, 0), 5, 5)
        with pytest.raises(GoalFrameReached):
            control_joint_intention((1, 0, 0), (0, 0, 0), 4, 5)


class TestPelvisIntention:
    def test_zero_offset(self):
        np.testing.assert_array_equal(pelvis_intention((2.0, 3.0), (2.0, 3.0)), np.zeros(2))

    def test_far_goal_saturates(self):
        out = pelvis_intention((10.0, 0.0), (0.0, 0.0))
        np.testing.assert_allclose(out, [2.0 * (1.0 - np.exp(-10.0)), 0.0])
        assert abs(out[0] - 1.99991) < 1e-5

    def test_log_two_distance_is_unit(self):
        out = pelvis_intention((0.0, np.log(2.0)), (0.0, 0.0))
        np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-12)

    def test_norm_monotone_and_strictly_bounded(self):
        # past d ~ 37 the envelope saturates to 2.0 in float64, so probe
        # the regime where strictness is representable
        dists = np.linspace(0.01, 25.0, 200)
        norms = [float(np.linalg.norm(pelvis_intention((d, 0.0), (0.0, 0.0)))) for d in dists]
        assert all(b > a for a, b in zip(norms, norms[1:]))
        assert all(n < 2.0 for n in norms)

    def test_matches_envelope_exactly(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            d = rng.normal(size=2) * 3.0
            out = pelvis_intention(d, (0.0, 0.0))
            dist = np.linalg.norm(d)
            if dist < 1e-9:
                continue
            np.testing.assert_allclose(
                out, 2.0 * (1.0 - np.exp(-dist)) * d / dist, atol=1e-12)


class TestOrientationIntention:
    def test_equal_headings(self):
        np.testing.assert_array_equal(orientation_intention((1.0, 0.0), (1.0, 0.0)), np.zeros(2))

    def test_quarter_turn(self):
        np.testing.assert_allclose(orientation_intention((0.0, 1.0), (1.0, 0.0)), [-1.0, 1.0])

    def test_opposite_headings(self):
        np.testing.assert_allclose(orientation_intention((1.0, 0.0), (-1.0, 0.0)), [2.0, 0.0])

    def test_non_unit_inputs_rejected(self):
        with pytest.raises(NotUnitVector):
            orientation_intention((2.0, 0.0), (1.0, 0.0))
        with pytest.raises(NotUnitVector):
            orientation_intention((1.0, 0.0), (0.5, 0.5))


class TestGoalSpec:
    def test_round_trip(self):
        spec = GoalSpec(
            {"head": JointGoal([1.0, 2.0, 1.5], 90), "pelvis": JointGoal([0.0, -1.0, 0.9], 120)},
            heading=np.array([0.0, 1.0]),
        )
        again = GoalSpec.from_dict(spec.to_dict())
        assert set(again.joints) == {"head", "pelvis"}
        np.testing.assert_array_equal(again.joints["head"].position, [1.0, 2.0, 1.5])
        assert again.joints["pelvis"].goal_frame == 120
        np.testing.assert_array_equal(again.heading, [0.0, 1.0])

    def test_unknown_joint_rejected(self):
        with pytest.raises(KeyError):
            GoalSpec({"left_knee": JointGoal([0, 0, 0], 10)})

    def test_non_unit_heading_rejected(self):
        with pytest.raises(NotUnitVector):
            GoalSpec({}, heading=np.array([1.0, 1.0]))

    def test_shift_frames(self):
        spec = GoalSpec({"head": JointGoal([0, 0, 1], 50)})
        assert spec.shift_frames(30).joints["head"].goal_frame == 80

    def test_scale_frames(self):
        spec = GoalSpec({"head": JointGoal([0, 0, 1], 50)})
        assert spec.scale_frames(0.5).joints["head"].goal_frame == 25


class TestControlMask:
    def test_count_and_names(self):
        mask = ControlMask((True, False, False, True, False, False))
        assert mask.count() == 2
        assert mask.active_joint_names() == ["pelvis", "head"]

    def test_dict_round_trip(self):
        mask = ControlMask.from_names(["left_wrist", "right_ankle"])
        assert ControlMask.from_dict(mask.to_dict()) == mask

    def test_from_names_rejects_unknown(self):
        with pytest.raises(KeyError):
            ControlMask.from_names(["left_elbow"])

    def test_extremes(self):
        assert ControlMask.all_active().count() == 6
        assert ControlMask.none_active().count() == 0

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            ControlMask((True, False))


class TestAssembleIntention:
    def setup_method(self):
        self.pose = standing_pose()
        from motionforge.skeleton import default_skeleton

        self.skeleton = default_skeleton()

    def test_single_active_joint(self):
        goal = JointGoal([0.5, 0.3, 1.2], 60)
        goals = GoalSpec({"right_wrist": goal})
        mask = ControlMask.from_names(["right_wrist"])
        vec = assemble_intention(self.pose, self.skeleton, goals, mask, 0)
        nonzero_rows = [k for k in range(6) if np.any(vec.joints[k] != 0.0)]
        assert nonzero_rows == [CONTROL_JOINT_NAMES.index("right_wrist")]
        # goal centroid collapses to the single goal
        np.testing.assert_array_equal(goal_centroid_xy(goals, mask), [0.5, 0.3])

    def test_identical_goals_average_to_themselves(self):
        g = JointGoal([1.0, -2.0, 1.0], 40)
        goals = GoalSpec({n: g for n in CONTROL_JOINT_NAMES})
        centroid = goal_centroid_xy(goals, ControlMask.all_active())
        np.testing.assert_array_equal(centroid, [1.0, -2.0])

    def test_two_goal_centroid(self):
        goals = GoalSpec({
            "left_wrist": JointGoal([0.0, 0.0, 1.0], 30),
            "right_wrist": JointGoal([2.0, 0.0, 1.0], 30),
        })
        mask = ControlMask.from_names(["left_wrist", "right_wrist"])
        np.testing.assert_allclose(goal_centroid_xy(goals, mask), [1.0, 0.0])

    def test_active_joint_without_goal_rejected(self):
        mask = ControlMask.from_names(["head"])
        with pytest.raises(KeyError):
            assemble_intention(self.pose, self.skeleton, GoalSpec.empty(), mask, 0)

    def test_expired_goal_clamps_to_one_frame(self):
        positions = forward_kinematics(self.pose, self.skeleton)
        head = positions[self.skeleton.index("head")]
        goal = JointGoal(head + [0.4, 0.0, 0.1], 10)
        goals = GoalSpec({"head": goal})
        mask = ControlMask.from_names(["head"])
        vec = assemble_intention(self.pose, self.skeleton, goals, mask, 25)
        row = CONTROL_JOINT_NAMES.index("head")
        np.testing.assert_allclose(vec.joints[row], goal.position - head)

    def test_all_inactive_needs_heading(self):
        with pytest.raises(NoActiveJointForPelvisIntention):
            assemble_intention(
                self.pose, self.skeleton, GoalSpec.empty(), ControlMask.none_active(), 0)

    def test_all_inactive_with_heading(self):
        goals = GoalSpec({}, heading=np.array([0.0, 1.0]))
        vec = assemble_intention(self.pose, self.skeleton, goals, ControlMask.none_active(), 0)
        np.testing.assert_array_equal(vec.pelvis, np.zeros(2))
        np.testing.assert_array_equal(vec.joints, np.zeros((6, 3)))
        np.testing.assert_allclose(vec.orientation, [0.0, 1.0] - heading_xy(self.pose))

    def test_inactive_goal_value_is_ignored(self):
        """Changing an inactive joint's goal must not leak into any field."""
        mask = ControlMask.from_names(["pelvis"])
        base = {"pelvis": JointGoal([2.0, 0.0, 0.9], 50)}
        a = assemble_intention(
            self.pose, self.skeleton, GoalSpec(dict(base)), mask, 0)
        with_noise = dict(base)
        with_noise["head"] = JointGoal([9.0, -9.0, 3.0], 12)
        b = assemble_intention(
            self.pose, self.skeleton, GoalSpec(with_noise), mask, 0)
        np.testing.assert_array_equal(a.flatten(), b.flatten())
        assert a.mask == b.mask

    def test_translation_covariance(self):
        offset = np.array([3.7, -1.2, 0.0])
        goals = GoalSpec({
            "pelvis": JointGoal([1.0, 1.0, 0.9], 80),
            "head": JointGoal([1.0, 1.2, 1.6], 80),
        })
        mask = ControlMask.from_names(["pelvis", "head"])
        moved_pose = PoseState(
            self.pose.pelvis_translation + offset,
            self.pose.root_orientation,
            self.pose.joint_rotations,
        )
        moved_goals = GoalSpec(
            {n: JointGoal(g.position + offset, g.goal_frame) for n, g in goals.joints.items()})
        a = assemble_intention(self.pose, self.skeleton, goals, mask, 0)
        b = assemble_intention(moved_pose, self.skeleton, moved_goals, mask, 0)
        np.testing.assert_allclose(a.pelvis, b.pelvis, atol=1e-12)
        np.testing.assert_allclose(a.joints, b.joints, atol=1e-12)

    def test_default_heading_faces_centroid(self):
        goals = GoalSpec({"pelvis": JointGoal([0.0, 5.0, 0.9], 100)})
        mask = ControlMask.from_names(["pelvis"])
        vec = assemble_intention(self.pose, self.skeleton, goals, mask, 0)
        d = np.array([0.0, 5.0]) - self.pose.pelvis_translation[:2]
        expected = d / np.linalg.norm(d) - heading_xy(self.pose)
        np.testing.assert_allclose(vec.orientation, expected, atol=1e-12)

    def test_explicit_heading_wins(self):
        goals = GoalSpec({"pelvis": JointGoal([5.0, 0.0, 0.9], 100)},
                         heading=np.array([0.0, -1.0]))
        mask = ControlMask.from_names(["pelvis"])
        vec = assemble_intention(self.pose, self.skeleton, goals, mask, 0)
        np.testing.assert_allclose(
            vec.orientation, np.array([0.0, -1.0]) - heading_xy(self.pose), atol=1e-12)


def test_default_goal_heading_on_top_of_goal_keeps_current():
    out = default_goal_heading((1.0, 1.0), (1.0, 1.0), (0.0, 1.0))
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_intention_vector_flatten_layout():
    joints = np.arange(18, dtype=np.float64).reshape(6, 3)
    vec = IntentionVector([1.0, 2.0], [3.0, 4.0], joints)
    flat = vec.flatten()
    assert flat.shape == (INTENTION_DIM,)
    np.testing.assert_array_equal(flat[:2], [1.0, 2.0])
    np.testing.assert_array_equal(flat[2:4], [3.0, 4.0])
    np.testing.assert_array_equal(flat[4:], joints.reshape(-1))


def test_zero_intention():
    vec = IntentionVector.zero()
    assert np.all(vec.flatten() == 0.0)
    assert vec.mask.count() == 0


class TestYawLocalize:
    def test_identity_yaw_is_noop(self):
        pose = standing_pose(yaw=0.0)
        vec = IntentionVector([0.5, 0.2], [0.1, -0.3], np.ones((6, 3)), ControlMask.all_active())
        out = yaw_localize(vec, pose)
        np.testing.assert_allclose(out.flatten(), vec.flatten(), atol=1e-12)

    def test_forward_goal_maps_to_forward_axis(self):
        """A vector along the facing direction localizes to +x regardless
        of global heading."""
        for yaw in (0.0, np.pi / 2.0, np.pi, -2.0, 1.1):
            pose = standing_pose(yaw=yaw)
            facing = heading_xy(pose)
            vec = IntentionVector(facing, [0.0, 0.0], np.zeros((6, 3)))
            out = yaw_localize(vec, pose)
            np.testing.assert_allclose(out.pelvis, [1.0, 0.0], atol=1e-9)

    def test_preserves_norms_and_vertical(self):
        rng = np.random.default_rng(9)
        pose = standing_pose(yaw=0.77)
        joints = rng.normal(size=(6, 3))
        vec = IntentionVector(rng.normal(size=2), rng.normal(size=2), joints,
                              ControlMask.all_active())
        out = yaw_localize(vec, pose)
        assert np.isclose(np.linalg.norm(out.pelvis), np.linalg.norm(vec.pelvis))
        assert np.isclose(np.linalg.norm(out.orientation), np.linalg.norm(vec.orientation))
        np.testing.assert_allclose(
            np.linalg.norm(out.joints[:, :2], axis=1),
            np.linalg.norm(joints[:, :2], axis=1))
        np.testing.assert_array_equal(out.joints[:, 2], joints[:, 2])

    def test_zero_rows_stay_zero(self):
        pose = standing_pose(yaw=-1.3)
        joints = np.zeros((6, 3))
        joints[2] = [0.1, 0.2, 0.3]
        vec = IntentionVector([0.0, 0.0], [1.0, 0.0], joints)
        out = yaw_localize(vec, pose)
        for k in (0, 1, 3, 4, 5):
            np.testing.assert_array_equal(out.joints[k], np.zeros(3))
        assert np.any(out.joints[2] != 0.0)

    def test_mask_unchanged(self):
        pose = standing_pose(yaw=2.0)
        mask = ControlMask.from_names(["head", "pelvis"])
        vec = IntentionVector([1.0, 0.0], [0.0, 1.0], np.zeros((6, 3)), mask)
        assert yaw_localize(vec, pose).mask == mask

    def test_two_headings_same_relative_goal_agree(self):
        """Same goal geometry relative to the body gives the same localized
        intention for two differently oriented characters."""
        from motionforge.skeleton import default_skeleton

        skeleton = default_skeleton()
        relative = np.array([1.5, 0.8])  # goal offset in the facing frame
        results = []
        for yaw in (0.3, -2.1):
            pose = standing_pose(yaw=yaw)
            c, s = np.cos(yaw), np.sin(yaw)
            world = np.array([[c, -s], [s, c]]) @ relative + pose.pelvis_translation[:2]
            goals = GoalSpec({"pelvis": JointGoal([world[0], world[1], 0.9], 60)})
            mask = ControlMask.from_names(["pelvis"])
            vec = assemble_intention(pose, skeleton, goals, mask, 0)
            results.append(yaw_localize(vec, pose).flatten())
        np.testing.assert_allclose(results[0], results[1], atol=1e-9)
