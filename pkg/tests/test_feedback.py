"""Mixture-model feedback: EM fitting, Mahalanobis selection, the
correction contraction, gating latch, and the style bank."""

import numpy as np
import pytest

from motionforge.errors import SingularCovariance, TooFewSamples, UnknownStyle
from motionforge.feedback import (
    FEATURE_DIM,
    FeedbackGate,
    GmmModel,
    StyleBank,
    apply_feedback,
    correct_feature,
    extract_feature,
    fit_gmm,
    nearest_component,
    point_mass_gmm,
    reorthonormalize_feature,
    within_stop_distance,
    write_feature,
)
from motionforge.rotations import rot6d_to_matrix
from motionforge.synth import standing_pose


class TestFeatureChannels:
    def test_extract_layout(self, skeleton):
        pose = standing_pose(skeleton, yaw=0.4)
        f = extract_feature(pose)
        assert f.shape == (FEATURE_DIM,) == (133,)
        assert np.array_equal(f[:6], pose.root_orientation)
        assert np.array_equal(f[6:132], pose.joint_rotations.reshape(-1))
        assert f[132] == pose.pelvis_translation[2]

    def test_write_is_inverse_and_keeps_pelvis_xy(self, skeleton):
        pose = standing_pose(skeleton, yaw=-0.7, pelvis_xy=(2.0, -1.0))
        f = extract_feature(pose)
        f2 = f.copy()
        f2[132] = 1.23
        out = write_feature(pose, f2)
        assert np.array_equal(out.pelvis_translation[:2], pose.pelvis_translation[:2])
        assert out.pelvis_translation[2] == 1.23
        assert np.array_equal(extract_feature(out), f2)

    def test_reorthonormalize_restores_blocks(self, skeleton):
        rng = np.random.default_rng(0)
        f = extract_feature(standing_pose(skeleton)) + rng.normal(0, 0.05, FEATURE_DIM)
        out = reorthonormalize_feature(f)
        blocks = out[:132].reshape(-1, 6)
        for block in blocks:
            m = rot6d_to_matrix(block)
            assert np.allclose(m @ m.T, np.eye(3), atol=1e-9)
        assert out[132] == f[132]


class TestGmmModel:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            GmmModel(np.array([0.7, 0.2]), np.zeros((2, 3)), np.stack([np.eye(3)] * 2))

    def test_non_spd_covariance_rejected(self):
        with pytest.raises(SingularCovariance):
            GmmModel(np.ones(1), np.zeros((1, 2)), np.zeros((1, 2, 2)))

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        gmm = GmmModel(
            np.array([0.25, 0.75]),
            rng.normal(size=(2, 4)),
            np.stack([np.eye(4) * 2.0, np.eye(4) * 0.5]),
        )
        path = tmp_path / "mix.mfc"
        gmm.save(path, label="neutral", alpha=0.05)
        loaded, meta = GmmModel.load(path)
        assert np.array_equal(loaded.weights, gmm.weights)
        assert np.array_equal(loaded.means, gmm.means)
        assert np.array_equal(loaded.covariances, gmm.covariances)
        assert meta["label"] == "neutral" and meta["alpha"] == 0.05

    def test_point_mass(self):
        f = np.arange(5.0)
        gmm = point_mass_gmm(f, variance=2.0)
        assert gmm.k == 1
        assert np.array_equal(gmm.means[0], f)
        assert np.array_equal(gmm.covariances[0], 2.0 * np.eye(5))


class TestNearestComponent:
    def test_exact_mean_has_zero_distance(self):
        rng = np.random.default_rng(3)
        means = rng.normal(size=(4, 6))
        gmm = GmmModel(np.full(4, 0.25), means, np.stack([np.eye(6)] * 4))
        for j in range(4):
            assert nearest_component(means[j], gmm) == j
            assert gmm.mahalanobis_sq(means[j])[j] == pytest.approx(0.0, abs=1e-18)

    def test_identity_covariance_reduces_to_euclidean(self):
        rng = np.random.default_rng(4)
        means = rng.normal(size=(8, 5))
        gmm = GmmModel(np.full(8, 0.125), means, np.stack([np.eye(5)] * 8))
        for _ in range(1000):
            p = rng.normal(size=5)
            euclid = int(np.argmin(np.linalg.norm(means - p, axis=1)))
            assert nearest_component(p, gmm) == euclid

    def test_anisotropic_overrides_euclidean(self):
        # p is Euclidean-closer to the first mean but its covariance is
        # tight along the separation axis, so Mahalanobis picks the second
        means = np.array([[0.0, 0.0], [3.0, 0.0]])
        covs = np.stack([np.diag([0.01, 100.0]), np.diag([4.0, 4.0])])
        gmm = GmmModel(np.array([0.5, 0.5]), means, covs)
        p = np.array([1.0, 0.0])
        assert np.linalg.norm(p - means[0]) < np.linalg.norm(p - means[1])
        d2 = gmm.mahalanobis_sq(p)
        assert d2[0] == pytest.approx(100.0) and d2[1] == pytest.approx(1.0)
        assert nearest_component(p, gmm) == 1


class TestFitGmm:
    def test_log_likelihood_monotone_on_random_data(self):
        for s in range(20):
            rng = np.random.default_rng(s)
            x = np.concatenate([rng.normal(0, 1, (30, 3)), rng.normal(4, 0.5, (30, 3))])
            model, history = fit_gmm(x, k=3, max_iter=60, seed=s)
            assert np.all(np.diff(history) >= -1e-9)
            assert model.mean_log_likelihood(x) == pytest.approx(history[-1], abs=1e-9)

    def test_two_separated_clusters(self):
        rng = np.random.default_rng(1)
        x = np.concatenate([rng.normal(-5, 0.3, (200, 1)), rng.normal(5, 0.3, (200, 1))])
        model, _ = fit_gmm(x, k=2, max_iter=200, seed=0)
        lo, hi = np.sort(model.means.ravel())
        assert abs(lo - (-5.0)) < 0.1 and abs(hi - 5.0) < 0.1

    def test_single_component_is_sample_stats_plus_ridge(self):
        x = np.random.default_rng(3).normal(size=(50, 4))
        model, _ = fit_gmm(x, k=1, max_iter=10, seed=0)
        cov = np.cov(x, rowvar=False, bias=True)
        ridge = cov + (1e-6 * np.trace(cov) / 4) * np.eye(4)
        assert np.allclose(model.means[0], x.mean(axis=0), atol=1e-9)
        assert np.allclose(model.covariances[0], ridge, atol=1e-9)

    def test_deterministic_under_seed(self):
        x = np.random.default_rng(5).normal(size=(80, 3))
        m1, h1 = fit_gmm(x, k=3, max_iter=40, seed=7)
        m2, h2 = fit_gmm(x, k=3, max_iter=40, seed=7)
        assert h1 == h2
        assert np.array_equal(m1.means, m2.means)
        assert np.array_equal(m1.covariances, m2.covariances)

    def test_diag_covariance_mode(self):
        x = np.random.default_rng(6).normal(size=(60, 3))
        model, _ = fit_gmm(x, k=2, max_iter=30, seed=0, covariance="diag")
        for cov in model.covariances:
            assert np.allclose(cov, np.diag(np.diag(cov)))

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            fit_gmm(np.zeros((3, 2)), k=5)

    def test_degenerate_data_diagnosed(self):
        with pytest.raises(SingularCovariance):
            fit_gmm(np.ones((10, 3)), k=1, max_iter=5, seed=0)

    @pytest.mark.parametrize("bad", [np.zeros((4, 2, 2)), np.full((8, 2), np.nan)])
    def test_input_validation(self, bad):
        with pytest.raises(ValueError):
            fit_gmm(bad, k=2)


class TestCorrection:
    def test_alpha_zero_is_bit_identical(self, skeleton):
        f = extract_feature(standing_pose(skeleton, yaw=0.2))
        gmm = point_mass_gmm(np.zeros(FEATURE_DIM))
        out = correct_feature(f, gmm, 0.0)
        assert np.array_equal(out, f)

    def test_alpha_one_lands_on_mean(self, skeleton):
        mu = extract_feature(standing_pose(skeleton, yaw=0.5))
        f = extract_feature(standing_pose(skeleton, yaw=-0.5, pelvis_height=0.8))
        out = correct_feature(f, point_mass_gmm(mu), 1.0)
        # the mean is itself a valid feature, so re-orthonormalization is a no-op
        assert np.allclose(out, mu, atol=1e-9)

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            correct_feature(np.zeros(FEATURE_DIM), point_mass_gmm(np.zeros(FEATURE_DIM)), 1.5)

    def test_height_channel_decays_geometrically(self, skeleton):
        mu = extract_feature(standing_pose(skeleton, yaw=0.3))
        gmm = point_mass_gmm(mu)
        f = extract_feature(standing_pose(skeleton, yaw=0.3, pelvis_height=0.75))
        heights = [f[132]]
        for _ in range(50):
            f = correct_feature(f, gmm, 0.01)
            heights.append(f[132])
        expected = mu[132] + (heights[0] - mu[132]) * 0.99 ** np.arange(51)
        assert np.allclose(heights, expected, atol=1e-12)

    def test_contraction_slope_near_one_minus_alpha(self, skeleton):
        mu = extract_feature(standing_pose(skeleton, yaw=0.3))
        gmm = point_mass_gmm(mu)
        f = extract_feature(standing_pose(skeleton, yaw=-0.8, pelvis_height=0.8))
        dists = [np.linalg.norm(f - mu)]
        for _ in range(100):
            f = correct_feature(f, gmm, 0.01)
            dists.append(np.linalg.norm(f - mu))
        dists = np.array(dists)
        assert np.all(np.diff(dists) < 0.0)
        slope = np.exp(np.mean(np.log(dists[1:] / dists[:-1])))
        assert abs(slope - 0.99) / 0.99 < 0.02

    def test_mahalanobis_strictly_decreasing_under_repeats(self, skeleton):
        mu = extract_feature(standing_pose(skeleton, yaw=0.1))
        gmm = point_mass_gmm(mu, variance=0.5)
        f = extract_feature(standing_pose(skeleton, yaw=1.2, pelvis_height=1.0))
        prev = float(gmm.mahalanobis_sq(f)[0])
        for _ in range(100):
            f = correct_feature(f, gmm, 0.01)
            cur = float(gmm.mahalanobis_sq(f)[0])
            assert cur < prev
            prev = cur


class TestApplyFeedback:
    def test_gate_off_is_identity(self, skeleton):
        pose = standing_pose(skeleton, yaw=0.9)
        gmm = point_mass_gmm(np.zeros(FEATURE_DIM))
        out, component = apply_feedback(pose, gmm, 0.05, gate_on=False)
        assert out is pose and component is None

    def test_no_mixture_is_identity(self, skeleton):
        pose = standing_pose(skeleton)
        out, component = apply_feedback(pose, None, 0.05, gate_on=True)
        assert out is pose and component is None

    def test_correction_moves_rotations_and_height_only(self, skeleton):
        pose = standing_pose(skeleton, yaw=1.0, pelvis_xy=(3.0, 4.0))
        mu = extract_feature(standing_pose(skeleton, yaw=0.0))
        out, component = apply_feedback(pose, point_mass_gmm(mu), 0.2, gate_on=True)
        assert component == 0
        assert np.array_equal(out.pelvis_translation[:2], pose.pelvis_translation[:2])
        assert not np.array_equal(out.root_orientation, pose.root_orientation)


class TestGating:
    def test_within_stop_distance(self):
        assert not within_stop_distance((0.0, 0.0), (5.0, 0.0), 1.0)
        assert within_stop_distance((0.0, 0.0), (0.5, 0.0), 1.0)
        # zero threshold disables stopping entirely
        assert not within_stop_distance((0.0, 0.0), (0.0, 0.0), 0.0)

    def test_latch_is_one_way(self):
        gate = FeedbackGate(stop_distance=1.0)
        assert gate.update((0.0, 0.0), (5.0, 0.0)) is True
        assert gate.update((0.0, 0.0), (0.5, 0.0)) is False
        # distance grows again: stays off
        assert gate.update((0.0, 0.0), (9.0, 0.0)) is False

    def test_zero_stop_distance_never_latches(self):
        gate = FeedbackGate(stop_distance=0.0)
        for _ in range(5):
            assert gate.update((0.0, 0.0), (0.0, 0.0)) is True


class TestStyleBank:
    def test_lookup_and_alpha_override(self):
        bank = StyleBank()
        a = point_mass_gmm(np.zeros(3))
        b = point_mass_gmm(np.ones(3))
        bank.add("neutral", a)
        bank.add("bold", b, alpha=0.05)
        assert bank.labels() == ["bold", "neutral"]
        gmm, alpha = bank.get("bold")
        assert gmm is b and alpha == 0.05
        assert bank.get("neutral")[1] is None

    def test_unknown_style(self):
        with pytest.raises(UnknownStyle):
            StyleBank().get("missing")

    def test_swap_does_not_mutate_stored_models(self):
        bank = StyleBank()
        gmm = point_mass_gmm(np.arange(3.0))
        bank.add("s", gmm)
        means_before = bank.get("s")[0].means.copy()
        _ = bank.get("s")
        assert np.array_equal(bank.get("s")[0].means, means_before)

    def test_from_dir(self, tmp_path):
        point_mass_gmm(np.zeros(4)).save(tmp_path / "calm.mfc", label="calm")
        point_mass_gmm(np.ones(4)).save(tmp_path / "brisk.mfc", label="brisk", alpha=0.02)
        bank = StyleBank.from_dir(tmp_path)
        assert bank.labels() == ["brisk", "calm"]
        assert bank.get("brisk")[1] == 0.02
