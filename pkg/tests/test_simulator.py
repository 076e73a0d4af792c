import numpy as np
import pytest

from radialpose.config import MODEL_SHAPES, NoiseModel, SceneConfig
from radialpose.errors import ArgumentError, DegenerateSceneError
from radialpose.geometry import NormalizationRecord, PointCloud, RigidTransform
from radialpose.keypoints import gt_radii
from radialpose.metrics import miou, vcs
from radialpose.simulator import (
    Scene,
    build_object,
    make_model,
    oracle_offsets,
    oracle_probabilities,
    oracle_regressor,
    oracle_segmenter,
    random_rotation,
    scene_from_config,
    synth_scene,
)


class TestMakeModel:
    @pytest.mark.parametrize("shape", MODEL_SHAPES)
    def test_point_count_and_scale(self, shape):
        model = make_model(shape, 500, rng_seed=0, size=0.1)
        assert len(model) == 500
        assert np.abs(model.points).max() <= 0.15 + 1e-12

    def test_sphere_points_on_surface(self):
        model = make_model("sphere", 300, rng_seed=1, size=2.0)
        np.testing.assert_allclose(np.linalg.norm(model.points, axis=1), 2.0)

    def test_box_points_on_faces(self):
        pts = make_model("box", 300, rng_seed=1).points
        on_face = np.isclose(np.abs(pts), [1.0, 0.7, 0.5]).any(axis=1)
        assert on_face.all()

    def test_seeded(self):
        np.testing.assert_array_equal(make_model("torus", 200, 3).points, make_model("torus", 200, 3).points)

    def test_unknown_shape(self):
        with pytest.raises(ArgumentError):
            make_model("teapot", 200, 0)

    def test_too_few_points(self):
        with pytest.raises(ArgumentError):
            make_model("sphere", 10, 0)


class TestRandomRotation:
    def test_proper_rotation(self, rng):
        for _ in range(10):
            R = random_rotation(rng)
            np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0)


class TestSynthScene:
    def test_foreground_is_posed_model(self, small_recipe, small_object):
        model, keypoints = small_object
        scene = synth_scene(model, keypoints, 0.0, 0.0, 0.0, rng_seed=3)
        fg = scene.labels == 1
        assert fg.all()
        raw = scene.normalization.invert(scene.cloud.points)
        np.testing.assert_allclose(raw, scene.gt_pose.apply(model.points[scene.source_index]), atol=1e-12)

    def test_radii_scale_with_normalization(self, small_object):
        model, keypoints = small_object
        scene = synth_scene(model, keypoints, 0.0, 0.0, 0.0, rng_seed=4)
        scale = scene.normalization.scale
        object_radii = gt_radii(model, keypoints.keypoints).values
        scene_radii = gt_radii(scene.cloud, scene.scene_keypoints).values
        np.testing.assert_allclose(scene_radii, object_radii[scene.source_index] / scale, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(
            scene.scene_keypoints * scale + scene.normalization.center,
            scene.gt_pose.apply(keypoints.keypoints),
            atol=1e-12,
        )

    def test_scene_keypoints_match_pose(self, cluttered_scene, small_object):
        _, keypoints = small_object
        expected = cluttered_scene.normalization.apply(cluttered_scene.gt_pose.apply(keypoints.keypoints))
        np.testing.assert_allclose(cluttered_scene.scene_keypoints, expected)

    def test_clutter_share(self, cluttered_scene):
        fg = np.count_nonzero(cluttered_scene.labels == 1)
        assert fg == 400
        assert len(cluttered_scene) == 800
        assert np.all(cluttered_scene.source_index[cluttered_scene.labels == 0] == -1)

    def test_normalized_to_unit_box(self, cluttered_scene):
        assert np.abs(cluttered_scene.cloud.points).max() == pytest.approx(1.0)

    def test_occlusion_removes_points(self, small_object):
        model, keypoints = small_object
        scene = synth_scene(model, keypoints, 0.0, 0.25, 0.0, rng_seed=3)
        assert len(scene) == 300
        assert len(np.unique(scene.source_index)) == 300

    def test_same_seed_same_scene(self, small_recipe, small_object):
        model, keypoints = small_object
        a = scene_from_config(small_recipe, model, keypoints, 11)
        b = scene_from_config(small_recipe, model, keypoints, 11)
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        np.testing.assert_array_equal(a.gt_pose.rotation, b.gt_pose.rotation)

    def test_sensor_noise_moves_points(self, small_object):
        model, keypoints = small_object
        clean = synth_scene(model, keypoints, 0.0, 0.0, 0.0, rng_seed=5)
        noisy = synth_scene(model, keypoints, 0.0, 0.0, 0.001, rng_seed=5)
        assert not np.allclose(clean.cloud.points, noisy.cloud.points)

    def test_invalid_fractions(self, small_object):
        model, keypoints = small_object
        with pytest.raises(ArgumentError):
            synth_scene(model, keypoints, 1.0, 0.0, 0.0, 0)
        with pytest.raises(ArgumentError):
            synth_scene(model, keypoints, 0.0, 0.95, 0.0, 0)

    def test_subset_keeps_ground_truth(self, cluttered_scene):
        sub = cluttered_scene.subset(np.arange(0, len(cluttered_scene), 2))
        assert len(sub) == len(cluttered_scene) // 2
        assert sub.gt_pose is cluttered_scene.gt_pose

    def test_scene_needs_foreground(self, cluttered_scene):
        with pytest.raises(DegenerateSceneError):
            cluttered_scene.subset(np.flatnonzero(cluttered_scene.labels == 0))


class TestBuildObject:
    def test_fps_scheme(self):
        model, keypoints = build_object(SceneConfig(model_points=300), K=4)
        assert len(model) == 300
        assert keypoints.keypoints.shape == (4, 3)

    def test_bbox_scheme_ignores_k(self):
        _, keypoints = build_object(SceneConfig(model_points=300, keypoint_scheme="bbox"), K=3)
        assert keypoints.keypoints.shape == (8, 3)


class TestOracleSegmenter:
    def test_zero_flip_is_ground_truth(self, cluttered_scene):
        np.testing.assert_array_equal(oracle_segmenter(cluttered_scene, 0.0, 1), cluttered_scene.labels)

    def test_flip_rate_is_respected(self, cluttered_scene):
        flipped = oracle_segmenter(cluttered_scene, 0.2, 1) != cluttered_scene.labels
        assert flipped.mean() == pytest.approx(0.2, abs=0.05)

    def test_miou_matches_flip_expectation(self):
        # balanced classes: each class keeps (1 - f) n of n + f n united points
        labels = np.repeat([1, 0], 5000)
        pts = np.random.default_rng(0).uniform(-1.0, 1.0, size=(labels.size, 3))
        scene = Scene(
            PointCloud(pts, labels),
            RigidTransform.identity(),
            "balanced",
            np.eye(3),
            NormalizationRecord(np.zeros(3), 1.0),
            np.full(labels.size, -1),
        )
        flip = 0.1
        assert miou(oracle_segmenter(scene, flip, 12), scene.labels) == pytest.approx(
            (1.0 - flip) / (1.0 + flip), abs=0.02
        )

    def test_probabilities_agree_with_labels(self, cluttered_scene):
        labels = oracle_segmenter(cluttered_scene, 0.1, 4)
        probs = oracle_probabilities(cluttered_scene, 0.1, 4)
        np.testing.assert_array_equal((probs > 0.5).astype(np.int64), labels)
        assert np.all((probs > 0.0) & (probs < 1.0))

    def test_flip_rate_range(self, cluttered_scene):
        with pytest.raises(ArgumentError):
            oracle_segmenter(cluttered_scene, 0.5, 0)


class TestOracleRegressor:
    def test_noise_free_foreground_is_exact(self, rng):
        pts = PointCloud(rng.uniform(-1.0, 1.0, size=(50, 3)), np.ones(50, dtype=np.int64))
        kps = rng.uniform(-1.0, 1.0, size=(3, 3))
        est = oracle_regressor(pts, kps, NoiseModel())
        np.testing.assert_allclose(est.values, gt_radii(pts, kps).values)

    def test_gaussian_noise_spread(self, rng):
        pts = PointCloud(rng.uniform(-1.0, 1.0, size=(4000, 3)))
        kps = np.array([[5.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 5.0]])
        est = oracle_regressor(pts, kps, NoiseModel(gaussian_sigma=0.02, rng_seed=2))
        err = est.values - gt_radii(pts, kps).values
        assert err.std() == pytest.approx(0.02, rel=0.05)
        assert abs(err.mean()) < 0.002

    def test_background_rows_are_garbage(self, rng):
        labels = np.array([1] * 10 + [0] * 10)
        pts = PointCloud(rng.uniform(-1.0, 1.0, size=(20, 3)), labels)
        kps = rng.uniform(-1.0, 1.0, size=(3, 3))
        est = oracle_regressor(pts, kps, NoiseModel(rng_seed=3))
        exact = gt_radii(pts, kps).values
        np.testing.assert_allclose(est.values[:10], exact[:10])
        assert not np.allclose(est.values[10:], exact[10:])

    def test_outliers_cap_vote_confidence(self, rng):
        pts = PointCloud(rng.uniform(-1.0, 1.0, size=(5000, 3)), np.ones(5000, dtype=np.int64))
        kps = rng.uniform(-1.0, 1.0, size=(3, 3))
        est = oracle_regressor(pts, kps, NoiseModel(outlier_fraction=0.3, rng_seed=6))
        score, _ = vcs(est, gt_radii(pts, kps), 0.01)
        assert score <= 0.7 + 0.02
        assert score >= 0.7 - 0.03

    def test_radii_clamped_at_zero(self, rng):
        pts = PointCloud(rng.uniform(-1.0, 1.0, size=(200, 3)))
        est = oracle_regressor(pts, pts.points[:3], NoiseModel(gaussian_sigma=0.5, rng_seed=1))
        assert np.all(est.values >= 0.0)

    def test_seeded(self, rng):
        pts = PointCloud(rng.uniform(-1.0, 1.0, size=(30, 3)))
        kps = rng.uniform(-1.0, 1.0, size=(3, 3))
        noise = NoiseModel(gaussian_sigma=0.1, outlier_fraction=0.2, rng_seed=9)
        np.testing.assert_array_equal(
            oracle_regressor(pts, kps, noise).values, oracle_regressor(pts, kps, noise).values
        )


class TestOracleOffsets:
    def test_noise_free_offsets_hit_keypoints(self, rng):
        pts = PointCloud(rng.uniform(-1.0, 1.0, size=(20, 3)))
        kps = rng.uniform(-1.0, 1.0, size=(3, 3))
        off = oracle_offsets(pts, kps, NoiseModel(), ([-1.25] * 3, [1.25] * 3))
        assert off.shape == (20, 3, 3)
        np.testing.assert_allclose(pts.points[:, None, :] + off, np.broadcast_to(kps, (20, 3, 3)))

    def test_garbage_stays_inside_bounds(self, rng):
        pts = PointCloud(rng.uniform(-1.0, 1.0, size=(20, 3)), np.zeros(20, dtype=np.int64))
        off = oracle_offsets(pts, rng.uniform(-1.0, 1.0, size=(3, 3)), NoiseModel(), ([-1.25] * 3, [1.25] * 3))
        targets = pts.points[:, None, :] + off
        assert np.all(np.abs(targets) <= 1.25 + 1e-12)
