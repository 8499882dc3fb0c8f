import numpy as np
import pytest

from pcregen.errors import InvalidSpec
from pcregen.evaluation import count_inliers, inlier_mask
from pcregen.synthetic import SceneSpec, generate_scene, random_transform, structured_points


class TestSceneSpec:
    def test_defaults_are_valid(self):
        assert SceneSpec().validate() == (True, None)

    def test_tolerance_follows_scale(self):
        assert SceneSpec(scene_scale=10.0).tolerance == pytest.approx(1.0)
        assert SceneSpec(scene_scale=10.0, inlier_tolerance=0.3).tolerance == 0.3

    def test_true_pair_count_rounds_up(self):
        assert SceneSpec(outlier_ratio=0.99, initial_pair_count=1000).true_pair_count == 10
        assert SceneSpec(outlier_ratio=0.9, initial_pair_count=25).true_pair_count == 3
        assert SceneSpec(outlier_ratio=0.0, initial_pair_count=40).true_pair_count == 40

    @pytest.mark.parametrize("kwargs", [
        {"outlier_ratio": 1.0},
        {"outlier_ratio": -0.1},
        {"overlap_fraction": 0.0},
        {"point_count": 5},
        {"initial_pair_count": 0},
        {"rng_seed": -1},
        {"transform_magnitude": (200.0, 0.5)},
        {"point_count": 100, "overlap_fraction": 0.1, "outlier_ratio": 0.0, "initial_pair_count": 50},
    ])
    def test_rejects(self, kwargs):
        is_valid, error = SceneSpec(**kwargs).validate()
        assert not is_valid
        assert error
        with pytest.raises(InvalidSpec):
            generate_scene(SceneSpec(**kwargs))

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(InvalidSpec):
            SceneSpec.from_dict({"point_count": 100, "colour": "red"})

    def test_dict_round_trip(self):
        spec = SceneSpec(point_count=300, transform_magnitude=(10.0, 0.2), rng_seed=4)
        assert SceneSpec.from_dict(spec.to_dict()) == spec


class TestGenerateScene:
    """Tests for synthetic scene generation"""

    def test_exact_outlier_ratio(self):
        scene = generate_scene(SceneSpec(point_count=1500, outlier_ratio=0.99, initial_pair_count=1000, rng_seed=3))
        assert len(scene.G0) == 1000
        assert count_inliers(scene.G0, scene.P, scene.Q, scene.gt) == 10

    def test_no_outliers(self):
        scene = generate_scene(SceneSpec(point_count=500, outlier_ratio=0.0, initial_pair_count=100, rng_seed=5))
        assert np.all(inlier_mask(scene.G0, scene.P, scene.Q, scene.gt))

    def test_same_seed_same_scene(self):
        spec = SceneSpec(point_count=400, initial_pair_count=80, rng_seed=11)
        first, second = generate_scene(spec), generate_scene(spec)
        np.testing.assert_array_equal(first.P.points, second.P.points)
        np.testing.assert_array_equal(first.Q.points, second.Q.points)
        np.testing.assert_array_equal(first.G0.pairs, second.G0.pairs)
        np.testing.assert_array_equal(first.T_gt.as_matrix(), second.T_gt.as_matrix())

    def test_different_seeds_differ(self):
        first = generate_scene(SceneSpec(point_count=400, initial_pair_count=80, rng_seed=1))
        second = generate_scene(SceneSpec(point_count=400, initial_pair_count=80, rng_seed=2))
        assert not np.array_equal(first.P.points, second.P.points)

    def test_clouds_share_size(self):
        scene = generate_scene(SceneSpec(point_count=600, overlap_fraction=0.4, initial_pair_count=50, rng_seed=8))
        assert len(scene.P) == len(scene.Q) == 600

    def test_partners_follow_ground_truth(self):
        spec = SceneSpec(point_count=600, overlap_fraction=0.5, noise_sigma=0.0, initial_pair_count=50, rng_seed=9)
        scene = generate_scene(spec)
        inside = scene.partners >= 0
        assert np.count_nonzero(inside) == 300
        moved = scene.T_gt.apply(scene.P.points[inside])
        np.testing.assert_allclose(moved, scene.Q.points[scene.partners[inside]], atol=1e-9)
        assert len(np.unique(scene.partners[inside])) == 300

    def test_true_pairs_use_partners(self, clean_scene):
        mask = inlier_mask(clean_scene.G0, clean_scene.P, clean_scene.Q, clean_scene.gt)
        pairs = clean_scene.G0.pairs[mask]
        np.testing.assert_array_equal(clean_scene.partners[pairs[:, 0]], pairs[:, 1])


class TestScenePrimitives:
    def test_structured_points_inside_scale(self, rng):
        points = structured_points(900, 2.0, rng)
        assert points.shape == (900, 3)
        assert np.all(np.abs(points) < 2.0)

    def test_random_transform_bounds(self, rng):
        for _ in range(20):
            T = random_transform(30.0, 0.5, rng)
            assert np.degrees(T.rotation_angle()) <= 30.0 + 1e-9
            assert np.linalg.norm(T.translation) <= 0.5 + 1e-12
