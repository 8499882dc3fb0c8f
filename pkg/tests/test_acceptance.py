"""
Acceptance suite

The fast classes run by default. Scene-level classes regenerate full synthetic
scenes and are marked slow (run with `pytest -m slow`).
"""

import numpy as np
import pytest
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation

from pcregen.benchmark import BenchmarkSpec, run_benchmark, scene_seed, write_benchmark_outputs
from pcregen.config import apply_ablation_overrides, preset
from pcregen.consistency import ConsistencyParams, ctc_matrix, local_score, pairwise_consistency, second_order_matrix
from pcregen.evaluation import baseline_register, count_inliers, pair_metrics, rotation_error, translation_error
from pcregen.features import FeatureSet
from pcregen.geometry import CorrespondenceSet, PointCloud, RigidTransform, SpatialIndex, fit_rigid_transform
from pcregen.matching import generalized_mutual_match, mnn_match, mutual_match, nn_match
from pcregen.pipeline import prepare_features, register_pair
from pcregen.refinement import RefinementParams, po_tcd_count, refine_pose
from pcregen.regeneration import merge_correspondences
from pcregen.synthetic import SceneSpec, generate_scene

from conftest import build_phi_region, make_transform


# registration recall required at 90% outliers and 500 initial pairs
REGISTRATION_RECALL_FLOOR = 0.90


class TestMatchingProperty:
    def test_relaxed_matching_contains_mutual_matching(self, rng):
        for _ in range(1000):
            n, m = rng.integers(1, 51, size=2)
            d = rng.integers(1, 9)
            P = FeatureSet(rng.normal(size=(n, d)))
            Q = FeatureSet(rng.normal(size=(m, d)))
            strict = mutual_match(P, Q).as_set()
            relaxed = generalized_mutual_match(P, Q, 3).as_set()
            assert strict <= relaxed
            assert len(relaxed) >= len(strict)


class TestLocalScoreProperty:
    def test_accepted_regions_hold_inlier_majority(self, rng):
        params = ConsistencyParams(sigma=0.05, sigma_d=0.05, a=0.5)
        accepted = 0
        for _ in range(500):
            count = int(rng.integers(2, 40))
            inliers = int(rng.integers(1, count + 1))
            P, Q, G, region, mask, _ = build_phi_region(rng, count, inliers, sigma=params.sigma)
            src, dst = G.positions(P, Q)
            center = (P.points[region.seed.source_index], Q.points[region.seed.target_index])
            score = local_score(ctc_matrix(src, dst, center, params), params.a)
            if score >= 1.0:
                accepted += 1
                assert mask.mean() >= params.a
        assert accepted > 0


class TestPoseFitExactness:
    def test_noise_free_fits_recover_pose(self, rng):
        for _ in range(1000):
            T = make_transform(rng, max_translation=10.0)
            src = rng.uniform(-1.0, 1.0, size=(int(rng.integers(3, 60)), 3))
            fitted = fit_rigid_transform(src, T.apply(src))
            assert np.max(np.abs(fitted.rotation - T.rotation)) <= 1e-6
            assert np.linalg.norm(fitted.translation - T.translation) <= 1e-6


class TestOracleEquivalence:
    """Index, matching, second-order and merge against brute-force scans"""

    def test_spatial_index(self, rng):
        for _ in range(200):
            points = rng.uniform(size=(int(rng.integers(1, 80)), 3))
            index = SpatialIndex(PointCloud(points))
            center = rng.uniform(size=3)
            radius = rng.uniform(0.05, 0.6)
            distances = np.linalg.norm(points - center, axis=1)
            np.testing.assert_array_equal(index.radius_neighbors(center, radius), np.nonzero(distances <= radius)[0])
            nearest, distance = index.nearest_neighbor(center)
            assert nearest == int(np.argmin(distances))
            assert distance == pytest.approx(distances.min())

    def test_nn_and_mnn(self, rng):
        for _ in range(200):
            n, m = rng.integers(1, 30, size=2)
            d = int(rng.integers(1, 9))
            P, Q = rng.normal(size=(n, d)), rng.normal(size=(m, d))
            distances = cdist(P, Q)
            expected_nn = np.zeros((n, m), dtype=bool)
            expected_nn[np.arange(n), np.argmin(distances, axis=1)] = True
            np.testing.assert_array_equal(nn_match(FeatureSet(P), FeatureSet(Q)).to_dense(), expected_nn)

            k = min(3, m)
            expected_mnn = np.zeros((n, m), dtype=bool)
            top = np.argsort(distances, axis=1, kind="stable")[:, :k]
            for row in range(n):
                expected_mnn[row, top[row]] = True
            np.testing.assert_array_equal(mnn_match(FeatureSet(P), FeatureSet(Q), 3).to_dense(), expected_mnn)

    def test_second_order(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 25))
            src = rng.uniform(size=(n, 3))
            dst = src + rng.normal(scale=0.1, size=(n, 3))
            first = np.array([
                [1 if j == k else pairwise_consistency((src[j], dst[j]), (src[k], dst[k]), 0.1) for k in range(n)]
                for j in range(n)
            ])
            expected = np.zeros((n, n), dtype=np.int64)
            for j in range(n):
                for k in range(n):
                    if j == k:
                        expected[j, k] = 1
                    elif first[j, k]:
                        expected[j, k] = sum(int(first[j, h] and first[h, k]) for h in range(n))
            np.testing.assert_array_equal(second_order_matrix(src, dst, 0.1), expected)

    def test_merge(self, rng):
        for _ in range(200):
            blocks = []
            for _ in range(int(rng.integers(0, 6))):
                size = int(rng.integers(0, 15))
                pairs = np.unique(rng.integers(0, 12, size=(size, 2)), axis=0)
                blocks.append(CorrespondenceSet(pairs))
            expected = set()
            for block in blocks:
                expected |= block.as_set()
            merged = merge_correspondences(blocks)
            assert merged.as_set() == expected
            assert len(merged) == len(expected)
            assert merge_correspondences([merged]).as_set() == merged.as_set()


def scene_specs(outlier_ratio, pair_count, count=50, base_seed=0):
    return [
        SceneSpec(
            point_count=2000, outlier_ratio=outlier_ratio, initial_pair_count=pair_count,
            noise_sigma=0.005, rng_seed=scene_seed(base_seed, 0, i),
        )
        for i in range(count)
    ]


@pytest.fixture(scope="module")
def scenes_at_90():
    config = preset("desk")
    prepared = []
    for spec in scene_specs(0.90, 500):
        scene = generate_scene(spec)
        prepared.append((scene, prepare_features(scene.P, scene.Q, config)))
    return prepared


def run_suite(prepared, config):
    results = []
    for scene, (P_feats, Q_feats) in prepared:
        output = register_pair(scene.P, scene.Q, P_feats, Q_feats, scene.G0, config)
        results.append(pair_metrics(
            scene.G0, output.correspondences, scene.P, scene.Q, output.transform, scene.gt, config.thresholds
        ))
    return results


def agreeing_share(better, worse):
    return np.mean([b.in_count >= w.in_count for b, w in zip(better, worse)])


@pytest.mark.slow
class TestRegenerationAtScale:
    """Scene-level behaviour on the synthetic suite"""

    def test_recovers_registrations_and_multiplies_inliers(self, scenes_at_90):
        results = run_suite(scenes_at_90, preset("desk"))
        assert np.mean([m.success for m in results]) >= REGISTRATION_RECALL_FLOOR
        assert np.median([m.inr for m in results]) > 3.0

    def test_extreme_outliers_beat_mutual_matching_baseline(self):
        config = preset("desk")
        pipeline, baseline = [], []
        for spec in scene_specs(0.99, 1000):
            scene = generate_scene(spec)
            P_feats, Q_feats = prepare_features(scene.P, scene.Q, config)
            output = register_pair(scene.P, scene.Q, P_feats, Q_feats, scene.G0, config)
            pipeline.append(pair_metrics(
                scene.G0, output.correspondences, scene.P, scene.Q, output.transform, scene.gt, config.thresholds
            ))
            matches, transform = baseline_register(scene.P, scene.Q, P_feats, Q_feats)
            baseline.append(pair_metrics(scene.G0, matches, scene.P, scene.Q, transform, scene.gt, config.thresholds))
        assert all(m.initial_inliers == 10 for m in pipeline)
        assert np.mean([m.success for m in pipeline]) > np.mean([m.success for m in baseline])
        assert np.median([m.in_count for m in pipeline]) > 100

    def test_progressive_beats_single_stage(self, scenes_at_90):
        progressive = run_suite(scenes_at_90, preset("desk"))
        single = run_suite(scenes_at_90, apply_ablation_overrides(preset("desk"), ["progressive=off"]))
        assert agreeing_share(progressive, single) >= 0.8
        assert np.mean([m.in_count for m in progressive]) >= np.mean([m.in_count for m in single])

    def test_relaxed_matching_beats_strict_matching(self, scenes_at_90):
        gmm = run_suite(scenes_at_90, preset("desk"))
        mm = run_suite(scenes_at_90, apply_ablation_overrides(preset("desk"), ["matching=mm"]))
        nn = run_suite(scenes_at_90, apply_ablation_overrides(preset("desk"), ["matching=nn"]))
        assert agreeing_share(gmm, mm) >= 0.8
        assert agreeing_share(mm, nn) >= 0.8

    @pytest.mark.parametrize("stages", ["local_only", "global_only"])
    def test_both_corrections_needed(self, scenes_at_90, stages):
        both = run_suite(scenes_at_90, preset("desk"))
        ablated = run_suite(scenes_at_90, apply_ablation_overrides(preset("desk"), [f"stages={stages}"]))
        assert np.mean([m.success for m in ablated]) < np.mean([m.success for m in both])
        assert np.mean([b.success >= a.success for b, a in zip(both, ablated)]) >= 0.8

    def test_stage_inliers_do_not_shrink(self, scenes_at_90):
        config = preset("desk")
        per_stage = {}
        for scene, (P_feats, Q_feats) in scenes_at_90:
            def on_stage(stage, correspondences, scene=scene):
                per_stage.setdefault(stage, []).append(count_inliers(correspondences, scene.P, scene.Q, scene.gt))
            register_pair(scene.P, scene.Q, P_feats, Q_feats, scene.G0, config, on_stage=on_stage)
        medians = [np.median(per_stage[stage]) for stage in sorted(per_stage)]
        assert all(later >= earlier for earlier, later in zip(medians, medians[1:]))


@pytest.mark.slow
class TestRefinementAtScale:
    def test_perturbed_starts_improve(self):
        params = RefinementParams(sigma_d=0.05, max_rounds=30, convergence_eps=1e-8)
        rng = np.random.default_rng(99)
        improved = 0
        for i in range(100):
            scene = generate_scene(SceneSpec(point_count=2000, noise_sigma=0.005, initial_pair_count=50,
                                             rng_seed=scene_seed(1, 0, i)))
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            delta = RigidTransform(
                Rotation.from_rotvec(axis * np.radians(2.0)).as_matrix(),
                direction * 0.05 * params.sigma_d,
            )
            start = delta.compose(scene.T_gt)
            refined = refine_pose(start, scene.P, scene.Q, params)
            assert po_tcd_count(refined, scene.P, scene.Q, params.sigma_d) >= \
                po_tcd_count(start, scene.P, scene.Q, params.sigma_d)
            gt = scene.T_gt
            if rotation_error(refined.rotation, gt.rotation) < rotation_error(start.rotation, gt.rotation) and \
                    translation_error(refined.translation, gt.translation) < \
                    translation_error(start.translation, gt.translation):
                improved += 1
        assert improved >= 95


@pytest.mark.slow
class TestBenchmarkDeterminism:
    def test_summary_is_byte_identical(self, tmp_path):
        spec = BenchmarkSpec(
            scenes_per_point=3, outlier_ratios=[0.9, 0.95], initial_pair_counts=[250, 500],
            scene={"point_count": 2000}, config={"preset": "desk"}, rng_seed=5, baseline=True,
        )
        write_benchmark_outputs(run_benchmark(spec, workers=1), tmp_path / "serial")
        write_benchmark_outputs(run_benchmark(spec, workers=4), tmp_path / "threaded")
        assert (tmp_path / "serial" / "summary.csv").read_bytes() == (tmp_path / "threaded" / "summary.csv").read_bytes()
