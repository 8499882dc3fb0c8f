import numpy as np
import pytest

from pcregen.errors import DimensionMismatch, InvalidGeometry, ParseError, TooFewPoints
from pcregen.features import (
    DESCRIPTOR_DIM,
    FeatureSet,
    compute_weak_descriptor,
    estimate_normals,
    feature_distance,
    read_feature_file,
    write_feature_file,
)
from pcregen.geometry import PointCloud, apply_transform
from pcregen.synthetic import structured_points


@pytest.fixture
def structured_cloud():
    return PointCloud(structured_points(600, 1.0, np.random.default_rng(3)))


class TestFeatureSet:
    """Tests for the descriptor container"""

    def test_rejects_nan(self):
        with pytest.raises(InvalidGeometry):
            FeatureSet([[0.0, np.inf]])

    def test_for_cloud_checks_length(self):
        with pytest.raises(InvalidGeometry):
            FeatureSet.for_cloud(PointCloud(np.zeros((3, 3))), np.zeros((2, 4)))

    def test_dimension_and_subset(self):
        features = FeatureSet(np.arange(12.0).reshape(4, 3))
        assert features.dimension == 3
        np.testing.assert_array_equal(features.subset([3, 1]).vectors, [[9, 10, 11], [3, 4, 5]])


class TestFeatureDistance:
    def test_euclidean(self):
        assert feature_distance([0, 0], [3, 4]) == 5.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            feature_distance([0, 0], [0, 0, 0])


class TestNormals:
    def test_plane_normals_point_toward_centroid(self, rng):
        plane = np.column_stack([rng.uniform(-1, 1, size=(800, 2)), np.zeros(800)])
        cloud = PointCloud(np.vstack([plane, [[0.0, 0.0, 5.0]]]))
        normals = estimate_normals(cloud, 0.3)
        # the lone point above the plane pulls the centroid to +z
        np.testing.assert_allclose(np.abs(normals[:800, 2]), 1.0, atol=1e-9)
        assert np.all(normals[:800, 2] > 0)
        np.testing.assert_array_equal(normals[800], np.zeros(3))


class TestWeakDescriptor:
    """Tests for the 33-bin angular histogram"""

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            compute_weak_descriptor(PointCloud(np.zeros((5, 3))), 0.1)

    def test_radius_must_be_positive(self, structured_cloud):
        with pytest.raises(InvalidGeometry):
            compute_weak_descriptor(structured_cloud, 0.0)

    def test_shape_and_normalization(self, structured_cloud):
        features = compute_weak_descriptor(structured_cloud, 0.1)
        assert features.vectors.shape == (len(structured_cloud), DESCRIPTOR_DIM)
        sums = features.vectors.sum(axis=1)
        nonzero = sums > 0
        assert nonzero.mean() > 0.8
        np.testing.assert_allclose(sums[nonzero], 1.0, atol=1e-12)

    def test_isolated_point_gets_zero_vector(self, rng):
        cluster = rng.normal(scale=0.01, size=(40, 3))
        cloud = PointCloud(np.vstack([cluster, [[10.0, 10.0, 10.0]]]))
        features = compute_weak_descriptor(cloud, 0.05)
        np.testing.assert_array_equal(features.vectors[-1], np.zeros(DESCRIPTOR_DIM))

    def test_rotation_invariance(self, structured_cloud, random_transform):
        moved = apply_transform(random_transform(), structured_cloud)
        original = compute_weak_descriptor(structured_cloud, 0.1).vectors
        rotated = compute_weak_descriptor(moved, 0.1).vectors
        l1 = np.abs(original - rotated).sum(axis=1)
        assert np.mean(l1 <= 0.05) >= 0.95

    def test_worker_count_does_not_change_result(self, structured_cloud):
        single = compute_weak_descriptor(structured_cloud, 0.1, workers=1)
        threaded = compute_weak_descriptor(structured_cloud, 0.1, workers=4)
        np.testing.assert_array_equal(single.vectors, threaded.vectors)


class TestFeatureFile:
    """Tests for the binary feature format"""

    def test_round_trip_at_float32(self, tmp_path, rng):
        features = FeatureSet(rng.normal(size=(7, 5)))
        path = tmp_path / "feats.bin"
        write_feature_file(path, features)
        loaded = read_feature_file(path)
        assert path.stat().st_size == 8 + 4 * 7 * 5
        np.testing.assert_array_equal(loaded.vectors, features.vectors.astype(np.float32).astype(np.float64))

    def test_truncated_file(self, tmp_path, rng):
        path = tmp_path / "feats.bin"
        write_feature_file(path, FeatureSet(rng.normal(size=(4, 3))))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ParseError):
            read_feature_file(path)

    def test_shorter_than_header(self, tmp_path):
        path = tmp_path / "feats.bin"
        path.write_bytes(b"\x01\x00")
        with pytest.raises(ParseError):
            read_feature_file(path)
