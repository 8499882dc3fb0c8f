import numpy as np
import pytest

from pcregen.errors import DimensionMismatch, EmptySet, InvalidGeometry
from pcregen.features import FeatureSet
from pcregen.matching import (
    MatchMatrix,
    feature_knn,
    generalized_mutual_match,
    mnn_match,
    mutual_match,
    nn_correspondences,
    nn_match,
)


def features(values):
    return FeatureSet(np.asarray(values, dtype=float).reshape(len(values), -1))


class TestMatchMatrix:
    """Tests for the sparse boolean relation"""

    def test_from_neighbors_and_pairs(self):
        M = MatchMatrix.from_neighbor_indices(np.array([[1], [0], [1]]), (3, 2))
        np.testing.assert_array_equal(M.pairs(), [[0, 1], [1, 0], [2, 1]])
        np.testing.assert_array_equal(M.row_counts(), [1, 1, 1])

    def test_transpose_and_logic(self):
        A = MatchMatrix.from_neighbor_indices(np.array([[0, 1], [1, 0]]), (2, 2))
        B = MatchMatrix.from_neighbor_indices(np.array([[0], [0]]), (2, 2))
        np.testing.assert_array_equal(A.logical_and(B).to_dense(), [[True, False], [True, False]])
        np.testing.assert_array_equal(B.logical_or(B.transpose()).to_dense(), [[True, True], [True, False]])


class TestNearestNeighborMatching:
    """Tests for NN and multi-NN matrices"""

    def test_nn_picks_closest(self):
        M = nn_match(features([[0.0]]), features([[10.0], [1.0], [5.0]]))
        np.testing.assert_array_equal(M.pairs(), [[0, 1]])

    def test_nn_tie_goes_to_smallest_index(self):
        M = nn_match(features([[0.0]]), features([[5.0], [1.0], [-1.0], [1.0]]))
        np.testing.assert_array_equal(M.pairs(), [[0, 1]])

    def test_mnn_includes_rank_one(self):
        src = features([[0.0], [4.0]])
        dst = features([[0.1], [3.0], [4.2], [9.0]])
        nn = nn_match(src, dst).to_dense()
        mnn = mnn_match(src, dst, 3).to_dense()
        assert np.all(mnn[nn])
        np.testing.assert_array_equal(mnn.sum(axis=1), [3, 3])

    def test_k_clipped_to_target_size(self):
        M = mnn_match(features([[0.0], [1.0]]), features([[0.0], [1.0]]), 3)
        np.testing.assert_array_equal(M.row_counts(), [2, 2])

    def test_k_must_be_positive(self):
        with pytest.raises(InvalidGeometry):
            feature_knn(features([[0.0]]), features([[0.0]]), 0)

    def test_empty_set(self):
        with pytest.raises(EmptySet):
            nn_match(FeatureSet(np.zeros((0, 2))), features([[0.0, 1.0]]))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            nn_match(features([[0.0, 1.0]]), features([[0.0, 1.0, 2.0]]))


class TestGeneralizedMutualMatching:
    """Tests for relaxed reciprocity"""

    def test_identical_sets_match_identically(self, rng):
        values = rng.normal(size=(15, 4))
        G = generalized_mutual_match(FeatureSet(values), FeatureSet(values), 3)
        np.testing.assert_array_equal(G.pairs, np.column_stack([np.arange(15), np.arange(15)]))

    def test_admits_pairs_strict_matching_rejects(self):
        P = features([[0.0], [1.0]])
        Q = features([[0.4], [0.45]])
        assert mutual_match(P, Q).as_set() == {(0, 0)}
        assert generalized_mutual_match(P, Q, 3).as_set() == {(0, 0), (0, 1), (1, 1)}

    def test_contains_mutual_matches(self, rng):
        for _ in range(100):
            n, m, d = rng.integers(1, 30, size=3)
            P = FeatureSet(rng.normal(size=(n, d)))
            Q = FeatureSet(rng.normal(size=(m, d)))
            strict = mutual_match(P, Q).as_set()
            relaxed = generalized_mutual_match(P, Q).as_set()
            assert strict <= relaxed

    def test_nn_correspondences_one_per_source(self, rng):
        P = FeatureSet(rng.normal(size=(12, 3)))
        Q = FeatureSet(rng.normal(size=(20, 3)))
        G = nn_correspondences(P, Q)
        np.testing.assert_array_equal(G.source_indices, np.arange(12))
