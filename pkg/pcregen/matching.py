"""
Matching - Feature-space matching between two point sets

All match matrices are oriented source-rows x target-columns; relations
computed from the target side are transposed before they are combined.
"""

from dataclasses import dataclass
from typing import Tuple
import logging

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, EmptySet, InvalidGeometry
from .features import FeatureSet
from .geometry import CorrespondenceSet


logger = logging.getLogger(__name__)

DEFAULT_K_GMM = 3
# rows per block of the feature distance matrix
_BLOCK_ROWS = 1024


@dataclass(frozen=True, eq=False)
class MatchMatrix:
    """Sparse boolean relation over (source index, target index)"""

    matrix: sparse.csr_matrix

    @classmethod
    def from_neighbor_indices(cls, neighbors: np.ndarray, shape: Tuple[int, int]) -> "MatchMatrix":
        neighbors = np.asarray(neighbors, dtype=np.int64)
        rows = np.repeat(np.arange(neighbors.shape[0]), neighbors.shape[1])
        data = np.ones(rows.shape[0], dtype=np.int8)
        return cls(sparse.csr_matrix((data, (rows, neighbors.reshape(-1))), shape=shape))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def transpose(self) -> "MatchMatrix":
        return MatchMatrix(self.matrix.transpose().tocsr())

    def logical_and(self, other: "MatchMatrix") -> "MatchMatrix":
        return MatchMatrix(self.matrix.multiply(other.matrix).tocsr())

    def logical_or(self, other: "MatchMatrix") -> "MatchMatrix":
        return MatchMatrix(self.matrix.maximum(other.matrix).tocsr())

    def row_counts(self) -> np.ndarray:
        return np.asarray((self.matrix != 0).sum(axis=1)).reshape(-1)

    def pairs(self) -> np.ndarray:
        coo = self.matrix.tocoo()
        keep = coo.data != 0
        pairs = np.stack([coo.row[keep], coo.col[keep]], axis=1).astype(np.int64)
        if len(pairs) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray() != 0

    def __repr__(self) -> str:
        return f"MatchMatrix(shape={self.shape}, nnz={len(self.pairs())})"


def _check_pair(src_feats: FeatureSet, dst_feats: FeatureSet):
    if len(src_feats) == 0 or len(dst_feats) == 0:
        raise EmptySet("matching requires non-empty feature sets")
    if src_feats.dimension != dst_feats.dimension:
        raise DimensionMismatch(
            f"feature dimensions differ: {src_feats.dimension} vs {dst_feats.dimension}"
        )


def feature_knn(src_feats: FeatureSet, dst_feats: FeatureSet, k: int) -> np.ndarray:
    """
    Indices of the k feature-nearest targets of every source row

    Distance ties go to the smaller target index (stable sort).
    """
    _check_pair(src_feats, dst_feats)
    if k < 1:
        raise InvalidGeometry("k must be >= 1")
    k = min(k, len(dst_feats))
    result = np.empty((len(src_feats), k), dtype=np.int64)
    for start in range(0, len(src_feats), _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, len(src_feats))
        distances = cdist(src_feats.vectors[start:stop], dst_feats.vectors)
        result[start:stop] = np.argsort(distances, axis=1, kind="stable")[:, :k]
    return result


def nn_match(src_feats: FeatureSet, dst_feats: FeatureSet) -> MatchMatrix:
    """NN matching matrix: one entry per source row"""
    neighbors = feature_knn(src_feats, dst_feats, 1)
    return MatchMatrix.from_neighbor_indices(neighbors, (len(src_feats), len(dst_feats)))


def mnn_match(src_feats: FeatureSet, dst_feats: FeatureSet, k: int) -> MatchMatrix:
    """Multi-nearest-neighbour matrix: the top-k targets (rank 1 included) per source row"""
    neighbors = feature_knn(src_feats, dst_feats, k)
    return MatchMatrix.from_neighbor_indices(neighbors, (len(src_feats), len(dst_feats)))


def _directional_matrices(P_feats: FeatureSet, Q_feats: FeatureSet, k: int):
    shape_pq = (len(P_feats), len(Q_feats))
    shape_qp = (len(Q_feats), len(P_feats))
    knn_pq = feature_knn(P_feats, Q_feats, k)
    knn_qp = feature_knn(Q_feats, P_feats, k)
    return (
        MatchMatrix.from_neighbor_indices(knn_pq[:, :1], shape_pq),
        MatchMatrix.from_neighbor_indices(knn_pq, shape_pq),
        MatchMatrix.from_neighbor_indices(knn_qp[:, :1], shape_qp),
        MatchMatrix.from_neighbor_indices(knn_qp, shape_qp),
    )


def generalized_mutual_match(P_feats: FeatureSet, Q_feats: FeatureSet, k: int = DEFAULT_K_GMM) -> CorrespondenceSet:
    """
    Relaxed reciprocity: keep (m, n) when the strict NN in one direction is among
    the top-k in the other, in either orientation

    M* = (M1[P->Q] AND M2[Q->P]^T) OR (M1[Q->P]^T AND M2[P->Q])
    """
    _check_pair(P_feats, Q_feats)
    nn_pq, mnn_pq, nn_qp, mnn_qp = _directional_matrices(P_feats, Q_feats, k)
    forward = nn_pq.logical_and(mnn_qp.transpose())
    backward = nn_qp.transpose().logical_and(mnn_pq)
    return CorrespondenceSet.from_pairs(forward.logical_or(backward).pairs())


def mutual_match(P_feats: FeatureSet, Q_feats: FeatureSet) -> CorrespondenceSet:
    """Strict mutual nearest neighbours: M1[P->Q] AND M1[Q->P]^T"""
    _check_pair(P_feats, Q_feats)
    nn_pq = nn_match(P_feats, Q_feats)
    nn_qp = nn_match(Q_feats, P_feats)
    return CorrespondenceSet.from_pairs(nn_pq.logical_and(nn_qp.transpose()).pairs())


def nn_correspondences(P_feats: FeatureSet, Q_feats: FeatureSet) -> CorrespondenceSet:
    """Plain one-directional NN matches as correspondences"""
    return CorrespondenceSet.from_pairs(nn_match(P_feats, Q_feats).pairs())
