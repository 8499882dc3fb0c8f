"""
Geometry - Point containers, rigid transforms, pose fitting and spatial indexing
Substrate shared by every stage of correspondence regeneration
"""

from dataclasses import dataclass, field
from typing import Iterator, List, NamedTuple, Optional, Sequence, Set, Tuple
import logging

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInput, EmptyCloud, InvalidGeometry


logger = logging.getLogger(__name__)

ROTATION_TOLERANCE = 1e-9
# singular-value ratio below which the cross-covariance counts as rank deficient
RANK_TOLERANCE = 1e-10


def _as_points(values, name: str = "points") -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        return np.zeros((0, 3), dtype=np.float64)
    if array.ndim == 1 and array.shape[0] == 3:
        array = array.reshape(1, 3)
    if array.ndim != 2 or array.shape[1] != 3:
        raise InvalidGeometry(f"{name} must have shape (N, 3), got {array.shape}")
    return array


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered set of 3-D points in meters"""

    points: np.ndarray

    def __post_init__(self):
        array = _as_points(self.points)
        if not np.all(np.isfinite(array)):
            raise InvalidGeometry("point cloud contains NaN or Inf coordinates")
        array = np.array(array, copy=True)
        array.setflags(write=False)
        object.__setattr__(self, "points", array)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)})"

    def subset(self, indices: Sequence[int]) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices, dtype=np.int64)])

    def centroid(self) -> np.ndarray:
        if len(self) == 0:
            raise EmptyCloud("centroid of an empty cloud")
        return self.points.mean(axis=0)

    def extent(self) -> float:
        """Diagonal of the axis-aligned bounding box (0 for fewer than two points)"""
        if len(self) < 2:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion x -> R x + t"""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64, copy=True)
        translation = np.array(self.translation, dtype=np.float64, copy=True).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise InvalidGeometry("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidGeometry("transform contains NaN or Inf")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ROTATION_TOLERANCE:
            raise InvalidGeometry("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOLERANCE:
            raise InvalidGeometry("rotation is not proper (det != 1)")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        """Build from a 4x4 homogeneous matrix"""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise InvalidGeometry(f"homogeneous matrix must be 4x4, got {matrix.shape}")
        if not np.allclose(matrix[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidGeometry("last row of a rigid homogeneous matrix must be 0 0 0 1")
        return cls(matrix[:3, :3], matrix[:3, 3])

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def apply(self, points) -> np.ndarray:
        points = _as_points(points)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rotation_t = self.rotation.T
        return RigidTransform(rotation_t, -rotation_t @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform applying `other` first, then `self`"""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def rotation_angle(self) -> float:
        """Rotation angle in radians"""
        cosine = np.clip((np.trace(self.rotation) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.arccos(cosine))

    def __repr__(self) -> str:
        return (
            f"RigidTransform(angle={np.degrees(self.rotation_angle()):.3f}deg, "
            f"t={np.round(self.translation, 4).tolist()})"
        )


class Correspondence(NamedTuple):
    source_index: int
    target_index: int


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """
    Index pairs linking a source cloud to a target cloud

    Pairs are unique. Use `from_pairs` to build a set from raw (possibly
    duplicated) pairs; it collapses duplicates and sorts by key.
    """

    pairs: np.ndarray
    stage: int = 0

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64)
        if pairs.size == 0:
            pairs = np.zeros((0, 2), dtype=np.int64)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise InvalidGeometry(f"pairs must have shape (N, 2), got {pairs.shape}")
        if np.any(pairs < 0):
            raise InvalidGeometry("correspondence indices must be non-negative")
        if self.stage < 0:
            raise InvalidGeometry("stage counter must be >= 0")
        if len(pairs) > 1 and len(np.unique(pairs, axis=0)) != len(pairs):
            raise InvalidGeometry("correspondence set contains duplicate pairs")
        pairs = np.array(pairs, copy=True)
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_pairs(cls, pairs, stage: int = 0) -> "CorrespondenceSet":
        pairs = np.asarray(pairs, dtype=np.int64)
        if pairs.size == 0:
            return cls(np.zeros((0, 2), dtype=np.int64), stage)
        return cls(np.unique(pairs.reshape(-1, 2), axis=0), stage)

    @classmethod
    def empty(cls, stage: int = 0) -> "CorrespondenceSet":
        return cls(np.zeros((0, 2), dtype=np.int64), stage)

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def __iter__(self) -> Iterator[Correspondence]:
        for source_index, target_index in self.pairs:
            yield Correspondence(int(source_index), int(target_index))

    def __repr__(self) -> str:
        return f"CorrespondenceSet(n={len(self)}, stage={self.stage})"

    @property
    def source_indices(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def target_indices(self) -> np.ndarray:
        return self.pairs[:, 1]

    def as_set(self) -> Set[Tuple[int, int]]:
        return {(int(s), int(t)) for s, t in self.pairs}

    def subset(self, indices) -> "CorrespondenceSet":
        return CorrespondenceSet(self.pairs[np.asarray(indices, dtype=np.int64)], self.stage)

    def with_stage(self, stage: int) -> "CorrespondenceSet":
        return CorrespondenceSet(self.pairs, stage)

    def validate_against(self, source: PointCloud, target: PointCloud):
        """Raise InvalidGeometry if any index falls outside its cloud"""
        if len(self) == 0:
            return
        if self.pairs[:, 0].max() >= len(source) or self.pairs[:, 1].max() >= len(target):
            raise InvalidGeometry(
                f"correspondence index out of range for clouds of size "
                f"{len(source)} and {len(target)}"
            )

    def positions(self, source: PointCloud, target: PointCloud) -> Tuple[np.ndarray, np.ndarray]:
        """Source and target coordinates of every pair, row-aligned"""
        return source.points[self.pairs[:, 0]], target.points[self.pairs[:, 1]]


class SpatialIndex:
    """
    Read-only kd-tree over one PointCloud

    Query results are filtered with the same exact distance test a brute-force
    scan uses, so boundary decisions never depend on tree internals.
    """

    def __init__(self, cloud: PointCloud):
        self.cloud = cloud
        self._points = cloud.points
        self._tree: Optional[cKDTree] = cKDTree(self._points) if len(cloud) else None

    def __len__(self) -> int:
        return len(self.cloud)

    def radius_neighbors(self, center, radius: float) -> np.ndarray:
        """Indices within the closed ball of `radius` around `center`, ascending"""
        if radius <= 0:
            raise InvalidGeometry("radius must be > 0")
        if self._tree is None:
            return np.zeros(0, dtype=np.int64)
        center = np.asarray(center, dtype=np.float64).reshape(3)
        candidates = np.asarray(
            self._tree.query_ball_point(center, radius * (1.0 + 1e-9) + 1e-12), dtype=np.int64
        )
        if candidates.size == 0:
            return candidates
        candidates.sort()
        distances = np.linalg.norm(self._points[candidates] - center, axis=1)
        return candidates[distances <= radius]

    def radius_neighbors_batch(self, centers, radius: float) -> List[np.ndarray]:
        return [self.radius_neighbors(center, radius) for center in _as_points(centers)]

    def nearest_neighbors(self, queries) -> Tuple[np.ndarray, np.ndarray]:
        """
        Nearest indexed point for every query row

        Returns:
            (indices, distances); equidistant candidates resolve to the smallest index
        """
        if self._tree is None:
            raise EmptyCloud("nearest-neighbor query on an empty cloud")
        queries = _as_points(queries, "queries")
        if len(queries) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        approx, _ = self._tree.query(queries, k=1)
        balls = self._tree.query_ball_point(queries, np.asarray(approx) * (1.0 + 1e-9) + 1e-12)
        indices = np.empty(len(queries), dtype=np.int64)
        best = np.empty(len(queries))
        for row, ball in enumerate(balls):
            # every point the tree saw within the best distance, rescanned exactly
            candidates = np.sort(np.asarray(ball, dtype=np.int64))
            exact = np.linalg.norm(self._points[candidates] - queries[row], axis=1)
            position = int(np.argmin(exact))
            indices[row] = candidates[position]
            best[row] = exact[position]
        return indices, best

    def nearest_neighbor(self, query) -> Tuple[int, float]:
        indices, distances = self.nearest_neighbors(np.asarray(query, dtype=np.float64).reshape(1, 3))
        return int(indices[0]), float(distances[0])


def radius_neighbors(index: SpatialIndex, center, radius: float) -> np.ndarray:
    return index.radius_neighbors(center, radius)


def nearest_neighbor(index: SpatialIndex, query) -> Tuple[int, float]:
    return index.nearest_neighbor(query)


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Pointwise R p + t"""
    return PointCloud(transform.apply(cloud.points))


def fit_rigid_transform(src_points, dst_points, weights=None) -> RigidTransform:
    """
    Closed-form least-squares rigid fit (SVD of the cross-covariance)

    Args:
        src_points: (N, 3) source coordinates
        dst_points: (N, 3) target coordinates, row-aligned with the source
        weights: Optional non-negative per-pair weights (uniform when omitted)

    Returns:
        The proper rotation and translation minimizing sum w_j |R p_j + t - q_j|^2

    Raises:
        DegenerateInput: fewer than three pairs, or a cross-covariance of rank < 2
    """
    src = _as_points(src_points, "src_points")
    dst = _as_points(dst_points, "dst_points")
    if src.shape != dst.shape:
        raise DegenerateInput(f"point lists differ in length: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise DegenerateInput(f"need at least 3 pairs to fit a rigid transform, got {len(src)}")

    if weights is None:
        w = np.full(len(src), 1.0 / len(src))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != len(src) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DegenerateInput("weights must be finite, non-negative and one per pair")
        if np.count_nonzero(w) < 3:
            raise DegenerateInput("fewer than 3 pairs carry positive weight")
        w = w / w.sum()

    src_mean = w @ src
    dst_mean = w @ dst
    src_c = src - src_mean
    dst_c = dst - dst_mean
    covariance = (src_c * w[:, None]).T @ dst_c

    u, singular, vt = np.linalg.svd(covariance)
    if singular[0] <= 0.0 or singular[1] <= RANK_TOLERANCE * singular[0]:
        raise DegenerateInput("points are collinear or coincident (cross-covariance rank < 2)")

    # reflection fix on the smallest singular direction
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    if sign == 0:
        sign = 1.0
    rotation = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    translation = dst_mean - rotation @ src_mean
    return RigidTransform(rotation, translation)


def residuals(transform: RigidTransform, src_points, dst_points) -> np.ndarray:
    """Per-pair |R p + t - q|"""
    return np.linalg.norm(transform.apply(src_points) - _as_points(dst_points), axis=1)
