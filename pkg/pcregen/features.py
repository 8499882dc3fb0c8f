"""
Features - Weak handcrafted point descriptors and external feature I/O

The descriptor is a simplified angular histogram in the FPFH family: each
point's neighbourhood contributes three pair angles (alpha, phi, theta) that
are binned into 11 bins apiece and L1-normalized into a 33-bin vector.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union
import logging
import struct

import numpy as np

from .errors import DimensionMismatch, InvalidGeometry, ParseError, TooFewPoints
from .geometry import PointCloud, SpatialIndex
from .parallel import parallel_map


logger = logging.getLogger(__name__)

DESCRIPTOR_BINS = 11
DESCRIPTOR_DIM = 3 * DESCRIPTOR_BINS
MIN_DESCRIPTOR_NEIGHBORS = 5
MIN_CLOUD_POINTS = 10
_HEADER = struct.Struct("<II")


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """One D-dimensional descriptor per point"""

    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        if vectors.ndim == 1:
            vectors = vectors.reshape(-1, 1)
        if vectors.ndim != 2 or vectors.shape[1] < 1:
            raise InvalidGeometry(f"feature vectors must have shape (N, D>=1), got {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise InvalidGeometry("feature vectors contain NaN or Inf")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def for_cloud(cls, cloud: PointCloud, vectors) -> "FeatureSet":
        features = cls(vectors)
        if len(features) != len(cloud):
            raise InvalidGeometry(
                f"feature count {len(features)} does not match cloud size {len(cloud)}"
            )
        return features

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def subset(self, indices) -> "FeatureSet":
        return FeatureSet(self.vectors[np.asarray(indices, dtype=np.int64)])

    def __repr__(self) -> str:
        return f"FeatureSet(n={len(self)}, dim={self.dimension})"


def feature_distance(a, b) -> float:
    """Euclidean distance between two descriptors"""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatch(f"descriptor dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    return float(np.linalg.norm(a - b))


def _normal_from_neighbors(points: np.ndarray, centroid: np.ndarray, position: np.ndarray) -> np.ndarray:
    if len(points) < 3:
        return np.zeros(3)
    covariance = np.cov(points.T, bias=True)
    _, eigenvectors = np.linalg.eigh(covariance)
    normal = eigenvectors[:, 0]
    if np.dot(normal, centroid - position) < 0:
        normal = -normal
    return normal


def estimate_normals(
    cloud: PointCloud,
    radius: float,
    neighborhoods: Optional[List[np.ndarray]] = None,
) -> np.ndarray:
    """
    Per-point unit normals from the covariance of each radius neighbourhood

    The smallest-eigenvalue eigenvector is oriented toward the cloud centroid.
    Points with fewer than three neighbours (self included) get a zero normal.
    """
    if len(cloud) == 0:
        return np.zeros((0, 3))
    if neighborhoods is None:
        neighborhoods = SpatialIndex(cloud).radius_neighbors_batch(cloud.points, radius)
    centroid = cloud.centroid()
    points = cloud.points
    return np.array([
        _normal_from_neighbors(points[neighbors], centroid, points[i])
        for i, neighbors in enumerate(neighborhoods)
    ])


def _pair_angle_histogram(
    index: int,
    neighbors: np.ndarray,
    points: np.ndarray,
    normals: np.ndarray,
) -> np.ndarray:
    others = neighbors[neighbors != index]
    if len(others) < MIN_DESCRIPTOR_NEIGHBORS or not np.any(normals[index]):
        return np.zeros(DESCRIPTOR_DIM)
    others = others[np.any(normals[others] != 0.0, axis=1)]
    offsets = points[others] - points[index]
    lengths = np.linalg.norm(offsets, axis=1)
    keep = lengths > 0.0
    if not np.any(keep):
        return np.zeros(DESCRIPTOR_DIM)
    others, offsets, lengths = others[keep], offsets[keep], lengths[keep]
    directions = offsets / lengths[:, None]

    # Darboux frame anchored at the query point
    u = normals[index]
    v = np.cross(u, directions)
    v_norm = np.linalg.norm(v, axis=1)
    usable = v_norm > 1e-12
    if not np.any(usable):
        return np.zeros(DESCRIPTOR_DIM)
    v = v[usable] / v_norm[usable][:, None]
    w = np.cross(u, v)
    neighbor_normals = normals[others[usable]]

    alpha = np.einsum("ij,ij->i", v, neighbor_normals)
    phi = directions[usable] @ u
    theta = np.arctan2(np.einsum("ij,ij->i", w, neighbor_normals), neighbor_normals @ u)

    histogram = np.concatenate([
        np.histogram(np.clip(alpha, -1.0, 1.0), bins=DESCRIPTOR_BINS, range=(-1.0, 1.0))[0],
        np.histogram(np.clip(phi, -1.0, 1.0), bins=DESCRIPTOR_BINS, range=(-1.0, 1.0))[0],
        np.histogram(theta, bins=DESCRIPTOR_BINS, range=(-np.pi, np.pi))[0],
    ]).astype(np.float64)
    return histogram / histogram.sum()


def compute_weak_descriptor(
    cloud: PointCloud,
    support_radius: float,
    workers: Optional[int] = 1,
) -> FeatureSet:
    """
    Compute the 33-bin angular-histogram descriptor for every point

    Args:
        cloud: Input cloud with at least 10 points
        support_radius: Neighbourhood radius in meters
        workers: Thread bound for the per-point map (None reads REGOR_THREADS)

    Returns:
        FeatureSet aligned with the cloud; points with fewer than 5 neighbours
        get the zero vector
    """
    if len(cloud) < MIN_CLOUD_POINTS:
        raise TooFewPoints(f"descriptor needs at least {MIN_CLOUD_POINTS} points, got {len(cloud)}")
    if support_radius <= 0:
        raise InvalidGeometry("support_radius must be > 0")

    neighborhoods = SpatialIndex(cloud).radius_neighbors_batch(cloud.points, support_radius)
    normals = estimate_normals(cloud, support_radius, neighborhoods)
    points = cloud.points

    vectors = parallel_map(
        lambda i: _pair_angle_histogram(i, neighborhoods[i], points, normals),
        range(len(cloud)),
        workers,
    )
    features = FeatureSet.for_cloud(cloud, np.vstack(vectors))
    empty = int(np.count_nonzero(~np.any(features.vectors, axis=1)))
    logger.debug(f"Computed {len(features)} descriptors ({empty} zero vectors) at r={support_radius}")
    return features


def write_feature_file(path: Union[str, Path], features: FeatureSet):
    """Write `u32 N, u32 D` then N*D little-endian float32 values, row-major"""
    path = Path(path)
    body = np.ascontiguousarray(features.vectors, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(len(features), features.dimension))
        f.write(body.tobytes())


def read_feature_file(path: Union[str, Path]) -> FeatureSet:
    """Read the binary feature format written by `write_feature_file`"""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError("feature file shorter than its header", str(path))
    count, dimension = _HEADER.unpack_from(data, 0)
    if dimension < 1:
        raise ParseError(f"feature dimension must be >= 1, got {dimension}", str(path))
    expected = _HEADER.size + 4 * count * dimension
    if len(data) != expected:
        raise ParseError(
            f"feature file holds {len(data)} bytes, header promises {expected}", str(path)
        )
    vectors = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, dimension)
    return FeatureSet(vectors.astype(np.float64))
