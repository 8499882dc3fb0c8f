"""
Synthetic - Structured registration scenes with a known ground-truth pose
Stand-in for extreme-outlier benchmark pairs at desk scale
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, NamedTuple, Optional, Tuple
import logging
import math

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidSpec
from .evaluation import GroundTruth
from .geometry import CorrespondenceSet, PointCloud, RigidTransform


logger = logging.getLogger(__name__)

PRIMITIVE_COUNT = 6
MIN_SCENE_POINTS = 10
# wrong-pair draws per attempt batch, and attempt batches before giving up
_OUTLIER_BATCH = 4096
_OUTLIER_ATTEMPTS = 64


@dataclass
class SceneSpec:
    """
    Parameters of one synthetic scene pair

    Args:
        point_count: Source cloud size
        overlap_fraction: Share of source points seen again in the target, in (0, 1]
        noise_sigma: Per-axis Gaussian noise on target overlap points, meters
        outlier_ratio: Share of wrong pairs in G0, in [0, 1)
        initial_pair_count: |G0|
        transform_magnitude: (max rotation degrees, max translation meters)
        rng_seed: Non-negative seed; equal seeds give identical scenes
        scene_scale: Edge length of the scene cube in meters
        inlier_tolerance: Ground-truth residual bound of an inlier (0.1 * scale when None)
    """

    point_count: int = 2000
    overlap_fraction: float = 0.7
    noise_sigma: float = 0.005
    outlier_ratio: float = 0.9
    initial_pair_count: int = 500
    transform_magnitude: Tuple[float, float] = (45.0, 0.5)
    rng_seed: int = 0
    scene_scale: float = 1.0
    inlier_tolerance: Optional[float] = None

    def __post_init__(self):
        self.transform_magnitude = tuple(self.transform_magnitude)

    @property
    def tolerance(self) -> float:
        if self.inlier_tolerance is None:
            return 0.1 * self.scene_scale
        return self.inlier_tolerance

    @property
    def true_pair_count(self) -> int:
        """ceil((1 - outlier_ratio) * initial_pair_count), float noise rounded away"""
        return int(math.ceil(round((1.0 - self.outlier_ratio) * self.initial_pair_count, 9)))

    def validate(self) -> Tuple[bool, Optional[str]]:
        if isinstance(self.point_count, bool) or not isinstance(self.point_count, int) \
                or self.point_count < MIN_SCENE_POINTS:
            return False, f"point_count must be an integer >= {MIN_SCENE_POINTS}, got {self.point_count!r}"
        if not 0 < self.overlap_fraction <= 1:
            return False, f"overlap_fraction must lie in (0, 1], got {self.overlap_fraction}"
        if not self.noise_sigma >= 0:
            return False, f"noise_sigma must be >= 0, got {self.noise_sigma}"
        if not 0 <= self.outlier_ratio < 1:
            return False, f"outlier_ratio must lie in [0, 1), got {self.outlier_ratio}"
        if isinstance(self.initial_pair_count, bool) or not isinstance(self.initial_pair_count, int) \
                or self.initial_pair_count < 1:
            return False, f"initial_pair_count must be a positive integer, got {self.initial_pair_count!r}"
        if len(self.transform_magnitude) != 2 or min(self.transform_magnitude) < 0:
            return False, "transform_magnitude must be two non-negative numbers (degrees, meters)"
        if self.transform_magnitude[0] > 180:
            return False, "maximum rotation cannot exceed 180 degrees"
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            return False, f"rng_seed must be a non-negative integer, got {self.rng_seed!r}"
        if not self.scene_scale > 0:
            return False, f"scene_scale must be > 0, got {self.scene_scale}"
        if not self.tolerance > 0:
            return False, f"inlier_tolerance must be > 0, got {self.tolerance}"
        overlap = int(round(self.overlap_fraction * self.point_count))
        if self.true_pair_count > overlap:
            return False, f"{self.true_pair_count} true pairs requested but only {overlap} overlap points"
        return True, None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["transform_magnitude"] = list(self.transform_magnitude)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpec(f"unknown scene keys: {unknown}")
        return cls(**data)


class SyntheticScene(NamedTuple):
    P: PointCloud
    Q: PointCloud
    T_gt: RigidTransform
    G0: CorrespondenceSet
    gt: GroundTruth
    partners: np.ndarray  # Q index of each P point, -1 outside the overlap


def _primitive(kind: int, count: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Points on one plane patch (0), curved patch (1) or ellipsoid surface (2)"""
    if kind == 2:
        directions = rng.normal(size=(count, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        local = directions * rng.uniform(0.05, 0.15, size=3) * scale
    else:
        uv = rng.uniform(-0.2, 0.2, size=(count, 2)) * scale
        height = np.zeros(count)
        if kind == 1:
            a, b = rng.uniform(-3.0, 3.0, size=2)
            height = (a * uv[:, 0] ** 2 + b * uv[:, 1] ** 2) / scale
        local = np.column_stack([uv, height])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rotation = Rotation.from_rotvec(axis * rng.uniform(0.0, np.pi))
    center = rng.uniform(-0.35, 0.35, size=3) * scale
    return rotation.apply(local) + center


def structured_points(count: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Union of plane patches, curved patches and ellipsoid shells inside a cube of side `scale`"""
    if count == 0:
        return np.zeros((0, 3))
    sizes = rng.multinomial(count, np.full(PRIMITIVE_COUNT, 1.0 / PRIMITIVE_COUNT))
    blocks = [_primitive(i % 3, int(n), scale, rng) for i, n in enumerate(sizes) if n > 0]
    return np.vstack(blocks)


def random_transform(max_rotation_deg: float, max_translation: float, rng: np.random.Generator) -> RigidTransform:
    """Rotation about a random axis by up to `max_rotation_deg`, translation up to `max_translation`"""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, max_rotation_deg))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    translation = direction * rng.uniform(0.0, max_translation)
    return RigidTransform(Rotation.from_rotvec(axis * angle).as_matrix(), translation)


def _wrong_pairs(
    count: int,
    P: PointCloud,
    Q: PointCloud,
    T_gt: RigidTransform,
    tolerance: float,
    taken: set,
    rng: np.random.Generator,
) -> np.ndarray:
    chosen = []
    for _ in range(_OUTLIER_ATTEMPTS):
        if len(chosen) == count:
            break
        sources = rng.integers(0, len(P), size=_OUTLIER_BATCH)
        targets = rng.integers(0, len(Q), size=_OUTLIER_BATCH)
        distances = np.linalg.norm(T_gt.apply(P.points[sources]) - Q.points[targets], axis=1)
        for source, target in zip(sources[distances > tolerance], targets[distances > tolerance]):
            key = (int(source), int(target))
            if key in taken:
                continue
            taken.add(key)
            chosen.append(key)
            if len(chosen) == count:
                break
    if len(chosen) < count:
        raise InvalidSpec(f"could not draw {count} wrong pairs beyond the inlier tolerance")
    return np.array(chosen, dtype=np.int64).reshape(-1, 2)


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """
    Build a source/target pair with known pose and a G0 of exact outlier ratio

    The target holds the overlap share of the source moved by the ground-truth
    transform with Gaussian noise, plus structured clutter on the non-overlap
    side. True G0 pairs are overlap points whose noisy residual is at most
    noise_sigma (the smallest residuals when too few qualify); wrong pairs have
    residuals beyond the inlier tolerance.
    """
    is_valid, error = spec.validate()
    if not is_valid:
        raise InvalidSpec(error)
    rng = np.random.default_rng(spec.rng_seed)
    scale = spec.scene_scale

    source = structured_points(spec.point_count, scale, rng)
    source = source[rng.permutation(len(source))]
    P = PointCloud(source)

    # overlap is the far side of a random cut plane
    cut = rng.normal(size=3)
    cut /= np.linalg.norm(cut)
    projection = source @ cut
    overlap_count = int(round(spec.overlap_fraction * len(source)))
    order = np.argsort(-projection, kind="stable")
    overlap = np.sort(order[:overlap_count])
    threshold = projection[order[overlap_count - 1]]

    T_gt = random_transform(spec.transform_magnitude[0], spec.transform_magnitude[1], rng)
    moved = T_gt.apply(source[overlap]) + rng.normal(0.0, spec.noise_sigma, size=(overlap_count, 3))

    clutter = structured_points(len(source) - overlap_count, scale, rng)
    if len(clutter):
        depth = clutter @ cut - threshold
        beyond = depth >= 0
        clutter[beyond] -= 2.0 * (depth[beyond] + 1e-3 * scale)[:, None] * cut
        clutter = T_gt.apply(clutter)

    target = np.vstack([moved, clutter.reshape(-1, 3)])
    shuffle = rng.permutation(len(target))
    Q = PointCloud(target[shuffle])
    position_of = np.empty(len(target), dtype=np.int64)
    position_of[shuffle] = np.arange(len(target))
    partners = np.full(len(source), -1, dtype=np.int64)
    partners[overlap] = position_of[np.arange(overlap_count)]

    residual = np.linalg.norm(T_gt.apply(source[overlap]) - Q.points[partners[overlap]], axis=1)
    n_true = spec.true_pair_count
    eligible = overlap[residual <= spec.noise_sigma]
    if len(eligible) < n_true:
        logger.warning(
            f"Only {len(eligible)} overlap points within noise_sigma; "
            f"using the {n_true} smallest residuals for true pairs"
        )
        eligible = np.sort(overlap[np.argsort(residual, kind="stable")[:n_true]])
    true_sources = np.sort(rng.choice(eligible, size=n_true, replace=False))
    true_pairs = np.column_stack([true_sources, partners[true_sources]])

    gt = GroundTruth(T_gt, spec.tolerance)
    taken = {(int(s), int(t)) for s, t in true_pairs}
    wrong = _wrong_pairs(spec.initial_pair_count - n_true, P, Q, T_gt, gt.inlier_tolerance, taken, rng)
    G0 = CorrespondenceSet.from_pairs(np.vstack([true_pairs, wrong]))

    logger.debug(
        f"Scene seed={spec.rng_seed}: |P|={len(P)}, |Q|={len(Q)}, |G0|={len(G0)}, true={n_true}"
    )
    return SyntheticScene(P, Q, T_gt, G0, gt, partners)
