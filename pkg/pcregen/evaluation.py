"""
Evaluation - Registration metrics against a known ground-truth pose
RR, RE, TE, IP, IN, INR and FMR, plus the mutual-matching baseline
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple
import logging

import numpy as np

from .errors import DegenerateInput, EmptyDataset, InvalidGeometry
from .features import FeatureSet
from .geometry import Correspondence, CorrespondenceSet, PointCloud, RigidTransform, fit_rigid_transform
from .matching import mutual_match


logger = logging.getLogger(__name__)

# initial inlier ratio a pair needs to count toward feature-match recall
FMR_INLIER_RATIO = 0.05


@dataclass(frozen=True)
class GroundTruth:
    transform: RigidTransform
    inlier_tolerance: float = 0.1

    def __post_init__(self):
        if not self.inlier_tolerance > 0:
            raise InvalidGeometry(f"inlier_tolerance must be > 0, got {self.inlier_tolerance}")


@dataclass
class MetricThresholds:
    """Success thresholds: rotation in degrees, translation in meters (both strict)"""

    rotation_deg: float = 15.0
    translation: float = 0.30

    def validate(self) -> Tuple[bool, Optional[str]]:
        if not self.rotation_deg > 0:
            return False, f"rotation_deg must be > 0, got {self.rotation_deg}"
        if not self.translation > 0:
            return False, f"translation must be > 0, got {self.translation}"
        return True, None

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class PairMetrics:
    """
    Metrics of one registered pair

    `inr` is final inliers over initial inliers, or the raw final inlier
    count when the initial set holds no inlier.
    """

    re: float
    te: float
    ip: float
    in_count: int
    inr: float
    success: bool
    initial_inliers: int = 0
    initial_ip: float = 0.0
    final_count: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


class DatasetSummary(NamedTuple):
    pair_count: int
    rr: float
    re_mean: Optional[float]
    te_mean: Optional[float]
    ip_mean: float
    in_mean: float
    inr_mean: float
    fmr: float

    def to_dict(self) -> Dict:
        return self._asdict()


def rotation_error(R_hat, R_gt) -> float:
    """Geodesic angle between two rotations, in degrees"""
    R_hat = np.asarray(R_hat, dtype=np.float64)
    R_gt = np.asarray(R_gt, dtype=np.float64)
    cosine = (np.trace(R_hat.T @ R_gt) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))))


def translation_error(t_hat, t_gt) -> float:
    return float(np.linalg.norm(np.asarray(t_hat, dtype=np.float64) - np.asarray(t_gt, dtype=np.float64)))


def is_inlier(source_point, target_point, gt: GroundTruth) -> bool:
    """|R_gt p + t_gt - q| <= inlier tolerance"""
    mapped = gt.transform.apply(np.asarray(source_point, dtype=np.float64))[0]
    return bool(np.linalg.norm(mapped - np.asarray(target_point, dtype=np.float64)) <= gt.inlier_tolerance)


def correspondence_is_inlier(pair: Correspondence, P: PointCloud, Q: PointCloud, gt: GroundTruth) -> bool:
    """is_inlier on the endpoints of one index pair"""
    source_index, target_index = pair
    if not (0 <= source_index < len(P) and 0 <= target_index < len(Q)):
        raise InvalidGeometry(f"correspondence {tuple(pair)} out of range for clouds of {len(P)} and {len(Q)} points")
    return is_inlier(P.points[source_index], Q.points[target_index], gt)


def inlier_mask(correspondences: CorrespondenceSet, P: PointCloud, Q: PointCloud, gt: GroundTruth) -> np.ndarray:
    if len(correspondences) == 0:
        return np.zeros(0, dtype=bool)
    src, dst = correspondences.positions(P, Q)
    return np.linalg.norm(gt.transform.apply(src) - dst, axis=1) <= gt.inlier_tolerance


def count_inliers(correspondences: CorrespondenceSet, P: PointCloud, Q: PointCloud, gt: GroundTruth) -> int:
    return int(np.count_nonzero(inlier_mask(correspondences, P, Q, gt)))


def pair_metrics(
    G_init: CorrespondenceSet,
    G_final: CorrespondenceSet,
    P: PointCloud,
    Q: PointCloud,
    T_hat: RigidTransform,
    gt: GroundTruth,
    thresholds: MetricThresholds,
) -> PairMetrics:
    """
    Score one registration result

    Args:
        G_init: Correspondences the pipeline started from
        G_final: Correspondences it returned
        P, Q: Source and target clouds
        T_hat: Estimated transform
        gt: Ground-truth pose and inlier tolerance
        thresholds: Success thresholds (RE and TE both strictly below)
    """
    re = rotation_error(T_hat.rotation, gt.transform.rotation)
    te = translation_error(T_hat.translation, gt.transform.translation)
    initial_inliers = count_inliers(G_init, P, Q, gt)
    in_count = count_inliers(G_final, P, Q, gt)
    return PairMetrics(
        re=re,
        te=te,
        ip=in_count / len(G_final) if len(G_final) else 0.0,
        in_count=in_count,
        inr=in_count / initial_inliers if initial_inliers else float(in_count),
        success=bool(te < thresholds.translation and re < thresholds.rotation_deg),
        initial_inliers=initial_inliers,
        initial_ip=initial_inliers / len(G_init) if len(G_init) else 0.0,
        final_count=len(G_final),
    )


def feature_match_recall(per_pair: Sequence[PairMetrics], ratio: float = FMR_INLIER_RATIO) -> float:
    """Fraction of pairs whose initial inlier ratio reaches `ratio`"""
    if not per_pair:
        raise EmptyDataset("feature-match recall over zero pairs")
    return sum(1 for m in per_pair if m.initial_ip >= ratio) / len(per_pair)


def dataset_metrics(per_pair: Sequence[PairMetrics]) -> DatasetSummary:
    """RR over all pairs; RE/TE means over successful pairs; IP/IN/INR means over all pairs"""
    if not per_pair:
        raise EmptyDataset("dataset metrics over zero pairs")
    successes = [m for m in per_pair if m.success]
    return DatasetSummary(
        pair_count=len(per_pair),
        rr=len(successes) / len(per_pair),
        re_mean=float(np.mean([m.re for m in successes])) if successes else None,
        te_mean=float(np.mean([m.te for m in successes])) if successes else None,
        ip_mean=float(np.mean([m.ip for m in per_pair])),
        in_mean=float(np.mean([m.in_count for m in per_pair])),
        inr_mean=float(np.mean([m.inr for m in per_pair])),
        fmr=feature_match_recall(per_pair),
    )


def baseline_register(
    P: PointCloud,
    Q: PointCloud,
    P_feats: FeatureSet,
    Q_feats: FeatureSet,
) -> Tuple[CorrespondenceSet, RigidTransform]:
    """Strict mutual matching on full clouds followed by one SVD fit over every mutual pair"""
    matches = mutual_match(P_feats, Q_feats)
    try:
        src, dst = matches.positions(P, Q)
        transform = fit_rigid_transform(src, dst)
    except DegenerateInput as e:
        logger.warning(f"Baseline fit failed ({e}); using identity")
        transform = RigidTransform.identity()
    return matches, transform


def summarize_results(records: List[Dict]) -> DatasetSummary:
    """Dataset summary from serialized PairMetrics records"""
    keys = {f for f in PairMetrics.__dataclass_fields__}
    return dataset_metrics([PairMetrics(**{k: v for k, v in r.items() if k in keys}) for r in records])
