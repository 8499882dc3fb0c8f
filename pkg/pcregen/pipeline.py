"""
Pipeline - One registration run: descriptors, regeneration, refinement
"""

from typing import Callable, NamedTuple, Optional, Tuple
import logging

from .config import RunConfig
from .errors import DegenerateInput
from .features import FeatureSet, compute_weak_descriptor
from .geometry import CorrespondenceSet, PointCloud, RigidTransform
from .refinement import po_tcd_count, refine_pose
from .regeneration import RegenerationTrace, regenerate


logger = logging.getLogger(__name__)


class RegistrationOutput(NamedTuple):
    correspondences: CorrespondenceSet
    transform: RigidTransform
    coarse_transform: RigidTransform
    trace: RegenerationTrace
    refined: bool


def prepare_features(
    P: PointCloud,
    Q: PointCloud,
    config: RunConfig,
    P_feats: Optional[FeatureSet] = None,
    Q_feats: Optional[FeatureSet] = None,
    workers: Optional[int] = None,
) -> Tuple[FeatureSet, FeatureSet]:
    """Use supplied descriptors, computing the weak descriptor for any missing side"""
    radius = config.descriptor.support_radius
    if P_feats is None:
        P_feats = compute_weak_descriptor(P, radius, workers)
    if Q_feats is None:
        Q_feats = compute_weak_descriptor(Q, radius, workers)
    return FeatureSet.for_cloud(P, P_feats.vectors), FeatureSet.for_cloud(Q, Q_feats.vectors)


def register_pair(
    P: PointCloud,
    Q: PointCloud,
    P_feats: FeatureSet,
    Q_feats: FeatureSet,
    G0: Optional[CorrespondenceSet],
    config: RunConfig,
    workers: Optional[int] = None,
    on_stage: Optional[Callable[[int, CorrespondenceSet], None]] = None,
) -> RegistrationOutput:
    """
    Regenerate correspondences, fit the pose, then refine it at point level

    Refinement is skipped (coarse pose kept) when disabled or when too few
    source points land near the target under the coarse pose.
    """
    result = regenerate(
        P, Q, P_feats, Q_feats, G0,
        config.effective_schedule(), config.rng_seed, config.ablation, workers, on_stage,
    )
    transform, refined = result.transform, False
    if config.refine and not result.trace.collapsed:
        try:
            transform = refine_pose(result.transform, P, Q, config.refinement)
            refined = True
            logger.info(
                f"Refined pose: chamfer count "
                f"{po_tcd_count(result.transform, P, Q, config.refinement.sigma_d)} -> "
                f"{po_tcd_count(transform, P, Q, config.refinement.sigma_d)}"
            )
        except DegenerateInput as e:
            logger.warning(f"Skipping refinement: {e}")
    return RegistrationOutput(result.correspondences, transform, result.transform, result.trace, refined)
