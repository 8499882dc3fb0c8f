"""
Refinement - Point-level pose refinement on the truncated chamfer count
"""

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple
import logging

import numpy as np

from .errors import DegenerateInput, EmptyCloud
from .geometry import PointCloud, RigidTransform, SpatialIndex, fit_rigid_transform


logger = logging.getLogger(__name__)


@dataclass
class RefinementParams:
    """
    Args:
        sigma_d: Truncation radius in meters
        max_rounds: Upper bound on refit rounds
        convergence_eps: Stop once rotation angle (rad) plus translation change (m) falls below this
    """

    sigma_d: float = 0.1
    max_rounds: int = 10
    convergence_eps: float = 1e-4

    def validate(self) -> Tuple[bool, Optional[str]]:
        if not self.sigma_d > 0:
            return False, f"sigma_d must be > 0, got {self.sigma_d}"
        if isinstance(self.max_rounds, bool) or not isinstance(self.max_rounds, int) or self.max_rounds < 1:
            return False, f"max_rounds must be a positive integer, got {self.max_rounds!r}"
        if not self.convergence_eps > 0:
            return False, f"convergence_eps must be > 0, got {self.convergence_eps}"
        return True, None

    def to_dict(self) -> Dict:
        return asdict(self)


def _truncated_matches(transform: RigidTransform, P: PointCloud, Q_index: SpatialIndex, sigma_d: float):
    nearest, distances = Q_index.nearest_neighbors(transform.apply(P.points))
    return nearest, distances < sigma_d


def po_tcd_count(
    transform: RigidTransform,
    P: PointCloud,
    Q: PointCloud,
    sigma_d: float,
    Q_index: Optional[SpatialIndex] = None,
) -> int:
    """Number of source points landing strictly within sigma_d of the target cloud"""
    if len(P) == 0 or len(Q) == 0:
        raise EmptyCloud("truncated chamfer count needs two non-empty clouds")
    Q_index = Q_index if Q_index is not None else SpatialIndex(Q)
    _, within = _truncated_matches(transform, P, Q_index, sigma_d)
    return int(np.count_nonzero(within))


def _pose_change(previous: RigidTransform, current: RigidTransform) -> float:
    delta = current.compose(previous.inverse())
    return delta.rotation_angle() + float(np.linalg.norm(current.translation - previous.translation))


def refine_pose(
    T0: RigidTransform,
    P: PointCloud,
    Q: PointCloud,
    params: RefinementParams,
    Q_index: Optional[SpatialIndex] = None,
) -> RigidTransform:
    """
    Truncated ICP ascent on the point-level chamfer count

    Every round pairs each source point with its nearest target point, keeps
    the pairs closer than sigma_d and refits. The visited pose with the
    highest count is returned (ties go to the later pose), so the count of
    the result is never below that of T0.

    Raises:
        DegenerateInput: fewer than three truncated pairs under T0
    """
    if len(P) == 0 or len(Q) == 0:
        raise EmptyCloud("refinement needs two non-empty clouds")
    Q_index = Q_index if Q_index is not None else SpatialIndex(Q)

    pose = T0
    nearest, within = _truncated_matches(pose, P, Q_index, params.sigma_d)
    count = int(np.count_nonzero(within))
    if count < 3:
        raise DegenerateInput(f"only {count} source points lie within sigma_d of the target under T0")
    best, best_count = pose, count

    for round_index in range(params.max_rounds):
        if count < 3:
            break
        try:
            candidate = fit_rigid_transform(P.points[within], Q.points[nearest[within]])
        except DegenerateInput as e:
            logger.debug(f"Refinement stopped at round {round_index}: {e}")
            break
        change = _pose_change(pose, candidate)
        pose = candidate
        nearest, within = _truncated_matches(pose, P, Q_index, params.sigma_d)
        count = int(np.count_nonzero(within))
        logger.debug(f"Refinement round {round_index}: count={count}, change={change:.3e}")
        if count >= best_count:
            best, best_count = pose, count
        if change < params.convergence_eps:
            break
    return best
