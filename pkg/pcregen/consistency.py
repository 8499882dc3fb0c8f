"""
Consistency - Rigidity compatibility between correspondences
First-order pairwise test, center-aware three-point test, local region score
and second-order counts
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, EmptyInput, InvalidGeometry, TooFewConsistent


logger = logging.getLogger(__name__)

# a positioned pair is (source point, target point)
PositionedPair = Tuple[Sequence[float], Sequence[float]]

MIN_SELECTED = 3
SEED_FRACTION = 0.2


@dataclass
class ConsistencyParams:
    """
    Tolerances shared by local and global correction

    Args:
        sigma: Distance-difference tolerance in meters
        sigma_d: Correction radius in meters
        a: Inlier-ratio threshold of the local score, in (0, 1)
    """

    sigma: float = 0.1
    sigma_d: float = 0.1
    a: float = 0.5

    def validate(self) -> Tuple[bool, Optional[str]]:
        if not self.sigma > 0:
            return False, f"sigma must be > 0, got {self.sigma}"
        if not self.sigma_d > 0:
            return False, f"sigma_d must be > 0, got {self.sigma_d}"
        if not 0 < self.a < 1:
            return False, f"a must lie in (0, 1), got {self.a}"
        return True, None

    def ensure_valid(self) -> "ConsistencyParams":
        is_valid, error = self.validate()
        if not is_valid:
            raise ConfigError(error)
        return self

    def to_dict(self) -> Dict:
        return asdict(self)


def _positioned(pair: PositionedPair) -> Tuple[np.ndarray, np.ndarray]:
    source, target = pair
    return np.asarray(source, dtype=np.float64), np.asarray(target, dtype=np.float64)


def pairwise_consistency(g_i: PositionedPair, g_j: PositionedPair, sigma: float) -> int:
    """1 iff the source gap and the target gap of two pairs differ by at most sigma"""
    p_i, q_i = _positioned(g_i)
    p_j, q_j = _positioned(g_j)
    gap = abs(np.linalg.norm(p_i - p_j) - np.linalg.norm(q_i - q_j))
    return int(gap <= sigma)


def _distance_gaps(src_points: np.ndarray, dst_points: np.ndarray) -> np.ndarray:
    src_points = np.asarray(src_points, dtype=np.float64).reshape(-1, 3)
    dst_points = np.asarray(dst_points, dtype=np.float64).reshape(-1, 3)
    if src_points.shape != dst_points.shape:
        raise InvalidGeometry("source and target coordinate lists differ in length")
    return np.abs(cdist(src_points, src_points) - cdist(dst_points, dst_points))


def pairwise_matrix(src_points, dst_points, sigma: float) -> np.ndarray:
    """First-order consistency matrix of a positioned set (int64, unit diagonal)"""
    matrix = (_distance_gaps(src_points, dst_points) <= sigma).astype(np.int64)
    np.fill_diagonal(matrix, 1)
    return matrix


def ctc_score(g_j: PositionedPair, g_k: PositionedPair, center: PositionedPair, params: ConsistencyParams) -> int:
    """Both pairs agree with the center at sigma, or with each other at sigma / 2"""
    via_center = pairwise_consistency(g_j, center, params.sigma) and pairwise_consistency(center, g_k, params.sigma)
    direct = pairwise_consistency(g_j, g_k, params.sigma / 2.0)
    return int(bool(via_center) or bool(direct))


def ctc_matrix(src_points, dst_points, center: PositionedPair, params: ConsistencyParams) -> np.ndarray:
    """
    Center-aware three-point consistency matrix of a local set

    Args:
        src_points: (N, 3) source coordinates of the local correspondences
        dst_points: (N, 3) target coordinates, row-aligned
        center: The seed pair the region was grown around
        params: Tolerances (sigma for the center test, sigma / 2 for the direct test)

    Returns:
        Symmetric N x N int64 matrix with unit diagonal
    """
    src_points = np.asarray(src_points, dtype=np.float64).reshape(-1, 3)
    dst_points = np.asarray(dst_points, dtype=np.float64).reshape(-1, 3)
    center_p, center_q = _positioned(center)
    to_center = np.abs(
        np.linalg.norm(src_points - center_p, axis=1) - np.linalg.norm(dst_points - center_q, axis=1)
    ) <= params.sigma
    strict = _distance_gaps(src_points, dst_points) <= params.sigma / 2.0
    matrix = (np.outer(to_center, to_center) | strict).astype(np.int64)
    np.fill_diagonal(matrix, 1)
    return matrix


def local_score(matrix: np.ndarray, a: float) -> float:
    """Max column sum of the score matrix divided by a * N"""
    matrix = np.asarray(matrix)
    if matrix.size == 0:
        raise EmptyInput("local score of an empty matrix")
    if not 0 < a < 1:
        raise InvalidGeometry(f"a must lie in (0, 1), got {a}")
    column_norm = float(np.abs(matrix).sum(axis=0).max())
    return column_norm / (a * matrix.shape[0])


def second_order_matrix(src_points, dst_points, sigma: float) -> np.ndarray:
    """
    Second-order consistency: S * (S @ S) with S the first-order matrix

    Entry (j, k) counts correspondences consistent with both j and k, and is
    zero where j and k are not themselves consistent. The diagonal is 1.
    """
    first = pairwise_matrix(src_points, dst_points, sigma)
    as_float = first.astype(np.float64)
    common = np.rint(as_float @ as_float).astype(np.int64)
    matrix = first * common
    np.fill_diagonal(matrix, 1)
    return matrix


def default_seed_count(count: int) -> int:
    """max(3, ceil(0.2 N))"""
    return max(MIN_SELECTED, int(math.ceil(SEED_FRACTION * count)))


def select_top_consistent(matrix: np.ndarray, count: int) -> List[int]:
    """
    Indices of the correspondences with the highest row sums

    Only rows with mutual support (row sum > 1) are eligible; ties go to the
    smaller index.

    Raises:
        TooFewConsistent: fewer than three eligible rows
    """
    if count < MIN_SELECTED:
        raise InvalidGeometry(f"count must be >= {MIN_SELECTED}, got {count}")
    row_sums = np.asarray(matrix).sum(axis=1)
    eligible = np.flatnonzero(row_sums > 1)
    if len(eligible) < MIN_SELECTED:
        raise TooFewConsistent(
            f"only {len(eligible)} correspondences have mutual support (need {MIN_SELECTED})"
        )
    order = eligible[np.argsort(-row_sums[eligible], kind="stable")]
    return [int(i) for i in order[:count]]
