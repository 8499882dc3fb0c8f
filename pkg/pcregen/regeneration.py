"""
Regeneration - Progressive correspondence regeneration driver
Seed sampling, local grouping, local rematching, local and global correction

Each stage of the pipeline is a state of `PipelineStage`; the driver records
every transition in a state history and keeps a timestamped execution trace,
in the manner of a finite state machine agent.
"""

from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union
import json
import logging
import time

import numpy as np

from .consistency import (
    ConsistencyParams,
    ctc_matrix,
    default_seed_count,
    local_score,
    second_order_matrix,
    select_top_consistent,
)
from .errors import (
    ConfigError,
    DegenerateInput,
    EmptyInput,
    InvalidGeometry,
    PipelineCollapse,
    TooFewConsistent,
)
from .features import FeatureSet
from .geometry import (
    Correspondence,
    CorrespondenceSet,
    PointCloud,
    RigidTransform,
    SpatialIndex,
    fit_rigid_transform,
    residuals,
)
from .matching import generalized_mutual_match, mutual_match, nn_correspondences
from .parallel import parallel_map


logger = logging.getLogger(__name__)

SeedLike = Union[int, Sequence[int]]

MIN_REGION_POINTS = 5
# random streams below a stage seed
_SAMPLING_STREAM = 0
_REGION_STREAM = 1
_GLOBAL_STREAM = 2
_SCREENING_STREAM = 3

MATCHING_CHOICES = ("nn", "mm", "gmm")
CONSISTENCY_CHOICES = ("sc", "ctc")
STAGE_CHOICES = ("local_only", "global_only", "both")


class PipelineStage(Enum):
    """States the regeneration driver moves through"""
    IDLE = "idle"
    SCREENING = "screening"
    SAMPLING = "sampling"
    GROUPING = "grouping"
    REMATCHING = "rematching"
    LOCAL_CORRECTION = "local_correction"
    MERGING = "merging"
    GLOBAL_CORRECTION = "global_correction"
    COMPLETED = "completed"
    COLLAPSED = "collapsed"


# (from, to, label) edges of the driver, used for diagrams
PIPELINE_FLOW: List[Tuple[PipelineStage, PipelineStage, str]] = [
    (PipelineStage.IDLE, PipelineStage.SCREENING, "initial correspondences"),
    (PipelineStage.SCREENING, PipelineStage.SAMPLING, "screened set"),
    (PipelineStage.IDLE, PipelineStage.SAMPLING, "screening off"),
    (PipelineStage.SAMPLING, PipelineStage.GROUPING, "seeds"),
    (PipelineStage.GROUPING, PipelineStage.REMATCHING, "local regions"),
    (PipelineStage.GROUPING, PipelineStage.COLLAPSED, "no region"),
    (PipelineStage.REMATCHING, PipelineStage.LOCAL_CORRECTION, "local matches"),
    (PipelineStage.LOCAL_CORRECTION, PipelineStage.MERGING, "accepted regions"),
    (PipelineStage.LOCAL_CORRECTION, PipelineStage.COLLAPSED, "all regions rejected"),
    (PipelineStage.MERGING, PipelineStage.GLOBAL_CORRECTION, "merged set"),
    (PipelineStage.GLOBAL_CORRECTION, PipelineStage.SAMPLING, "next stage"),
    (PipelineStage.GLOBAL_CORRECTION, PipelineStage.COMPLETED, "last stage"),
]


@dataclass
class IterationSchedule:
    """
    Per-stage hyperparameters phi^t

    Stage t (0-based) uses k = round(k0 * omega_k^t) points per region side,
    radius r = r0 * omega_r^t and s = max(round(s0 * omega_s^t), s_min) seeds.
    """

    k0: int = 20
    r0: float = 1.0
    s0: int = 500
    omega_k: float = 5.0
    omega_r: float = 0.5
    omega_s: float = 0.2
    iterations: int = 4
    k_gmm: int = 3
    params: ConsistencyParams = field(default_factory=ConsistencyParams)
    s_min: int = 20
    global_cap: int = 2000
    global_hypotheses: int = 64
    screen_initial: bool = True
    bootstrap: bool = True

    def k_at(self, stage: int) -> int:
        return int(round(self.k0 * self.omega_k ** stage))

    def r_at(self, stage: int) -> float:
        return self.r0 * self.omega_r ** stage

    def s_at(self, stage: int) -> int:
        return max(int(round(self.s0 * self.omega_s ** stage)), self.s_min)

    def validate(self) -> Tuple[bool, Optional[str]]:
        for name in ("k0", "s0", "iterations", "k_gmm", "s_min", "global_cap", "global_hypotheses"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                return False, f"{name} must be a positive integer, got {value!r}"
        for name in ("r0", "omega_k", "omega_s"):
            if not getattr(self, name) > 0:
                return False, f"{name} must be > 0, got {getattr(self, name)}"
        if not 0 < self.omega_r <= 1:
            return False, f"omega_r must lie in (0, 1], got {self.omega_r}"
        if self.global_cap < 3:
            return False, "global_cap must be >= 3"
        return self.params.validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "IterationSchedule":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown schedule keys: {unknown}")
        values = dict(data)
        if "params" in values and isinstance(values["params"], dict):
            param_keys = {f.name for f in fields(ConsistencyParams)}
            bad = sorted(set(values["params"]) - param_keys)
            if bad:
                raise ConfigError(f"unknown consistency keys: {bad}")
            values["params"] = ConsistencyParams(**values["params"])
        return cls(**values)


@dataclass
class AblationConfig:
    """Switches selecting pipeline variants"""

    matching: str = "gmm"
    consistency: str = "ctc"
    stages: str = "both"
    progressive: bool = True

    def validate(self) -> Tuple[bool, Optional[str]]:
        if self.matching not in MATCHING_CHOICES:
            return False, f"matching must be one of {MATCHING_CHOICES}, got {self.matching!r}"
        if self.consistency not in CONSISTENCY_CHOICES:
            return False, f"consistency must be one of {CONSISTENCY_CHOICES}, got {self.consistency!r}"
        if self.stages not in STAGE_CHOICES:
            return False, f"stages must be one of {STAGE_CHOICES}, got {self.stages!r}"
        if not isinstance(self.progressive, bool):
            return False, f"progressive must be on/off, got {self.progressive!r}"
        return True, None

    @property
    def local_enabled(self) -> bool:
        return self.stages != "global_only"

    @property
    def global_enabled(self) -> bool:
        return self.stages != "local_only"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AblationConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown ablation keys: {unknown}")
        values = dict(data)
        progressive = values.get("progressive")
        if isinstance(progressive, str):
            if progressive.lower() not in ("on", "off"):
                raise ConfigError(f"progressive must be on/off, got {progressive!r}")
            values["progressive"] = progressive.lower() == "on"
        return cls(**values)


@dataclass(frozen=True, eq=False)
class LocalRegion:
    """
    Paired neighbourhoods grown around one seed correspondence

    `source_indices` / `target_indices` are the (capped) matching candidates;
    `target_support` is the full target-side neighbourhood used for correction.
    """

    index: int
    seed: Correspondence
    source_indices: np.ndarray
    target_indices: np.ndarray
    target_support: np.ndarray

    def __repr__(self) -> str:
        return (
            f"LocalRegion(#{self.index}, seed={tuple(self.seed)}, "
            f"src={len(self.source_indices)}, dst={len(self.target_indices)})"
        )


class LocalOutcome(NamedTuple):
    """Result of correcting one region (correspondences is None when rejected)"""
    region_index: int
    correspondences: Optional[CorrespondenceSet]
    score: Optional[float] = None
    transform: Optional[RigidTransform] = None

    @property
    def accepted(self) -> bool:
        return self.correspondences is not None


class GlobalOutcome(NamedTuple):
    """Result of global correction; `fallback` marks an unchanged input"""
    correspondences: CorrespondenceSet
    transform: Optional[RigidTransform]
    fallback: bool


@dataclass
class StageRecord:
    stage: int
    seed_count: int
    region_count: int
    accepted_regions: int
    rejected_regions: int
    merged_count: int
    output_count: int
    mean_local_score: Optional[float]
    global_fallback: bool
    wall_time: float


@dataclass
class RegenerationTrace:
    """Per-stage records plus the driver's state history and execution trace"""

    stages: List[StageRecord] = field(default_factory=list)
    ablation: Dict[str, Any] = field(default_factory=dict)
    initial_count: int = 0
    screened_count: Optional[int] = None
    final_count: int = 0
    collapsed: bool = False
    error: Optional[str] = None
    current_state: PipelineStage = PipelineStage.IDLE
    state_history: List[Tuple[PipelineStage, datetime, str]] = field(default_factory=list)
    execution_trace: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.state_history:
            self.state_history.append((self.current_state, datetime.now(), "initialized"))

    def transition(self, state: PipelineStage, reason: str, stage: Optional[int] = None):
        old_state = self.current_state
        self.current_state = state
        self.state_history.append((state, datetime.now(), f"from {old_state.value}: {reason}"))
        self.log(f"State transition: {old_state.value} -> {state.value} ({reason})", stage)

    def log(self, message: str, stage: Optional[int] = None, level: int = logging.INFO):
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S.%f")[:-3]
        label = "init" if stage is None else f"stage {stage}"
        self.execution_trace.append(f"[{timestamp}] [{label}] {message}")
        logger.log(level, f"[{label}] {message}")

    def count_curve(self) -> List[Tuple[int, int]]:
        """(stage, correspondence count) points, stage 0 being the initial set"""
        curve = [(0, self.screened_count if self.screened_count is not None else self.initial_count)]
        curve.extend((record.stage + 1, record.output_count) for record in self.stages)
        return curve

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stages": [asdict(record) for record in self.stages],
            "ablation": dict(self.ablation),
            "initial_count": self.initial_count,
            "screened_count": self.screened_count,
            "final_count": self.final_count,
            "collapsed": self.collapsed,
            "error": self.error,
            "state_history": [
                {"state": state.value, "timestamp": stamp.isoformat(), "reason": reason}
                for state, stamp, reason in self.state_history
            ],
            "execution_trace": list(self.execution_trace),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class RegenerationResult(NamedTuple):
    correspondences: CorrespondenceSet
    transform: RigidTransform
    trace: RegenerationTrace


def sample_seeds(G_prev: CorrespondenceSet, count: int, rng_seed: SeedLike) -> CorrespondenceSet:
    """Uniform sample without replacement of min(count, |G_prev|) pairs"""
    if len(G_prev) == 0:
        raise EmptyInput("cannot sample seeds from an empty correspondence set")
    if count < 1:
        raise InvalidGeometry(f"seed count must be >= 1, got {count}")
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(len(G_prev), size=min(count, len(G_prev)), replace=False)
    return G_prev.subset(np.sort(chosen))


def _downsample(indices: np.ndarray, keep: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    if len(indices) <= cap:
        return indices
    others = indices[indices != keep]
    chosen = rng.choice(others, size=cap - 1, replace=False)
    return np.sort(np.append(chosen, keep))


def group_local_regions(
    seeds: CorrespondenceSet,
    P: PointCloud,
    Q: PointCloud,
    radius: float,
    k_cap: int,
    rng_seed: int,
    stage: int = 0,
    P_index: Optional[SpatialIndex] = None,
    Q_index: Optional[SpatialIndex] = None,
) -> List[LocalRegion]:
    """
    Grow a pair of radius neighbourhoods around every seed

    Args:
        seeds: Seed correspondences
        P, Q: Source and target clouds
        radius: Region radius in meters (closed ball)
        k_cap: Maximum points kept per side (seed endpoints always retained)
        rng_seed: Base seed; region i of `stage` draws from [rng_seed, stage, i]
        stage: Stage counter mixed into the random stream
        P_index, Q_index: Prebuilt spatial indexes (built on demand)

    Returns:
        Regions whose two sides both hold at least 5 points, in seed order
    """
    if radius <= 0:
        raise InvalidGeometry("region radius must be > 0")
    if k_cap < 1:
        raise InvalidGeometry("k_cap must be >= 1")
    P_index = P_index if P_index is not None else SpatialIndex(P)
    Q_index = Q_index if Q_index is not None else SpatialIndex(Q)

    regions = []
    for i, seed in enumerate(seeds):
        source_side = P_index.radius_neighbors(P.points[seed.source_index], radius)
        target_side = Q_index.radius_neighbors(Q.points[seed.target_index], radius)
        if len(source_side) < MIN_REGION_POINTS or len(target_side) < MIN_REGION_POINTS:
            continue
        rng = np.random.default_rng([rng_seed, stage, _REGION_STREAM, i])
        regions.append(LocalRegion(
            index=i,
            seed=seed,
            source_indices=_downsample(source_side, seed.source_index, k_cap, rng),
            target_indices=_downsample(target_side, seed.target_index, k_cap, rng),
            target_support=target_side,
        ))
    return regions


def local_rematch(
    region: LocalRegion,
    P_feats: FeatureSet,
    Q_feats: FeatureSet,
    k_gmm: int = 3,
    matching: str = "gmm",
) -> CorrespondenceSet:
    """
    Match features inside one region; returned pairs carry global indices

    The seed correspondence is always part of the result.
    """
    source_feats = P_feats.subset(region.source_indices)
    target_feats = Q_feats.subset(region.target_indices)
    if matching == "gmm":
        local = generalized_mutual_match(source_feats, target_feats, k_gmm)
    elif matching == "mm":
        local = mutual_match(source_feats, target_feats)
    elif matching == "nn":
        local = nn_correspondences(source_feats, target_feats)
    else:
        raise ConfigError(f"unknown matching strategy {matching!r}")
    pairs = np.column_stack([
        region.source_indices[local.source_indices],
        region.target_indices[local.target_indices],
    ])
    seed = np.array([[region.seed.source_index, region.seed.target_index]], dtype=np.int64)
    return CorrespondenceSet.from_pairs(np.vstack([pairs.reshape(-1, 2), seed]))


def _snap_to_nearest(
    transform: RigidTransform,
    source_indices: np.ndarray,
    P: PointCloud,
    candidates: np.ndarray,
    candidate_index: SpatialIndex,
    sigma_d: float,
) -> np.ndarray:
    """Pair each source point with its nearest candidate under `transform`, within sigma_d"""
    sources = np.unique(source_indices)
    if len(sources) == 0 or len(candidates) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    nearest, distances = candidate_index.nearest_neighbors(transform.apply(P.points[sources]))
    keep = distances <= sigma_d
    return np.column_stack([sources[keep], candidates[nearest[keep]]])


def local_correct(
    G_i: CorrespondenceSet,
    region: LocalRegion,
    P: PointCloud,
    Q: PointCloud,
    params: ConsistencyParams,
    consistency: str = "ctc",
) -> LocalOutcome:
    """
    Score a region's matches and re-snap them under a locally fitted pose

    Rejected (correspondences None) when the local score is below 1, when
    fewer than three pairs have mutual support, or when the fit degenerates.
    Accepted regions return every source point re-paired with its nearest
    target-side neighbour within sigma_d.
    """
    if len(G_i) == 0:
        raise EmptyInput("local correction of an empty set")
    src, dst = G_i.positions(P, Q)
    center = (P.points[region.seed.source_index], Q.points[region.seed.target_index])

    if consistency == "ctc":
        score_matrix = ctc_matrix(src, dst, center, params)
        selection_matrix = score_matrix
    elif consistency == "sc":
        selection_matrix = second_order_matrix(src, dst, params.sigma)
        score_matrix = (selection_matrix > 0).astype(np.int64)
    else:
        raise ConfigError(f"unknown consistency measure {consistency!r}")

    score = local_score(score_matrix, params.a)
    if score < 1.0:
        return LocalOutcome(region.index, None, score)
    try:
        chosen = select_top_consistent(selection_matrix, default_seed_count(len(G_i)))
        transform = fit_rigid_transform(src[chosen], dst[chosen])
    except (TooFewConsistent, DegenerateInput) as e:
        logger.debug(f"Region {region.index} rejected: {e}")
        return LocalOutcome(region.index, None, score)

    support_index = SpatialIndex(Q.subset(region.target_support))
    pairs = _snap_to_nearest(
        transform, G_i.source_indices, P, region.target_support, support_index, params.sigma_d
    )
    return LocalOutcome(region.index, CorrespondenceSet.from_pairs(pairs, G_i.stage), score, transform)


def merge_correspondences(locals_: Sequence[CorrespondenceSet], stage: int = 0) -> CorrespondenceSet:
    """Union keyed on the exact (source, target) pair, sorted by key"""
    blocks = [c.pairs for c in locals_ if len(c)]
    if not blocks:
        return CorrespondenceSet.empty(stage)
    return CorrespondenceSet.from_pairs(np.vstack(blocks), stage)


def _grow_clique(seed: int, first: np.ndarray, second: np.ndarray) -> List[int]:
    """Greedy clique in the first-order graph, visiting partners by second-order score"""
    compatible = first[seed].astype(bool)
    order = np.argsort(-second[seed], kind="stable")
    clique = [seed]
    for candidate in order:
        if candidate == seed or not compatible[candidate]:
            continue
        clique.append(int(candidate))
        compatible &= first[candidate].astype(bool)
    return clique


def _best_global_pose(src: np.ndarray, dst: np.ndarray, params: ConsistencyParams, hypotheses: int):
    second = second_order_matrix(src, dst, params.sigma)
    first = (second > 0).astype(np.int64)
    ranked = select_top_consistent(second, max(3, min(hypotheses, len(src))))

    best, best_support = None, -1
    for seed in ranked:
        clique = _grow_clique(seed, first, second)
        if len(clique) < 3:
            continue
        try:
            candidate = fit_rigid_transform(src[clique], dst[clique])
        except DegenerateInput:
            continue
        support = int(np.count_nonzero(residuals(candidate, src, dst) <= params.sigma_d))
        if support > best_support:
            best, best_support = candidate, support
    if best is None:
        raise TooFewConsistent("no seed grew a consistent clique of three or more pairs")

    for _ in range(2):
        inliers = residuals(best, src, dst) <= params.sigma_d
        if np.count_nonzero(inliers) < 3:
            break
        try:
            best = fit_rigid_transform(src[inliers], dst[inliers])
        except DegenerateInput:
            break
    return best


def global_correct(
    G: CorrespondenceSet,
    P: PointCloud,
    Q: PointCloud,
    params: ConsistencyParams,
    cap: int = 2000,
    rng_seed: SeedLike = 0,
    hypotheses: int = 64,
    Q_index: Optional[SpatialIndex] = None,
) -> GlobalOutcome:
    """
    Rectify a merged set against one globally consistent pose

    Correspondences are ranked by second-order consistency row sum. Up to
    `hypotheses` of the top-ranked ones each seed a greedy clique in the
    first-order graph, and every clique of three or more pairs is fitted into
    a pose hypothesis. The hypothesis with the most pairs within sigma_d wins
    and is refitted twice on its own inliers. Every source point is then
    re-paired with its nearest target point within sigma_d.

    Args:
        G: Merged correspondences (at least 3)
        P, Q: Source and target clouds
        params: sigma for consistency, sigma_d for the correction radius
        cap: Maximum pairs entering the quadratic consistency matrices
        rng_seed: Seed for the subsampling draw
        hypotheses: Number of top-ranked seeds grown into pose hypotheses
        Q_index: Prebuilt target index

    Returns:
        GlobalOutcome; on TooFewConsistent the input comes back unchanged with
        `fallback` set

    Raises:
        DegenerateInput: fewer than 3 input correspondences
    """
    if len(G) < 3:
        raise DegenerateInput(f"global correction needs at least 3 correspondences, got {len(G)}")
    working = G
    if len(G) > cap:
        rng = np.random.default_rng(rng_seed)
        working = G.subset(np.sort(rng.choice(len(G), size=cap, replace=False)))
    src, dst = working.positions(P, Q)

    try:
        transform = _best_global_pose(src, dst, params, hypotheses)
    except TooFewConsistent as e:
        logger.warning(f"Global correction fell back to the uncorrected set: {e}")
        return GlobalOutcome(G, None, True)

    Q_index = Q_index if Q_index is not None else SpatialIndex(Q)
    pairs = _snap_to_nearest(
        transform, G.source_indices, P, np.arange(len(Q)), Q_index, params.sigma_d
    )
    return GlobalOutcome(CorrespondenceSet.from_pairs(pairs, G.stage), transform, False)


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def regenerate(
    P: PointCloud,
    Q: PointCloud,
    P_feats: FeatureSet,
    Q_feats: FeatureSet,
    G0: Optional[CorrespondenceSet],
    schedule: IterationSchedule,
    rng_seed: int = 0,
    ablation: Optional[AblationConfig] = None,
    workers: Optional[int] = None,
    on_stage: Optional[Callable[[int, CorrespondenceSet], None]] = None,
) -> RegenerationResult:
    """
    Run the progressive pipeline for the scheduled number of stages

    Args:
        P, Q: Source and target clouds
        P_feats, Q_feats: Per-point descriptors aligned with the clouds
        G0: Initial correspondences (derived by feature NN matching when None
            or empty and `schedule.bootstrap` is set)
        schedule: Per-stage hyperparameters
        rng_seed: Base seed; the result is identical for any worker count
        ablation: Pipeline variant switches (full pipeline by default)
        workers: Thread bound for the per-region map (None reads REGOR_THREADS)
        on_stage: Called with (stage, correspondences) for the screened input
            (stage 0) and after every completed stage

    Returns:
        RegenerationResult(correspondences, transform, trace). A collapsed run
        returns the best-so-far set with `trace.collapsed` set.
    """
    if isinstance(rng_seed, bool) or not isinstance(rng_seed, (int, np.integer)) or rng_seed < 0:
        raise ConfigError(f"rng_seed must be a non-negative integer, got {rng_seed!r}")
    is_valid, error = schedule.validate()
    if not is_valid:
        raise ConfigError(error)
    ablation = ablation or AblationConfig()
    is_valid, error = ablation.validate()
    if not is_valid:
        raise ConfigError(error)
    params = schedule.params
    P_feats = FeatureSet.for_cloud(P, P_feats.vectors)
    Q_feats = FeatureSet.for_cloud(Q, Q_feats.vectors)

    trace = RegenerationTrace(ablation=ablation.to_dict())
    if G0 is None or len(G0) == 0:
        if not schedule.bootstrap:
            raise EmptyInput("no initial correspondences and bootstrap is disabled")
        G0 = nn_correspondences(P_feats, Q_feats)
        trace.log(f"Bootstrapped {len(G0)} initial correspondences from feature NN matching")
    G0.validate_against(P, Q)
    trace.initial_count = len(G0)

    P_index = SpatialIndex(P)
    Q_index = SpatialIndex(Q)
    current = G0.with_stage(0)

    if schedule.screen_initial and not ablation.global_enabled:
        trace.log("Screening skipped: global correction is disabled")
    elif schedule.screen_initial and len(current) >= 3:
        trace.transition(PipelineStage.SCREENING, f"{len(current)} initial correspondences")
        screened = global_correct(
            current, P, Q, params, schedule.global_cap,
            [rng_seed, 0, _SCREENING_STREAM], schedule.global_hypotheses, Q_index,
        )
        if not screened.fallback and len(screened.correspondences) >= 3:
            current = screened.correspondences
        trace.screened_count = len(current)
        trace.log(f"Screening kept {len(current)} of {len(G0)} correspondences")
    if on_stage is not None:
        on_stage(0, current)

    iterations = schedule.iterations if ablation.progressive else 1
    for t in range(iterations):
        started = time.perf_counter()

        trace.transition(PipelineStage.SAMPLING, f"{len(current)} correspondences", t)
        seeds = sample_seeds(current, schedule.s_at(t), [rng_seed, t, _SAMPLING_STREAM])

        trace.transition(PipelineStage.GROUPING, f"{len(seeds)} seeds", t)
        regions = group_local_regions(
            seeds, P, Q, schedule.r_at(t), schedule.k_at(t), rng_seed, t, P_index, Q_index
        )
        if not regions:
            _collapse(trace, t, "no seed produced a local region with enough points")
            break

        trace.transition(PipelineStage.REMATCHING, f"{len(regions)} regions", t)

        def process(region: LocalRegion) -> LocalOutcome:
            local = local_rematch(region, P_feats, Q_feats, schedule.k_gmm, ablation.matching)
            if not ablation.local_enabled:
                return LocalOutcome(region.index, local)
            return local_correct(local, region, P, Q, params, ablation.consistency)

        outcomes = parallel_map(process, regions, workers)
        if ablation.local_enabled:
            trace.transition(PipelineStage.LOCAL_CORRECTION, f"{len(outcomes)} scored regions", t)
        accepted = [o for o in outcomes if o.accepted and len(o.correspondences)]
        scores = [o.score for o in outcomes if o.score is not None]
        if not accepted:
            _collapse(trace, t, str(PipelineCollapse(t)))
            break

        trace.transition(PipelineStage.MERGING, f"{len(accepted)} accepted regions", t)
        merged = merge_correspondences([o.correspondences for o in accepted], t + 1)
        merged_count = len(merged)

        fallback = False
        if ablation.global_enabled:
            trace.transition(PipelineStage.GLOBAL_CORRECTION, f"{merged_count} merged", t)
            if merged_count >= 3:
                corrected = global_correct(
                    merged, P, Q, params, schedule.global_cap,
                    [rng_seed, t, _GLOBAL_STREAM], schedule.global_hypotheses, Q_index,
                )
                fallback = corrected.fallback
                if not fallback and len(corrected.correspondences) >= 3:
                    merged = corrected.correspondences
                elif not fallback:
                    fallback = True
                    trace.log("Global correction left fewer than 3 pairs; keeping merged set", t, logging.WARNING)
            else:
                fallback = True

        current = merged.with_stage(t + 1)
        trace.stages.append(StageRecord(
            stage=t,
            seed_count=len(seeds),
            region_count=len(regions),
            accepted_regions=len(accepted),
            rejected_regions=len(outcomes) - len(accepted),
            merged_count=merged_count,
            output_count=len(current),
            mean_local_score=_mean(scores),
            global_fallback=fallback,
            wall_time=time.perf_counter() - started,
        ))
        trace.log(
            f"Stage complete: {len(seeds)} seeds, {len(accepted)}/{len(regions)} regions accepted, "
            f"{merged_count} merged, {len(current)} kept",
            t,
        )
        if on_stage is not None:
            on_stage(t + 1, current)

    try:
        src, dst = current.positions(P, Q)
        transform = fit_rigid_transform(src, dst)
    except DegenerateInput as e:
        transform = RigidTransform.identity()
        trace.error = trace.error or str(e)
        trace.log(f"Final pose fit failed ({e}); returning identity", None, logging.WARNING)

    trace.final_count = len(current)
    if not trace.collapsed:
        trace.transition(PipelineStage.COMPLETED, f"{len(current)} final correspondences")
    return RegenerationResult(current, transform, trace)


def _collapse(trace: RegenerationTrace, stage: int, message: str):
    trace.collapsed = True
    trace.error = message
    trace.transition(PipelineStage.COLLAPSED, message, stage)
    trace.log("Pipeline collapsed; keeping best-so-far correspondences", stage, logging.WARNING)
