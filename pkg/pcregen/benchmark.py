"""
Benchmark - Synthetic sweeps over outlier ratio and initial pair count
Per-pair JSONL records, a summary table per grid point and stage curves
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union
import csv
import json
import logging
import time

import numpy as np

from .config import RunConfig
from .errors import ConfigError, InvalidSpec, ParseError
from .evaluation import count_inliers, pair_metrics, baseline_register
from .parallel import parallel_map
from .pipeline import prepare_features, register_pair
from .results_logger import ResultsLogger
from .synthetic import SceneSpec, generate_scene


logger = logging.getLogger(__name__)

METHOD_PIPELINE = "regeneration"
METHOD_BASELINE = "mutual_svd"
SUMMARY_COLUMNS = [
    "outlier_ratio", "initial_pair_count", "method", "pairs", "rr", "re_mean", "te_mean",
    "ip_mean", "in_mean", "inr_mean", "inr_median", "fmr",
]
STAGE_COLUMNS = ["outlier_ratio", "initial_pair_count", "scene", "stage", "correspondences", "inliers"]
# SceneSpec fields set per grid point rather than in the shared scene block
_GRID_FIELDS = ("outlier_ratio", "initial_pair_count", "rng_seed")


@dataclass
class BenchmarkSpec:
    """
    Benchmark grid definition

    Args:
        scenes_per_point: Scenes generated per (outlier ratio, pair count) point
        outlier_ratios: Grid values of the G0 outlier ratio
        initial_pair_counts: Grid values of |G0|
        scene: Shared SceneSpec fields
        config: RunConfig document used for every scene
        rng_seed: Base seed of scene generation and of the pipeline
        baseline: Also run mutual matching + single SVD on every scene
    """

    scenes_per_point: int = 3
    outlier_ratios: List[float] = field(default_factory=lambda: [0.9])
    initial_pair_counts: List[int] = field(default_factory=lambda: [500])
    scene: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    rng_seed: int = 0
    baseline: bool = False

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BenchmarkSpec":
        if not isinstance(data, dict):
            raise InvalidSpec("benchmark spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpec(f"unknown benchmark keys: {unknown}")
        return cls(**data)

    def validate(self) -> Tuple[bool, Optional[str]]:
        if isinstance(self.scenes_per_point, bool) or not isinstance(self.scenes_per_point, int) \
                or self.scenes_per_point < 1:
            return False, f"scenes_per_point must be a positive integer, got {self.scenes_per_point!r}"
        if not self.outlier_ratios or not self.initial_pair_counts:
            return False, "outlier_ratios and initial_pair_counts must be non-empty lists"
        if not isinstance(self.scene, dict) or not isinstance(self.config, dict):
            return False, "scene and config must be objects"
        clashes = sorted(set(self.scene) & set(_GRID_FIELDS))
        if clashes:
            return False, f"scene block may not set grid fields {clashes}"
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            return False, f"rng_seed must be a non-negative integer, got {self.rng_seed!r}"
        for ratio, count in self.grid():
            try:
                is_valid, error = self.scene_spec(ratio, count, 0).validate()
            except (InvalidSpec, TypeError) as e:
                return False, str(e)
            if not is_valid:
                return False, f"grid point ({ratio}, {count}): {error}"
        return True, None

    def grid(self) -> List[Tuple[float, int]]:
        return [(ratio, count) for ratio in self.outlier_ratios for count in self.initial_pair_counts]

    def scene_spec(self, ratio: float, count: int, seed: int) -> SceneSpec:
        return SceneSpec.from_dict(dict(self.scene, outlier_ratio=ratio, initial_pair_count=count, rng_seed=seed))

    def run_config(self) -> RunConfig:
        config = RunConfig.from_dict(dict(self.config, rng_seed=self.config.get("rng_seed", self.rng_seed)))
        is_valid, error = config.validate()
        if not is_valid:
            raise ConfigError(error)
        return config


class SceneJob(NamedTuple):
    grid_index: int
    outlier_ratio: float
    initial_pair_count: int
    scene_index: int
    scene_seed: int


class BenchmarkResult(NamedTuple):
    results: ResultsLogger
    summary_rows: List[Dict[str, Any]]
    stage_rows: List[Dict[str, Any]]


def load_benchmark_spec(path: Union[str, Path]) -> BenchmarkSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", str(path), e.lineno) from e
    spec = BenchmarkSpec.from_dict(data)
    is_valid, error = spec.validate()
    if not is_valid:
        raise InvalidSpec(error)
    return spec


def scene_seed(base_seed: int, grid_index: int, scene_index: int) -> int:
    """Deterministic 32-bit scene seed for a grid point and scene number"""
    return int(np.random.SeedSequence([base_seed, grid_index, scene_index]).generate_state(1)[0])


def plan_jobs(spec: BenchmarkSpec) -> List[SceneJob]:
    jobs = []
    for grid_index, (ratio, count) in enumerate(spec.grid()):
        for scene_index in range(spec.scenes_per_point):
            jobs.append(SceneJob(grid_index, ratio, count, scene_index, scene_seed(spec.rng_seed, grid_index, scene_index)))
    return jobs


def _group_key(ratio: float, count: int, method: str) -> str:
    return f"outlier_ratio={ratio!r}|initial_pair_count={count}|method={method}"


def run_scene(job: SceneJob, spec: BenchmarkSpec, config: RunConfig) -> Dict[str, Any]:
    """
    Generate one scene, register it and score the result (and the baseline)

    Wall times cover registration only; feature computation is shared by both
    methods and left out.
    """
    scene = generate_scene(spec.scene_spec(job.outlier_ratio, job.initial_pair_count, job.scene_seed))
    P_feats, Q_feats = prepare_features(scene.P, scene.Q, config, workers=1)

    stage_counts: List[Tuple[int, int, int]] = []

    def on_stage(stage, correspondences):
        stage_counts.append((stage, len(correspondences), count_inliers(correspondences, scene.P, scene.Q, scene.gt)))

    started = time.perf_counter()
    output = register_pair(scene.P, scene.Q, P_feats, Q_feats, scene.G0, config, workers=1, on_stage=on_stage)
    times = {METHOD_PIPELINE: time.perf_counter() - started}
    metrics = {
        METHOD_PIPELINE: pair_metrics(
            scene.G0, output.correspondences, scene.P, scene.Q, output.transform, scene.gt, config.thresholds
        )
    }
    if spec.baseline:
        started = time.perf_counter()
        matches, transform = baseline_register(scene.P, scene.Q, P_feats, Q_feats)
        times[METHOD_BASELINE] = time.perf_counter() - started
        metrics[METHOD_BASELINE] = pair_metrics(
            scene.G0, matches, scene.P, scene.Q, transform, scene.gt, config.thresholds
        )
    return {
        "job": job,
        "metrics": metrics,
        "times": times,
        "stages": stage_counts,
        "collapsed": output.trace.collapsed,
    }


def _summary_row(ratio: float, count: int, method: str, results: ResultsLogger) -> Dict[str, Any]:
    group = results.get_group(_group_key(ratio, count, method))
    summary = results.summarize(_group_key(ratio, count, method))
    return {
        "outlier_ratio": ratio,
        "initial_pair_count": count,
        "method": method,
        "pairs": summary.pair_count,
        "rr": summary.rr,
        "re_mean": summary.re_mean,
        "te_mean": summary.te_mean,
        "ip_mean": summary.ip_mean,
        "in_mean": summary.in_mean,
        "inr_mean": summary.inr_mean,
        "inr_median": float(np.median([m.inr for m in group])),
        "fmr": summary.fmr,
    }


def run_benchmark(spec: BenchmarkSpec, workers: Optional[int] = None) -> BenchmarkResult:
    """
    Run every scene of the grid

    Scenes run concurrently; records are collected in job order so outputs do
    not depend on the worker count.
    """
    config = spec.run_config()
    jobs = plan_jobs(spec)
    logger.info(f"Benchmark: {len(jobs)} scenes over {len(spec.grid())} grid points")
    outcomes = parallel_map(lambda job: run_scene(job, spec, config), jobs, workers)

    results = ResultsLogger()
    stage_rows = []
    for outcome in outcomes:
        job = outcome["job"]
        for method, metrics in outcome["metrics"].items():
            results.log_record(
                metrics,
                group=_group_key(job.outlier_ratio, job.initial_pair_count, method),
                outlier_ratio=job.outlier_ratio,
                initial_pair_count=job.initial_pair_count,
                scene=job.scene_index,
                scene_seed=job.scene_seed,
                method=method,
                collapsed=outcome["collapsed"] if method == METHOD_PIPELINE else False,
                time_s=outcome["times"][method],
            )
        for stage, correspondences, inliers in outcome["stages"]:
            stage_rows.append({
                "outlier_ratio": job.outlier_ratio,
                "initial_pair_count": job.initial_pair_count,
                "scene": job.scene_index,
                "stage": stage,
                "correspondences": correspondences,
                "inliers": inliers,
            })

    methods = [METHOD_PIPELINE] + ([METHOD_BASELINE] if spec.baseline else [])
    summary_rows = [
        _summary_row(ratio, count, method, results)
        for ratio, count in spec.grid()
        for method in methods
    ]
    return BenchmarkResult(results, summary_rows, stage_rows)


def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Union[str, Path], columns: List[str], rows: List[Dict[str, Any]]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_value(row[column]) for column in columns])


def write_benchmark_outputs(result: BenchmarkResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """records.jsonl, summary.csv, stages.csv, summary.json and report.txt under `out_dir`"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out_dir / "records.jsonl",
        "summary": out_dir / "summary.csv",
        "stages": out_dir / "stages.csv",
        "summary_json": out_dir / "summary.json",
        "report": out_dir / "report.txt",
    }
    result.results.save_to_jsonl(paths["records"])
    write_csv(paths["summary"], SUMMARY_COLUMNS, result.summary_rows)
    write_csv(paths["stages"], STAGE_COLUMNS, result.stage_rows)
    result.results.save_summary_json(paths["summary_json"])
    result.results.save_to_file(paths["report"])
    return paths
