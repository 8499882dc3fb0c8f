"""
CLI - Command-line surface of pcregen
Subcommands: register, benchmark, synth, eval, diagram

Exit codes: 0 success, 1 internal error, 2 I/O or configuration fault,
3 invalid benchmark spec. Failures print one JSON object on stderr.
"""

from pathlib import Path
from typing import List, Optional
import argparse
import json
import logging
import sys

from .benchmark import load_benchmark_spec, run_benchmark, write_benchmark_outputs
from .config import DEFAULT_PRESET, PRESETS, RunConfig, apply_ablation_overrides, load_config
from .diagram import render_pipeline_diagram
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyInput,
    InvalidGeometry,
    InvalidSpec,
    ParseError,
    TooFewPoints,
    UnsupportedFormat,
)
from .evaluation import pair_metrics
from .features import read_feature_file
from .io import (
    load_correspondences,
    load_ground_truth,
    load_point_cloud,
    load_transform,
    save_correspondences,
    save_ground_truth,
    save_point_cloud,
    save_trace,
    save_transform,
)
from .pipeline import prepare_features, register_pair
from .synthetic import SceneSpec, generate_scene


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_SPEC = 3

_INPUT_FAULTS = (
    ConfigError, ParseError, UnsupportedFormat, OSError, InvalidGeometry,
    DimensionMismatch, TooFewPoints, EmptyInput,
)
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def print_separator(title=""):
    """Print a visual separator"""
    if title:
        print(f"\n{'='*80}")
        print(f"  {title}")
        print(f"{'='*80}\n")
    else:
        print(f"{'='*80}\n")


def configure_logging(level: str, out_dir: Optional[Path] = None):
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(out_dir / "pcregen.log"))
    logging.basicConfig(level=getattr(logging, level.upper()), format=LOG_FORMAT, handlers=handlers, force=True)


def _run_config(args) -> RunConfig:
    config = load_config(args.config, args.preset)
    if args.ablation:
        config = apply_ablation_overrides(config, args.ablation)
    return config


def cmd_register(args) -> int:
    """Register one source/target pair and write transform, correspondences and trace"""
    out_dir = Path(args.out)
    config = _run_config(args)
    P = load_point_cloud(args.source)
    Q = load_point_cloud(args.target)
    P_feats = read_feature_file(args.features_src) if args.features_src else None
    Q_feats = read_feature_file(args.features_dst) if args.features_dst else None
    G0 = load_correspondences(args.init_corr) if args.init_corr else None

    print_separator("PCREGEN: CORRESPONDENCE REGENERATION")
    print(f"Source: {args.source} ({len(P)} points)")
    print(f"Target: {args.target} ({len(Q)} points)")
    print(f"Initial correspondences: {len(G0) if G0 is not None else 'bootstrapped'}")

    P_feats, Q_feats = prepare_features(P, Q, config, P_feats, Q_feats, args.workers)
    output = register_pair(P, Q, P_feats, Q_feats, G0, config, args.workers)

    out_dir.mkdir(parents=True, exist_ok=True)
    save_transform(out_dir / "transform.json", output.transform)
    save_correspondences(out_dir / "correspondences.csv", output.correspondences)
    save_trace(out_dir / "trace.json", output.trace)

    print(f"\nFinal correspondences: {len(output.correspondences)}")
    print(f"Refined: {output.refined}")
    if output.trace.collapsed:
        print(f"Pipeline collapsed: {output.trace.error}")
    print(f"Outputs written to: {out_dir}")
    print_separator()
    return EXIT_OK


def cmd_benchmark(args) -> int:
    """Run a synthetic benchmark grid"""
    spec = load_benchmark_spec(args.spec)
    print_separator("PCREGEN: SYNTHETIC BENCHMARK")
    result = run_benchmark(spec, args.workers)
    paths = write_benchmark_outputs(result, args.out)
    result.results.print_summary()
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return EXIT_OK


def _scene_spec(args) -> SceneSpec:
    data = {}
    if args.scene:
        try:
            data = json.loads(Path(args.scene).read_text())
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", args.scene, e.lineno) from e
        if not isinstance(data, dict):
            raise InvalidSpec("scene document must be a JSON object")
    overrides = {
        "point_count": args.points,
        "overlap_fraction": args.overlap,
        "noise_sigma": args.noise,
        "outlier_ratio": args.outlier_ratio,
        "initial_pair_count": args.pairs,
        "rng_seed": args.seed,
        "scene_scale": args.scale,
    }
    data.update({key: value for key, value in overrides.items() if value is not None})
    spec = SceneSpec.from_dict(data)
    is_valid, error = spec.validate()
    if not is_valid:
        raise InvalidSpec(error)
    return spec


def cmd_synth(args) -> int:
    """Generate a synthetic scene and write it to disk"""
    spec = _scene_spec(args)
    scene = generate_scene(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_point_cloud(out_dir / "source.ply", scene.P)
    save_point_cloud(out_dir / "target.ply", scene.Q)
    save_correspondences(out_dir / "initial.csv", scene.G0)
    save_ground_truth(out_dir / "ground_truth.json", scene.gt)
    (out_dir / "scene.json").write_text(json.dumps(spec.to_dict(), indent=2))
    print(f"Scene written to {out_dir}: |P|={len(scene.P)}, |Q|={len(scene.Q)}, |G0|={len(scene.G0)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    """Score precomputed outputs against a ground truth"""
    config = _run_config(args)
    P = load_point_cloud(args.source)
    Q = load_point_cloud(args.target)
    G_init = load_correspondences(args.init_corr)
    G_final = load_correspondences(args.final_corr)
    G_init.validate_against(P, Q)
    G_final.validate_against(P, Q)
    T_hat = load_transform(args.transform)
    gt = load_ground_truth(args.ground_truth)
    metrics = pair_metrics(G_init, G_final, P, Q, T_hat, gt, config.thresholds)
    document = json.dumps(metrics.to_dict(), indent=2)
    print(document)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.json").write_text(document)
    return EXIT_OK


def cmd_diagram(args) -> int:
    """Render the pipeline state graph"""
    config = _run_config(args)
    path = render_pipeline_diagram(args.out, config.ablation, args.format)
    print(f"Pipeline diagram saved: {path}")
    return EXIT_OK


def _add_config_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--preset", choices=sorted(PRESETS), default=None,
                        help=f"preset used when the configuration names none (default {DEFAULT_PRESET})")
    parser.add_argument("--ablation", action="append", default=[], metavar="KEY=VALUE",
                        help="ablation switch, e.g. matching=mm or progressive=off (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcregen", description="Progressive correspondence regeneration")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--workers", type=int, default=None, help="worker threads (default: REGOR_THREADS or 1)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    register = subparsers.add_parser("register", help="register one point cloud pair")
    register.add_argument("--source", required=True)
    register.add_argument("--target", required=True)
    register.add_argument("--features-src")
    register.add_argument("--features-dst")
    register.add_argument("--init-corr")
    register.add_argument("--out", required=True)
    _add_config_arguments(register)
    register.set_defaults(handler=cmd_register)

    benchmark = subparsers.add_parser("benchmark", help="run a synthetic benchmark grid")
    benchmark.add_argument("--spec", required=True)
    benchmark.add_argument("--out", required=True)
    benchmark.set_defaults(handler=cmd_benchmark)

    synth = subparsers.add_parser("synth", help="generate a synthetic scene")
    synth.add_argument("--out", required=True)
    synth.add_argument("--scene", help="JSON SceneSpec document")
    synth.add_argument("--points", type=int)
    synth.add_argument("--overlap", type=float)
    synth.add_argument("--noise", type=float)
    synth.add_argument("--outlier-ratio", type=float)
    synth.add_argument("--pairs", type=int)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--scale", type=float)
    synth.set_defaults(handler=cmd_synth)

    evaluate = subparsers.add_parser("eval", help="metrics on precomputed outputs")
    evaluate.add_argument("--source", required=True)
    evaluate.add_argument("--target", required=True)
    evaluate.add_argument("--init-corr", required=True)
    evaluate.add_argument("--final-corr", required=True)
    evaluate.add_argument("--transform", required=True)
    evaluate.add_argument("--ground-truth", required=True)
    evaluate.add_argument("--out")
    _add_config_arguments(evaluate)
    evaluate.set_defaults(handler=cmd_eval)

    diagram = subparsers.add_parser("diagram", help="render the pipeline state graph")
    diagram.add_argument("--out", required=True, help="output path without extension")
    diagram.add_argument("--format", default="png")
    _add_config_arguments(diagram)
    diagram.set_defaults(handler=cmd_diagram)
    return parser


def _report_failure(error: BaseException, path: Optional[str] = None):
    if path is None:
        path = getattr(error, "path", None) or getattr(error, "filename", None)
    payload = {
        "error": type(error).__name__,
        "message": str(error),
        "path": str(path) if path is not None else None,
    }
    print(json.dumps(payload), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    log_dir = Path(args.out) if getattr(args, "out", None) and args.command != "diagram" else None
    try:
        configure_logging(args.log_level, log_dir)
        return args.handler(args)
    except InvalidSpec as e:
        _report_failure(e)
        return EXIT_SPEC
    except _INPUT_FAULTS as e:
        _report_failure(e)
        return EXIT_INPUT
    except Exception as e:
        logger.exception("Unexpected failure")
        _report_failure(e)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
