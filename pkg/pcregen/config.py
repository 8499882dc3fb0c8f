"""
Config - Run configuration for registration and benchmark runs
Presets, JSON (de)serialization and validation before any compute
"""

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union
import copy
import json
import logging

from .consistency import ConsistencyParams
from .errors import ConfigError, ParseError
from .evaluation import MetricThresholds
from .refinement import RefinementParams
from .regeneration import AblationConfig, IterationSchedule


logger = logging.getLogger(__name__)

DEFAULT_PRESET = "indoor"


@dataclass
class DescriptorConfig:
    """Weak descriptor settings used when no feature files are supplied"""

    support_radius: float = 0.25

    def validate(self) -> Tuple[bool, Optional[str]]:
        if not self.support_radius > 0:
            return False, f"support_radius must be > 0, got {self.support_radius}"
        return True, None


@dataclass
class RunConfig:
    """
    Everything a registration run needs besides its input files

    Args:
        preset: Name of the preset the values started from
        schedule: Stage schedule and consistency tolerances
        refinement: Point-level refinement settings
        thresholds: Success thresholds for metrics
        descriptor: Weak descriptor settings
        ablation: Pipeline variant switches
        rng_seed: Base seed of every random draw
        refine: Run point-level refinement after regeneration
    """

    preset: str = DEFAULT_PRESET
    schedule: IterationSchedule = field(default_factory=IterationSchedule)
    refinement: RefinementParams = field(default_factory=RefinementParams)
    thresholds: MetricThresholds = field(default_factory=MetricThresholds)
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    rng_seed: int = 0
    refine: bool = True

    def validate(self) -> Tuple[bool, Optional[str]]:
        """
        Validate every section

        Returns:
            (is_valid, error_message)
        """
        if self.preset not in PRESETS:
            return False, f"unknown preset {self.preset!r}"
        for name, section in (
            ("schedule", self.schedule),
            ("refinement", self.refinement),
            ("thresholds", self.thresholds),
            ("descriptor", self.descriptor),
            ("ablation", self.ablation),
        ):
            try:
                is_valid, error = section.validate()
            except TypeError as e:
                is_valid, error = False, f"wrong value type ({e})"
            if not is_valid:
                return False, f"{name}: {error}"
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            return False, f"rng_seed must be a non-negative integer, got {self.rng_seed!r}"
        if not isinstance(self.refine, bool):
            return False, f"refine must be true or false, got {self.refine!r}"
        return True, None

    def effective_schedule(self) -> IterationSchedule:
        """Schedule with the single-stage ablation applied"""
        if self.ablation.progressive:
            return self.schedule
        return replace(self.schedule, iterations=1)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        Build from a (possibly partial) document layered over its preset

        Raises:
            ConfigError: unknown keys at any level, or values of the wrong type
        """
        if not isinstance(data, dict):
            raise ConfigError("configuration document must be a JSON object")
        _reject_unknown(data, {f.name for f in fields(cls)}, "configuration")
        preset_name = data.get("preset", DEFAULT_PRESET)
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")
        merged = _deep_merge(PRESETS[preset_name].to_dict(), data)
        try:
            return cls(
                preset=preset_name,
                schedule=IterationSchedule.from_dict(merged["schedule"]),
                refinement=_section(RefinementParams, merged["refinement"], "refinement"),
                thresholds=_section(MetricThresholds, merged["thresholds"], "thresholds"),
                descriptor=_section(DescriptorConfig, merged["descriptor"], "descriptor"),
                ablation=AblationConfig.from_dict(merged["ablation"]),
                rng_seed=merged["rng_seed"],
                refine=merged["refine"],
            )
        except TypeError as e:
            raise ConfigError(f"malformed configuration: {e}") from e

    @classmethod
    def from_json(cls, json_str: str) -> "RunConfig":
        return cls.from_dict(json.loads(json_str))


def _reject_unknown(data: Dict[str, Any], known: Iterable[str], where: str):
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}")


def _section(cls, data: Dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    _reject_unknown(data, {f.name for f in fields(cls)}, where)
    return cls(**data)


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _indoor() -> RunConfig:
    return RunConfig(preset="indoor")


def _outdoor() -> RunConfig:
    return RunConfig(
        preset="outdoor",
        schedule=IterationSchedule(r0=10.0, params=ConsistencyParams(sigma=0.6, sigma_d=0.6, a=0.5)),
        refinement=RefinementParams(sigma_d=0.6),
        thresholds=MetricThresholds(rotation_deg=5.0, translation=0.60),
        descriptor=DescriptorConfig(support_radius=2.5),
    )


def _desk() -> RunConfig:
    # synthetic scenes of about one meter
    return RunConfig(
        preset="desk",
        schedule=IterationSchedule(
            k0=40, r0=0.5, s0=200, omega_k=2.0, omega_r=0.5, omega_s=0.5,
            params=ConsistencyParams(sigma=0.03, sigma_d=0.03, a=0.5),
        ),
        refinement=RefinementParams(sigma_d=0.03),
        thresholds=MetricThresholds(rotation_deg=15.0, translation=0.30),
        descriptor=DescriptorConfig(support_radius=0.08),
    )


PRESETS: Dict[str, RunConfig] = {
    "indoor": _indoor(),
    "outdoor": _outdoor(),
    "desk": _desk(),
}


def preset(name: str) -> RunConfig:
    """Fresh copy of a named preset"""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def apply_ablation_overrides(config: RunConfig, overrides: Iterable[str]) -> RunConfig:
    """Apply `key=value` ablation switches (e.g. `matching=mm`, `progressive=off`)"""
    values = config.ablation.to_dict()
    for override in overrides:
        key, sep, value = override.partition("=")
        if not sep:
            raise ConfigError(f"ablation override must look like key=value, got {override!r}")
        values[key.strip()] = value.strip()
    updated = copy.deepcopy(config)
    updated.ablation = AblationConfig.from_dict(values)
    is_valid, error = updated.validate()
    if not is_valid:
        raise ConfigError(error)
    return updated


def load_config(path: Optional[Union[str, Path]] = None, preset_name: Optional[str] = None) -> RunConfig:
    """
    Load and validate a configuration file

    Args:
        path: JSON document; None starts from the preset alone
        preset_name: Preset used when the document names none

    Raises:
        ConfigError, ParseError
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", str(path), e.lineno) from e
    if preset_name is not None and "preset" not in data:
        data = dict(data, preset=preset_name)
    config = RunConfig.from_dict(data)
    is_valid, error = config.validate()
    if not is_valid:
        raise ConfigError(error)
    logger.info(f"Loaded configuration (preset={config.preset}, seed={config.rng_seed})")
    return config
