"""Pipeline configuration: a dataclass tree with defaults, loaded from YAML or JSON."""

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import yaml

from .classify import TrainConfig
from .descriptors import VolumeSpec
from .encode import EncodeConfig, SelectionConfig
from .exceptions import ParameterError
from .flow import FlowConfig
from .localize import LocalizeConfig
from .tracking import TrackerConfig

log = logging.getLogger(__name__)

MODES = ("2d", "3d")

SECTIONS = {
    "flow": FlowConfig,
    "tracker": TrackerConfig,
    "volume": VolumeSpec,
    "localize": LocalizeConfig,
    "encode": EncodeConfig,
    "selection": SelectionConfig,
    "classify": TrainConfig,
}


@dataclass
class PipelineConfig:
    mode: str = "2d"
    seed: int = 0
    flow: FlowConfig = field(default_factory=FlowConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    volume: VolumeSpec = field(default_factory=VolumeSpec)
    localize: LocalizeConfig = field(default_factory=LocalizeConfig)
    encode: EncodeConfig = field(default_factory=EncodeConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    classify: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"Unknown mode {self.mode!r}, expected one of {MODES}")
        if self.tracker.L != self.volume.L:
            raise ParameterError(
                f"Trajectory length {self.tracker.L} differs from volume length {self.volume.L}"
            )
        if self.selection.sample_size < self.encode.K:
            raise ParameterError(
                f"selection.sample_size ({self.selection.sample_size}) must be >= encode.K ({self.encode.K})"
            )

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def with_encode(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, encode=dataclasses.replace(self.encode, **changes))


def from_dict(data: dict) -> PipelineConfig:
    """Build a config from a (possibly partial) mapping; unknown keys are errors."""
    if data is None:
        return PipelineConfig()
    if not isinstance(data, dict):
        raise ParameterError("Pipeline config must be a mapping")
    unknown = set(data) - {"mode", "seed"} - set(SECTIONS)
    if unknown:
        raise ParameterError(f"Unknown config keys: {sorted(unknown)}")
    kwargs = {k: data[k] for k in ("mode", "seed") if k in data}
    for name, cls in SECTIONS.items():
        section = data.get(name) or {}
        if not isinstance(section, dict):
            raise ParameterError(f"Config section {name!r} must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        stray = set(section) - known
        if stray:
            raise ParameterError(f"Unknown keys in config section {name!r}: {sorted(stray)}")
        try:
            kwargs[name] = cls(**section)
        except TypeError as e:
            raise ParameterError(f"Bad config section {name!r}: {e}") from e
    return PipelineConfig(**kwargs)


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ParameterError(f"Cannot read config file {path}") from e
    except yaml.YAMLError as e:
        raise ParameterError(f"Config file {path} is neither YAML nor JSON") from e
    log.info(f"Loaded pipeline config from {path}")
    return from_dict(data)


def to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def default_config_json() -> str:
    return json.dumps(to_dict(PipelineConfig()), indent=2)
