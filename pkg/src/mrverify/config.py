"""Run configuration: a TOML file whose values command-line flags override.

Example::

    seed = 7
    alpha = 0.5
    codec = "lossless"          # or "lossy:80"
    threshold = 0.5
    method = "iou"
    segmenter = "oracle"
    perturb = "radius=2,jitter=2,miss=0.05"
    endpoint = "127.0.0.1:7878"
    jobs = 1
    out = "runs"

    [dataset]
    count = 200                 # per split
    splits = ["val", "test"]
    alignment_points = 8

    [filter]
    tint = [64, 160, 255]
    tint_alpha = 0.6

    [motion]
    base_threshold = 0.05

    [skin]
    hue_range = [0, 50]

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import DatasetConfig, OverlayFilter, ShiftSpec
from .errors import ConfigError, InvalidAlpha
from .imaging import CodecSpec, check_alpha
from .motion import MotionConfig, SkinModel
from .pipeline import METHODS, ClientSettings
from .protocol.server import parse_endpoint
from .segmentation import PerturbationSpec
from .verification import VerificationPolicy

SEGMENTERS = ("oracle", "adapter")


@dataclass(frozen=True)
class DatasetSection:
    name: str = "desk"
    count: int = 200
    splits: tuple[str, ...] = ("val", "test")
    alignment_points: int = 8
    sources: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    alpha: float = 0.5
    codec: str = "lossless"
    threshold: float = 0.5
    method: str = "iou"
    segmenter: str = "oracle"
    segmenter_command: tuple[str, ...] = ()
    perturb: str = ""
    endpoint: str = "127.0.0.1:7878"
    timeout: float = 5.0
    jobs: int = 1
    out: str = "runs"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    filter: OverlayFilter = field(default_factory=OverlayFilter)
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    motion: MotionConfig = field(default_factory=MotionConfig)
    skin: SkinModel = field(default_factory=SkinModel)

    def validate(self) -> RunConfig:
        try:
            check_alpha(self.alpha)
        except InvalidAlpha as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        if self.segmenter not in SEGMENTERS:
            raise ConfigError(f"segmenter must be one of {', '.join(SEGMENTERS)}, got {self.segmenter!r}")
        if self.segmenter == "adapter" and not self.segmenter_command:
            raise ConfigError("segmenter 'adapter' needs segmenter_command")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be at least 1, got {self.jobs}")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout}")
        if self.dataset.count < 0:
            raise ConfigError("dataset.count must be non-negative")
        for check in (self.codec_spec, self.perturbation, self.endpoint_tuple):
            try:
                check()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self

    def codec_spec(self) -> CodecSpec:
        return CodecSpec.parse(self.codec)

    def perturbation(self) -> PerturbationSpec | None:
        return PerturbationSpec.parse(self.perturb) if self.perturb else None

    def endpoint_tuple(self) -> tuple[str, int]:
        return parse_endpoint(self.endpoint)

    def policy(self) -> VerificationPolicy:
        return VerificationPolicy(self.threshold)

    def client_settings(self) -> ClientSettings:
        return ClientSettings(alpha=self.alpha, codec=self.codec_spec())

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig(
            name=self.dataset.name, counts={s: self.dataset.count for s in self.dataset.splits},
            seed=self.seed, filter=self.filter, shift=self.shift,
            alignment_points=self.dataset.alignment_points, jobs=self.jobs,
        )

    def with_overrides(self, **overrides) -> RunConfig:
        """Apply top-level overrides, ignoring None values (flags that were not given)."""
        given = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(given) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown setting(s): {', '.join(sorted(unknown))}")
        return replace(self, **given).validate()


_SECTIONS = {"dataset": DatasetSection, "filter": OverlayFilter, "shift": ShiftSpec,
             "motion": MotionConfig, "skin": SkinModel}


def _build(cls, data: dict, where: str):
    names = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from None


def from_dict(data: dict) -> RunConfig:
    top = {}
    sections = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            sections[key] = _build(_SECTIONS[key], value, f"[{key}]")
        else:
            top[key] = value
    cfg = _build(RunConfig, top, "top level")
    return replace(cfg, **sections).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data)
