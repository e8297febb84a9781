"""Run configuration: one YAML file, validated up front.

Command-line flags override the matching keys (see ``apply_overrides``).
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .encoder import N_HOPS, HopConfig
from .errors import ConfigError
from .gbt import GBTParams
from .segmentation import SegParams


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Paths(_Strict):
    data: str | None = None
    model: str | None = None
    out: str | None = None


class PreprocessConfig(_Strict):
    target: int = Field(112, ge=16)
    n_frames: int = Field(12, ge=1)
    offset: int = Field(0, ge=0)
    standardize: bool = True

    @field_validator("target")
    @classmethod
    def _multiple_of_8(cls, v):
        if v % 8:
            raise ValueError("target size must be a multiple of 8 (three 2x poolings)")
        return v


class HopOverride(_Strict):
    spatial_window: int | None = None
    temporal_window: int | None = None
    energy_threshold: float | None = None
    safety_margin: int | None = None
    expand_threshold: float | None = None


class EncoderConfig(_Strict):
    spatial_window: int = 3
    temporal_window: int = 3
    energy_threshold: float = Field(0.99, gt=0, le=1)
    safety_margin: int | None = Field(None, ge=0)
    expand_threshold: float = Field(0.005, ge=0, lt=1)
    fit_on_masks: bool = False      # also feed TRAIN masks to the Saab statistics (fitting only)
    hops: list[HopOverride] | None = None

    @field_validator("hops")
    @classmethod
    def _four(cls, v):
        if v is not None and len(v) != N_HOPS:
            raise ValueError(f"hops must list exactly {N_HOPS} entries")
        return v

    def hop_configs(self) -> list[HopConfig]:
        out = []
        for i in range(N_HOPS):
            base = self.model_dump(exclude={"hops", "fit_on_masks"})
            if self.hops is not None:
                base.update({k: v for k, v in self.hops[i].model_dump().items() if v is not None})
            out.append(HopConfig(pool_after=i < N_HOPS - 1, **base))
        return out


class BoostConfig(_Strict):
    rounds: int = Field(300, ge=0)
    max_depth: int = Field(6, ge=1)
    learning_rate: float = Field(0.1, gt=0, le=1)
    max_bins: int = Field(256, ge=2, le=256)
    min_samples_leaf: int = Field(8, ge=1)

    def params(self, seed: int) -> GBTParams:
        return GBTParams(max_depth=self.max_depth, rounds=self.rounds,
                         learning_rate=self.learning_rate, max_bins=self.max_bins,
                         min_samples_leaf=self.min_samples_leaf, seed=seed)


class SegConfig(BoostConfig):
    dilation_radius: int = Field(1, ge=0)
    interior_ratio: float = Field(1.0, ge=0)
    background_ratio: float = Field(1.0, ge=0)
    threshold: float = Field(0.5, gt=0, lt=1)
    crop_margin: int = Field(8, ge=0)
    time_index: int = Field(0, ge=0)
    largest_component: bool = False

    def seg_params(self, seed: int) -> SegParams:
        p = self.params(seed)
        return SegParams(initial=p, residual=p, dilation_radius=self.dilation_radius,
                         interior_ratio=self.interior_ratio, background_ratio=self.background_ratio,
                         threshold=self.threshold, crop_margin=self.crop_margin, seed=seed,
                         largest_component=self.largest_component, time_index=self.time_index)


class ClsConfig(BoostConfig):
    hops: list[int] = [1, 2, 3, 4]
    oversample: Literal["none", "balanced"] | dict[int, int] = "balanced"

    @field_validator("hops")
    @classmethod
    def _hops(cls, v):
        if not v or any(h not in (1, 2, 3, 4) for h in v) or len(set(v)) != len(v):
            raise ValueError("hops must be distinct values from 1..4")
        return sorted(v)


class SynthConfig(_Strict):
    speckle: float = Field(0.15, ge=0)
    modulation: float = Field(0.05, ge=0, lt=0.5)
    test_fraction: float = Field(0.25, ge=0, lt=1)
    val_fraction: float = Field(0.0, ge=0, lt=1)


class RunConfig(_Strict):
    seed: int
    threads: int = Field(1, ge=0)
    paths: Paths = Paths()
    preprocess: PreprocessConfig = PreprocessConfig()
    encoder: EncoderConfig = EncoderConfig()
    segmentation: SegConfig = SegConfig()
    classifier: ClsConfig = ClsConfig()
    synth: SynthConfig = SynthConfig()


def _format(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(data: dict | None) -> RunConfig:
    if data is None:
        raise ConfigError("config is empty; 'seed' is mandatory")
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at top level")
    try:
        cfg = RunConfig.model_validate(data)
        cfg.encoder.hop_configs()
        return cfg
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format(exc)}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {p} is not valid YAML: {exc}") from None
    return parse_config(data)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Dotted-key overrides (``{"paths.data": "x", "seed": 3}``); None values are skipped."""
    data = cfg.model_dump()
    for key, value in overrides.items():
        if value is None:
            continue
        node = data
        *head, last = key.split(".")
        for part in head:
            node = node.setdefault(part, {})
        node[last] = value
    return parse_config(data)


def echo(cfg: RunConfig) -> dict:
    """Config as stored in the model container (paths and threads excluded; they do not affect results)."""
    return cfg.model_dump(mode="json", exclude={"paths", "threads"})
