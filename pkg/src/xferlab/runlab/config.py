"""Experiment configuration: a YAML document validated against a strict schema.

Unknown keys are errors. Fields left unset take defaults that depend on the
scale (``desk`` or ``paper``), resolved once at load time.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..dataforge import PRESETS
from ..errors import ConfigInvalid

EXPERIMENTS = ("glm_sweep", "task_sweep", "layer_sweep", "oracle_init", "attribution", "corr_check")
DEFAULT_BETAS = [round(0.1 * i, 1) for i in range(11)]
DEFAULT_ALPHAS = [round(-1.0 + 0.05 * i, 2) for i in range(41)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class IdxDomainSpec(_Strict):
    """An MNIST-style IDX dataset on disk (train and test files)."""

    images: str
    labels: str
    test_images: str
    test_labels: str
    name: Optional[str] = None


DomainChoice = Union[str, IdxDomainSpec]


class DataSpec(_Strict):
    left: DomainChoice = "glyphA"
    right: DomainChoice = "glyphB"
    height: Optional[int] = Field(None, ge=2)
    width: Optional[int] = Field(None, ge=1, description="width of one half")
    channels: Optional[int] = None
    train_per_class: Optional[int] = Field(None, ge=1)
    test_per_class: Optional[int] = Field(None, ge=1)
    samples_per_epoch: Optional[int] = Field(None, ge=1)
    test_samples: Optional[int] = Field(None, ge=1)
    betas: list[float] = Field(default_factory=lambda: list(DEFAULT_BETAS))

    @field_validator("left", "right")
    @classmethod
    def _domain(cls, v):
        if isinstance(v, str) and v not in PRESETS:
            raise ValueError(f"unknown glyph domain {v!r}; use one of {sorted(PRESETS)} or an IDX file mapping")
        return v

    @field_validator("channels")
    @classmethod
    def _channels(cls, v):
        if v is not None and v not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        return v

    @field_validator("betas")
    @classmethod
    def _betas(cls, v):
        if not v:
            raise ValueError("at least one beta is required")
        for b in v:
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"beta {b} outside [0, 1]")
        return v


class ModelSpec(_Strict):
    arch: Literal["fc", "conv"] = "fc"
    init: Literal["standard", "zero_right_half"] = "standard"
    profile: Optional[Literal["desk", "paper"]] = None


class OptimizerSpec(_Strict):
    lr: float = Field(0.001, ge=0)
    momentum: float = Field(0.9, ge=0)
    weight_decay: float = Field(5e-4, ge=0)
    batch_size: int = Field(256, ge=1)
    epochs: int = Field(15, ge=1)
    schedule: Literal["constant", "cosine"] = "constant"
    lr_end: float = Field(0.0, ge=0)


def _bob_default():
    return OptimizerSpec(lr=0.3, epochs=10, schedule="cosine", lr_end=0.0)


class GlmSpec(_Strict):
    scenarios: list[Literal["pairwise", "global"]] = Field(default_factory=lambda: ["pairwise", "global"])
    alphas: list[float] = Field(default_factory=lambda: list(DEFAULT_ALPHAS))
    ks: list[int] = Field(default_factory=lambda: [1])
    lam: float = Field(0.03, ge=0)
    n_train: int = Field(50000, ge=2)
    n_test: int = Field(50000, ge=1)
    steps: int = Field(200, ge=1)
    method: Literal["newton", "gd"] = "newton"
    lr: float = Field(1.0, gt=0)

    @field_validator("alphas")
    @classmethod
    def _alphas(cls, v):
        for a in v:
            if not -1.0 <= a <= 1.0:
                raise ValueError(f"alpha {a} outside [-1, 1]")
        return v

    @field_validator("ks")
    @classmethod
    def _ks(cls, v):
        if not v or min(v) < 1:
            raise ValueError("ks must be positive")
        return v


class LayerSpec(_Strict):
    ells: Optional[list[int]] = None      # None: every depth 1..m+1


class AttributionSpec(_Strict):
    samples: int = Field(1000, ge=1)
    steps: int = Field(128, ge=1)
    bins: int = Field(30, ge=2)
    absolute: bool = False
    space: Literal["logit", "prob"] = "logit"
    dump_maps: bool = False


class CorrSpec(_Strict):
    n: int = Field(100000, ge=2)
    per_class: int = Field(1000, ge=1)
    betas: list[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])


class ExperimentConfig(_Strict):
    experiment: Optional[Literal[EXPERIMENTS]] = None
    scale: Literal["desk", "paper"] = "desk"
    seed: int = Field(0, ge=0)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs/latest"
    save_checkpoints: bool = False
    data: DataSpec = Field(default_factory=DataSpec)
    model: ModelSpec = Field(default_factory=ModelSpec)
    alice: OptimizerSpec = Field(default_factory=OptimizerSpec)
    bob: OptimizerSpec = Field(default_factory=_bob_default)
    glm: GlmSpec = Field(default_factory=GlmSpec)
    layers: LayerSpec = Field(default_factory=LayerSpec)
    attribution: AttributionSpec = Field(default_factory=AttributionSpec)
    corr: CorrSpec = Field(default_factory=CorrSpec)

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        if len(set(v)) != len(v) or min(v) < 0:
            raise ValueError("seeds must be distinct nonnegative integers")
        return v

    @model_validator(mode="after")
    def _resolve_scale(self):
        desk = self.scale == "desk"
        d = self.data
        # paper scale: 32x32 RGB halves and 60000 fresh pairs per epoch
        defaults = {"height": 16 if desk else 32, "width": 16 if desk else 32, "channels": 3,
                    "train_per_class": 600 if desk else 6000, "test_per_class": 200 if desk else 1000,
                    "samples_per_epoch": 10000 if desk else 60000, "test_samples": 2000 if desk else 10000}
        for key, value in defaults.items():
            if getattr(d, key) is None:
                setattr(d, key, value)
        if self.model.profile is None:
            self.model.profile = self.scale
        return self

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _error_path(err) -> str:
    return ".".join(str(p) for p in err["loc"] if not str(p).startswith(("function-", "union[")))


def validate_config(raw: dict | None, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a parsed document after applying dotted-key ``overrides``."""
    raw = copy.deepcopy(raw or {})
    for key, value in (overrides or {}).items():
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(key, "cannot override inside a non-mapping value")
        node[parts[-1]] = value
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigInvalid(_error_path(err) or "<root>", err["msg"]) from None


def load_config_text(path) -> tuple[str, dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid(str(path), f"cannot read config: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(str(path), f"not valid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigInvalid("<root>", "the config document must be a mapping")
    return text, raw or {}


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    _, raw = load_config_text(path)
    return validate_config(raw, overrides)


def schema() -> dict:
    """The published JSON schema of the configuration document."""
    return ExperimentConfig.model_json_schema()
