"""Run configuration: a strict YAML (or JSON) schema shared by every CLI command.

Budgets are written in 8-bit levels, so ``epsilon: 16`` means ``16/255``.
Unknown keys are rejected at every level. ``python -m vrap.config`` prints
the JSON schema.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .models import ModelSpec
from .types import AttackConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AttackSection(_Strict):
    epsilon: float = Field(16.0, ge=0, le=255, description="L-inf budget in 8-bit levels (divided by 255)")
    iterations: int = Field(100, ge=1)
    search_range: int = Field(10, ge=0, description="k: search half-width in pixels")
    search_stride: int = Field(5, ge=1, description="tau: search stride in pixels")
    patch_size: float = Field(0.3, gt=0, le=1)
    tv_weight: float = Field(1e-3, ge=0)
    seed: int = 0
    gamma_lr: Optional[float] = Field(None, ge=0)
    optimize_gamma: bool = True

    def to_attack_config(self, **overrides) -> AttackConfig:
        d = self.model_dump()
        d.update(overrides)
        d["epsilon"] = d["epsilon"] / 255.0
        return AttackConfig(**d)


class ModelSection(_Strict):
    architecture: Literal["small-conv", "linear-stub", "constant-stub"] = "small-conv"
    input_shape: tuple[int, int, int] = (32, 32, 3)
    class_count: int = Field(10, ge=2)
    weights_path: Optional[str] = None
    train_seed: int = 0
    width: int = Field(16, ge=1)
    constant_class: int = 0

    def to_spec(self) -> ModelSpec:
        return ModelSpec(**self.model_dump())


class TrainSection(_Strict):
    epochs: int = Field(15, ge=1)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(3e-3, gt=0)
    gate: float = Field(0.85, ge=0, le=1)


class ReferenceSection(_Strict):
    source: Literal["extract-from-image", "external-image-file"] = "extract-from-image"
    path: Optional[str] = None
    donor_split: str = "train"
    seed: int = 0

    @model_validator(mode="after")
    def _path_for_file(self):
        if self.source == "external-image-file" and not self.path:
            raise ValueError("reference.path is required when source is external-image-file")
        return self


class SweepSection(_Strict):
    epsilon: Optional[list[float]] = None
    patch_size: Optional[list[float]] = None
    search_stride: Optional[list[int]] = None
    search_range: Optional[list[int]] = None
    method: Optional[list[Literal["vrap", "fixed"]]] = None

    @field_validator("*")
    @classmethod
    def _non_empty(cls, v):
        if v is not None and len(v) == 0:
            raise ValueError("sweep lists must be non-empty when present")
        return v

    def axes(self) -> dict:
        return {k: list(v) for k, v in self.model_dump().items() if v is not None}


class EvaluationSection(_Strict):
    tau: int = Field(5, ge=1, description="PIR grid stride")
    print_trials: int = Field(50, ge=0)
    print_deviation: float = Field(0.05, ge=0, lt=1)
    print_seed: int = 0
    attention: bool = True
    attention_limit: int = Field(30, ge=0)
    layer: Optional[str] = None


class FormatsSection(_Strict):
    report: bool = True
    plots: bool = True
    heatmaps: bool = False


class RunConfig(_Strict):
    attack: AttackSection = AttackSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    dataset_locator: str = "bundled"
    split: str = "test"
    num_images: int = Field(1, ge=0)
    first_image: int = Field(0, ge=0)
    method: Literal["vrap", "fixed"] = "vrap"
    reference_patch_source: ReferenceSection = ReferenceSection()
    sweep: Optional[SweepSection] = None
    evaluation: EvaluationSection = EvaluationSection()
    output_dir: str = "vrap-out"
    formats: FormatsSection = FormatsSection()

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = cfg.model_copy(update={"attack": cfg.attack.model_copy(update={"seed": int(seed)})})
        if output_dir is not None:
            cfg = cfg.model_copy(update={"output_dir": str(output_dir)})
        return cfg

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data)


def json_schema() -> dict:
    return RunConfig.model_json_schema()


if __name__ == "__main__":
    print(json.dumps(json_schema(), indent=2))
