"""Run configuration: one JSON document, validated, unknown keys rejected."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .backbone import MoEConfig
from .errors import ContractViolation
from .fusion import FusionConfig
from .heads import GridConfig
from .losses import LossWeights
from .model import ModelConfig
from .textenc import NegativeSamplingConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LossWeightsSection(_Strict):
    region: float = Field(1.0, ge=0)
    box: float = Field(7.5, ge=0)
    cls: float = Field(0.5, ge=0)
    dfl: float = Field(1.5, ge=0)
    lb: float = Field(1.5, ge=0)


class SamplingSection(_Strict):
    text_capacity: int = Field(20, ge=1)
    adversarial_ratio: float = Field(0.5, ge=0)
    random_negatives: tuple[int, int] = (0, 10)
    # text list that guides the fusion gates during training:
    # "positive" = each image's own caption, "pool" = the whole batch list
    fusion_texts: Literal["positive", "pool"] = "positive"

    @field_validator("random_negatives")
    @classmethod
    def _range(cls, v):
        if v[0] < 0 or v[1] < v[0]:
            raise ValueError("random_negatives must be an ordered non-negative range")
        return v


class MoESection(_Strict):
    num_experts: int = Field(8, ge=1)
    top_k: int = Field(2, ge=1)
    patch_size: Union[int, Literal["image"]] = 2
    rank: int = Field(4, ge=1)
    depth: int = Field(2, ge=1)
    channels: int = Field(32, ge=4)


class FusionSection(_Strict):
    enabled: bool = True
    heads: int = Field(4, ge=1)
    embed_channels: int = Field(32, ge=1)
    groups: int = Field(4, ge=1)
    tau_init: float = Field(0.1, gt=0)


class HeadsSection(_Strict):
    embed_dim: int = Field(64, ge=2)
    reg_max: int = Field(8, ge=1)
    grid_rows: int = Field(3, ge=1)
    grid_cols: int = Field(3, ge=1)
    region_head: bool = True


class DataSection(_Strict):
    corpus: str = "corpus"
    scenes: int = Field(2500, ge=10)
    image_size: int = Field(64, ge=16)
    optical_fraction: float = Field(0.75, ge=0, le=1)
    data_ratio: float = Field(1.0, gt=0, le=1)
    mask_ratio: float = Field(0.0, ge=0, le=1)
    augment: bool = True

    @field_validator("image_size")
    @classmethod
    def _divisible(cls, v):
        if v % 16:
            raise ValueError("image_size must be divisible by 16")
        return v


class RunConfig(_Strict):
    seed: int = 0
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(12, ge=1)
    lr: float = Field(2e-3, gt=0)
    weight_decay: float = Field(0.025, ge=0)
    final_lr_factor: float = Field(0.01, ge=0, le=1)
    deterministic: bool = True
    val_every: int = Field(5, ge=0)
    loss_weights: LossWeightsSection = LossWeightsSection()
    sampling: SamplingSection = SamplingSection()
    moe: MoESection = MoESection()
    fusion: FusionSection = FusionSection()
    heads: HeadsSection = HeadsSection()
    data: DataSection = DataSection()

    # -- conversions to the library's plain dataclasses ------------------

    def model_config_(self) -> ModelConfig:
        try:
            return ModelConfig(
                moe=MoEConfig(**self.moe.model_dump()),
                fusion=FusionConfig(**self.fusion.model_dump(exclude={"enabled"})),
                embed_dim=self.heads.embed_dim,
                reg_max=self.heads.reg_max,
                grid=GridConfig(self.heads.grid_rows, self.heads.grid_cols),
                use_fusion=self.fusion.enabled,
                use_region_head=self.heads.region_head,
            )
        except TypeError as exc:  # pragma: no cover - schema and dataclasses drifted
            raise ContractViolation(str(exc)) from exc

    def loss_weights_(self) -> LossWeights:
        return LossWeights(**self.loss_weights.model_dump())

    def sampling_(self) -> NegativeSamplingConfig:
        s = self.sampling
        return NegativeSamplingConfig(s.adversarial_ratio, tuple(s.random_negatives), s.text_capacity, self.seed)

    def with_overrides(self, **dotted) -> "RunConfig":
        """Copy with ``section__key=value`` style overrides applied and re-validated."""
        raw = self.model_dump()
        for key, value in dotted.items():
            node = raw
            *path, leaf = key.split("__")
            for part in path:
                node = node[part]
            node[leaf] = value
        return parse_config(raw)


def parse_config(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ContractViolation(f"invalid config: {exc}") from exc


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ContractViolation(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)
