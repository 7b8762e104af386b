"""JSON run configuration, validated with pydantic; unknown keys are rejected."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..block import BackboneConfig, BlockConfig
from ..complexity import WorkloadShape
from ..xa import BEVGrid, CameraRig, XAConfig, pinhole_rig

COMMANDS = ("verify", "gradcheck", "forward", "flops", "bench")


class ConfigError(ValueError):
    """Config file missing, not JSON, or not matching the schema."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BlockSection(_Strict):
    C: int = Field(8, gt=0)
    N: int = Field(1, gt=0)
    R: int | None = Field(None, gt=0)
    G: int = Field(2, gt=0)
    conv_type: Literal["non_causal", "causal", "none"] = "non_causal"
    traversal: Literal["single", "bidirectional"] = "single"
    use_state: bool = True
    use_casf: bool = True
    scan_method: Literal["sequential", "parallel", "chunked"] = "sequential"
    chunk: int | None = Field(None, gt=0)
    H: int = Field(4, gt=0)
    W: int = Field(4, gt=0)

    def build(self) -> BlockConfig:
        return BlockConfig(**self.model_dump(exclude={"H", "W"}))


class BackboneSection(_Strict):
    C: int = Field(32, gt=0)
    depths: tuple[int, int, int, int] = (1, 1, 2, 1)
    d_head: int = Field(4, gt=0)
    in_channels: int = Field(3, gt=0)
    N: int = Field(1, gt=0)
    conv_type: Literal["non_causal", "causal", "none"] = "non_causal"
    traversal: Literal["single", "bidirectional"] = "single"
    use_state: bool = True
    use_casf: bool = True
    scan_method: Literal["sequential", "parallel", "chunked"] = "sequential"
    input_shape: tuple[int, int, int, int] = (1, 3, 64, 64)

    def build(self) -> BackboneConfig:
        return BackboneConfig(**self.model_dump(exclude={"input_shape"}))


class XASection(_Strict):
    C: int = Field(8, gt=0)
    C_in: int | None = Field(None, gt=0)
    N: Literal[1] = 1
    R: int | None = Field(None, gt=0)
    F: int = Field(2, gt=0)
    conv_type: Literal["non_causal", "causal", "none"] = "non_causal"
    traversal: Literal["single", "bidirectional"] = "single"
    scan_method: Literal["sequential", "parallel", "chunked"] = "sequential"
    feature_hw: tuple[int, int] = (8, 8)
    batch: int = Field(1, gt=0)

    def build(self, num_cams: int, Z: int) -> XAConfig:
        return XAConfig(**self.model_dump(exclude={"feature_hw", "batch"}), num_cams=num_cams, Z=Z)


class GridSection(_Strict):
    Hb: int = Field(4, gt=0)
    Wb: int = Field(4, gt=0)
    x_range: tuple[float, float] = (-8.0, 8.0)
    y_range: tuple[float, float] = (-8.0, 8.0)
    z_heights: tuple[float, ...] = (-1.0, 0.0, 1.0, 2.0)

    @field_validator("z_heights")
    @classmethod
    def _increasing(cls, v):
        if not v or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("z_heights must be non-empty and strictly increasing")
        return v

    def build(self) -> BEVGrid:
        return BEVGrid(self.Hb, self.Wb, self.x_range, self.y_range, self.z_heights)


class RigSection(_Strict):
    """Either explicit row-major 4x4 matrices or a ring of pinhole cameras."""

    h_img: int = Field(32, gt=0)
    w_img: int = Field(32, gt=0)
    lidar2img: list[list[float]] | None = None
    yaws: list[float] | None = None
    focal: float | None = Field(None, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.lidar2img is not None:
            if not self.lidar2img or any(len(m) != 16 for m in self.lidar2img):
                raise ValueError("lidar2img must be a non-empty list of 16-element row-major matrices")
            if not np.all(np.isfinite(np.asarray(self.lidar2img))):
                raise ValueError("lidar2img entries must be finite")
        return self

    def build(self) -> CameraRig:
        if self.lidar2img is not None:
            return CameraRig(np.asarray(self.lidar2img, dtype=np.float64).reshape(-1, 4, 4), self.h_img, self.w_img)
        yaws = self.yaws if self.yaws is not None else [0.0, np.pi / 2, np.pi, 3 * np.pi / 2]
        return pinhole_rig(list(yaws), self.h_img, self.w_img, focal=self.focal)


class Tolerances(_Strict):
    scan: float = Field(1e-10, gt=0)
    oracle: float = Field(1e-12, gt=0)
    grad_op: float = Field(1e-5, gt=0)
    grad_block: float = Field(1e-5, gt=0)
    grad_xa: float = Field(1e-4, gt=0)
    grad_backbone: float = Field(1e-4, gt=0)
    kink: float = Field(1e-3, gt=0)
    reach: float = Field(1e-8, gt=0)
    macs: float = Field(0.05, gt=0)


class ShapeSection(_Strict):
    Hb: int = Field(ge=0)
    Wb: int = Field(ge=0)
    num_cams: int = Field(ge=0)
    h: int = Field(ge=0)
    w: int = Field(ge=0)

    def build(self) -> WorkloadShape:
        return WorkloadShape(self.Hb, self.Wb, self.num_cams, self.h, self.w)


class RunConfig(_Strict):
    command: Literal["verify", "gradcheck", "forward", "flops", "bench"] = "verify"
    seed: int = Field(0, ge=0, lt=2**64)
    block: BlockSection = BlockSection()
    backbone: BackboneSection = BackboneSection()
    xa: XASection = XASection()
    grid: GridSection = GridSection()
    rig: RigSection = RigSection()
    tolerances: Tolerances = Tolerances()
    extra_shapes: list[ShapeSection] = []
    bench_lengths: list[int] = [64, 256, 1024]
    out: str | None = None

    @model_validator(mode="after")
    def _consistent(self):
        try:
            self.block.build()
            self.backbone.build()
        except ValueError as e:
            raise ValueError(str(e)) from None
        if any(n <= 0 for n in self.bench_lengths):
            raise ValueError("bench_lengths must be positive")
        return self


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from None


def load_config(path: str | Path | None) -> RunConfig:
    """Read and validate a JSON config; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(data)
