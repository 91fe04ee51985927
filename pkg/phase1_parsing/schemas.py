"""
Phase 1: Schemas for Run Configuration
Defines Pydantic models for the pipeline configuration and the synthetic
world specification.
"""

from enum import Enum
from pathlib import Path
from typing import ClassVar, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ConfigError(ValueError):
    """Configuration problem anchored to a file line (0 when unknown)."""

    def __init__(self, message: str, line: int = 0, path: Optional[str | Path] = None):
        self.message = message
        self.line = line
        self.path = str(path) if path is not None else None
        super().__init__(self.render())

    def render(self) -> str:
        where = self.path or "<config>"
        return f"{where}:{self.line}: {self.message}"


def split_csv(value):
    """Accept 'a, b, c' strings for list-valued keys."""
    if isinstance(value, str):
        return [part.strip() for part in value.split(',') if part.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WeightsSource(str, Enum):
    """Where the voxel fusion matrices A_v, B_v come from."""
    EMA = "ema"      # A_v = alpha I, B_v = (1 - alpha) I
    DENSE = "dense"  # loaded from a GDFT file
    GD = "gd"        # one descent step on ||h - x||^2


class CameraModel(str, Enum):
    PARALLEL = "parallel"
    PINHOLE = "pinhole"


class HeadFit(str, Enum):
    """Which rendition of the sequence the occupancy head is fitted on."""
    NOISY = "noisy"            # independent noise stream of the same sequence
    NOISELESS = "noiseless"


class GridConfig(_Section):
    extents: tuple[int, int, int] = Field((16, 16, 8), description="Voxel grid extents (X, Y, Z)")
    channels: int = Field(16, ge=1, description="Feature channels c")
    classes: int = Field(4, ge=2, description="Semantic classes including empty")

    @field_validator('extents', mode='before')
    @classmethod
    def split_lists(cls, v):
        return split_csv(v)

    @field_validator('extents')
    @classmethod
    def positive_extents(cls, v):
        if any(e < 1 for e in v):
            raise ValueError(f"extents must be positive, got {v}")
        return v

    @property
    def num_voxels(self) -> int:
        x, y, z = self.extents
        return x * y * z


class DepthConfig(_Section):
    """K uniform bins whose edges span [min_depth, max_depth]."""
    bins: int = Field(32, ge=2, description="Number of depth bins K")
    min_depth: float = Field(1.0, description="Near edge of the first bin")
    max_depth: float = Field(33.0, description="Far edge of the last bin")

    @model_validator(mode='after')
    def ordered_range(self):
        if not self.max_depth > self.min_depth:
            raise ValueError("max_depth must exceed min_depth")
        return self

    @property
    def bin_width(self) -> float:
        return (self.max_depth - self.min_depth) / self.bins

    def bin_centers(self) -> np.ndarray:
        return self.min_depth + self.bin_width * (np.arange(self.bins) + 0.5)


class FusionConfig(_Section):
    """Per-stage toggles; all off reduces a step to lift -> head."""
    voxel: bool = True
    scene: bool = True
    motion: bool = True
    geometry: bool = True
    time_embedding: bool = False

    LABELS: ClassVar[dict[str, str]] = {'V': 'voxel', 'S': 'scene', 'M': 'motion', 'G': 'geometry'}

    @classmethod
    def from_label(cls, label: str, time_embedding: bool = False) -> "FusionConfig":
        """
        Build toggles from an ablation label.

        'B' is the baseline with every stage off, letters V/S/M/G after the
        B enable voxel, scene, motion and geometry fusion, and 'Full' enables
        all four.
        """
        label = label.strip()
        if label == 'Full':
            return cls(time_embedding=time_embedding)
        if not label.startswith('B'):
            raise ValueError(f"fusion label must start with 'B' or be 'Full', got '{label}'")
        flags = {name: False for name in cls.LABELS.values()}
        for letter in label[1:]:
            if letter not in cls.LABELS:
                raise ValueError(f"unknown fusion letter '{letter}' in '{label}'")
            flags[cls.LABELS[letter]] = True
        return cls(time_embedding=time_embedding and flags['voxel'], **flags)


class SceneConfig(_Section):
    eta: float = Field(0.1, ge=0.0, description="Scene-level step size eta_s")
    eps: float = Field(0.05, gt=0.0, description="Z-score variance floor, in squared feature units")
    normalize_step: bool = Field(True, description="Divide eta_s by n*c inside the pipeline")
    update_norm_params: bool = Field(True, description="Carry history in gamma/beta as well as W/b")


class MotionConfig(_Section):
    eta: float = Field(0.01, ge=0.0, description="Motion step size eta_m")
    init_scale: Optional[float] = Field(None, ge=0.0, description="Uniform init half-width for f_m (default 1/sqrt(c))")


class GeometryConfig(_Section):
    gate_bias: float = Field(0.0, description="Initial gate bias (0 gives eta_g = 0.5)")


class VoxelConfig(_Section):
    weights: WeightsSource = WeightsSource.EMA
    alpha: float = Field(0.5, ge=0.0, lt=1.0, description="EMA history weight")
    gd_eta: float = Field(0.25, ge=0.0, description="Step size for weights = gd")
    weights_file: Optional[Path] = Field(None, description="GDFT file with a (2, c, c) tensor for weights = dense")
    dt: float = Field(0.5, gt=0.0, description="Frame interval for the time embedding")

    @model_validator(mode='after')
    def dense_needs_file(self):
        if self.weights == WeightsSource.DENSE and self.weights_file is None:
            raise ValueError("weights = dense requires weights_file")
        return self


class NoiseConfig(_Section):
    sigma_depth: float = Field(1.5, ge=0.0, description="Std of score-space depth perturbation")
    sigma_feat: float = Field(0.6, ge=0.0, description="Std of additive ray feature noise")
    sharpness: float = Field(0.5, gt=0.0, description="Depth score temperature tau in squared bin widths")


class WorldConfig(_Section):
    spec_file: Optional[Path] = Field(None, description="World spec file; built-in default world when unset")
    views: int = Field(1, ge=1, le=2)
    camera: CameraModel = CameraModel.PARALLEL
    ego_velocity: tuple[float, float, float] = Field((0.0, 0.0, 0.0), description="Voxels per frame")
    ego_yaw_rate: float = Field(0.0, description="Radians per frame about the grid centre")

    @field_validator('ego_velocity', mode='before')
    @classmethod
    def split_lists(cls, v):
        return split_csv(v)


class RunConfig(_Section):
    seed: int = 0
    frames: int = Field(30, ge=1)
    fusion: list[str] = Field(default_factory=lambda: ["B", "BV", "BVS", "BVMG", "Full"])
    ridge: float = Field(1e-3, gt=0.0, description="Ridge penalty of the head fit")
    head_fit: HeadFit = Field(HeadFit.NOISY, description="Rendition the head is fitted on")

    @field_validator('fusion', mode='before')
    @classmethod
    def split_lists(cls, v):
        return split_csv(v)

    @field_validator('fusion')
    @classmethod
    def known_labels(cls, v):
        for label in v:
            FusionConfig.from_label(label)
        if not v:
            raise ValueError("at least one fusion label is required")
        return v


class BenchConfig(_Section):
    baseline_n: int = Field(4, ge=0, description="Stacking queue length N_h for the run baseline")
    horizons: list[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16])
    runtime_channels: int = Field(32, ge=1)
    runtime_voxels: int = Field(4096, ge=1)
    warmup: int = Field(3, ge=0)
    repeats: int = Field(11, ge=1)

    @field_validator('horizons', mode='before')
    @classmethod
    def split_lists(cls, v):
        return split_csv(v)


class PipelineConfig(_Section):
    """Complete run configuration; unknown sections or keys are rejected."""
    grid: GridConfig = Field(default_factory=GridConfig)
    depth: DepthConfig = Field(default_factory=DepthConfig)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    motion: MotionConfig = Field(default_factory=MotionConfig)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    voxel: VoxelConfig = Field(default_factory=VoxelConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    world: WorldConfig = Field(default_factory=WorldConfig)
    run: RunConfig = Field(default_factory=RunConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)

    @model_validator(mode='after')
    def embedding_needs_even_channels(self):
        if self.fusion.time_embedding and self.grid.channels % 2:
            raise ValueError("time embedding requires an even channel count")
        return self

    def with_fusion(self, label: str) -> "PipelineConfig":
        """Copy of this config with toggles replaced by an ablation label."""
        toggles = FusionConfig.from_label(label, time_embedding=self.fusion.time_embedding)
        return self.model_copy(update={'fusion': toggles})


# ---------------------------------------------------------------------------
# World specification
# ---------------------------------------------------------------------------


class ClassInfo(BaseModel):
    """One semantic class of the synthetic world."""
    name: str
    dynamic: bool = False
    empty: bool = False


class BoxSpec(BaseModel):
    """Axis-aligned box covering integer cells [origin, origin + size)."""
    origin: tuple[float, float, float]
    size: tuple[int, int, int]
    class_name: str
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator('origin', 'size', 'velocity', mode='before')
    @classmethod
    def split_lists(cls, v):
        return split_csv(v)

    @field_validator('size')
    @classmethod
    def positive_size(cls, v):
        if any(s < 1 for s in v):
            raise ValueError(f"box size must be positive, got {v}")
        return v

    def origin_at(self, t: int) -> np.ndarray:
        """Lower corner at frame t (1-based)."""
        return np.asarray(self.origin, dtype=np.float64) + (t - 1) * np.asarray(self.velocity, dtype=np.float64)


class WorldSpec(BaseModel):
    """Static and dynamic boxes inside a voxel grid, with a class table."""
    extents: tuple[int, int, int]
    classes: list[ClassInfo]
    boxes: list[BoxSpec] = Field(default_factory=list)

    @field_validator('extents', mode='before')
    @classmethod
    def split_lists(cls, v):
        return split_csv(v)

    @model_validator(mode='after')
    def consistent(self):
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        if sum(1 for c in self.classes if c.empty) != 1:
            raise ValueError("exactly one class must be flagged empty")
        for box in self.boxes:
            if box.class_name not in names:
                raise ValueError(f"box class '{box.class_name}' is not in the class table")
            if self.classes[names.index(box.class_name)].empty:
                raise ValueError("boxes cannot carry the empty class")
            lo = np.asarray(box.origin)
            hi = lo + np.asarray(box.size)
            if np.any(lo < 0) or np.any(hi > np.asarray(self.extents)):
                raise ValueError(f"box at {box.origin} with size {box.size} leaves the grid at t=1")
        return self

    @property
    def empty_index(self) -> int:
        return next(i for i, c in enumerate(self.classes) if c.empty)

    @property
    def dynamic_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.classes) if c.dynamic]

    def class_index(self, name: str) -> int:
        return [c.name for c in self.classes].index(name)
