"""
Phase 4: Pipeline Schemas
Frame inputs, the hidden-state bundle threaded between frames, and the
occupancy head.
"""

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from phase2_tensors import RigidTransform, ShapeError, VoxelGrid
from phase2_tensors.schemas import as_float_array
from phase3_fusion import CameraPose, DepthDistribution, MotionField, SceneParams, VoxelHidden


class SequenceError(ValueError):
    """Frames or states of one sequence do not fit together."""


class ViewInput(BaseModel):
    """One camera's observation at one frame."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    features: np.ndarray = Field(..., description="Ray features, rays x c")
    geometry: DepthDistribution = Field(..., description="Per-ray depth distribution G")
    camera: CameraPose = Field(..., description="Ray bundle and prev->cur camera motion")
    cam_to_grid: RigidTransform = Field(..., description="Camera coordinates -> grid coordinates")

    @field_validator('features', mode='before')
    @classmethod
    def coerce_features(cls, v):
        arr = as_float_array(v)
        if arr.ndim != 2:
            raise ShapeError(f"ray features must be rays x c, got {arr.shape}")
        return arr

    @model_validator(mode='after')
    def matching_rays(self):
        rays = self.features.shape[0]
        if self.geometry.rays != rays or self.camera.rays != rays:
            raise ShapeError(
                f"view has {rays} feature rows, {self.geometry.rays} distributions, {self.camera.rays} rays"
            )
        return self

    @property
    def rays(self) -> int:
        return self.features.shape[0]


class FrameInput(BaseModel):
    """Everything the pipeline sees at frame t."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    views: list[ViewInput]
    ego: RigidTransform = Field(default_factory=RigidTransform.identity, description="R_{t->t-1} in grid coordinates")
    frame_index: int = Field(1, ge=1)
    dt: float = Field(0.5, gt=0.0)

    @field_validator('views')
    @classmethod
    def at_least_one(cls, v):
        if not v:
            raise ValueError("a frame needs at least one view")
        return v


class HiddenStateBundle(BaseModel):
    """
    H_v, H_s, H_m and one H_g per view after some frame.

    Every component is single-frame sized, so the bundle's serialized
    length is the same at every frame of a sequence.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    h_v: VoxelHidden
    h_s: SceneParams
    h_m: MotionField
    h_g: list[DepthDistribution]
    frame_index: int = Field(..., ge=1, description="Last frame folded into the state")

    @model_validator(mode='after')
    def consistent(self):
        if self.h_v.state.extents != self.h_m.extents:
            raise SequenceError(f"h_v extents {self.h_v.state.extents} vs h_m extents {self.h_m.extents}")
        if self.h_s.channels != self.h_v.state.channels:
            raise SequenceError(f"h_s has {self.h_s.channels} channels, h_v {self.h_v.state.channels}")
        return self


class HeadParams(BaseModel):
    """f_o: per-voxel affine classifier."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    weight: np.ndarray = Field(..., description="classes x c")
    bias: np.ndarray = Field(..., description="classes")

    @field_validator('weight', mode='before')
    @classmethod
    def coerce_weight(cls, v):
        arr = as_float_array(v)
        if arr.ndim != 2:
            raise ShapeError(f"head weight must be classes x c, got {arr.shape}")
        return arr

    @field_validator('bias', mode='before')
    @classmethod
    def coerce_bias(cls, v):
        return as_float_array(v).reshape(-1)

    @model_validator(mode='after')
    def finite(self):
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(f"{self.weight.shape[0]} weight rows, {self.bias.shape[0]} biases")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("head parameters are not finite")
        return self

    @property
    def classes(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def zeros(cls, classes: int, channels: int) -> "HeadParams":
        return cls(weight=np.zeros((classes, channels)), bias=np.zeros(classes))


class OccupancyPrediction(BaseModel):
    """Per-voxel class logits O; `features` keeps the volume the head saw."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    logits: VoxelGrid
    features: Optional[VoxelGrid] = None

    @field_validator('logits')
    @classmethod
    def finite_logits(cls, v):
        if not np.all(np.isfinite(v.data)):
            raise ValueError("occupancy logits are not finite")
        return v

    def labels(self) -> np.ndarray:
        """Argmax class per voxel, dims (X, Y, Z)."""
        return np.argmax(self.logits.data, axis=0)
