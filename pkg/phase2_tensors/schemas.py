"""
Phase 2: Tensor Schemas
Pydantic models for the dense volumes, coordinate fields and rigid transforms
every fusion operator is built from.
"""

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ShapeError(ValueError):
    """Raised when tensor dimensions do not agree."""


def as_float_array(value, name: str = "tensor") -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    arr = np.ascontiguousarray(np.asarray(value, dtype=np.float64))
    return arr


class VoxelGrid(BaseModel):
    """
    Dense rank-4 feature volume laid out as (channels, X, Y, Z).

    Carries V, H_v and fused features. `flatten()` gives the (c, n) matrix
    view used by the channel-mixing operators, with n = X*Y*Z in row-major
    voxel order.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    data: np.ndarray = Field(..., description="Feature values, dims (c, X, Y, Z)")

    @field_validator('data', mode='before')
    @classmethod
    def coerce_data(cls, v):
        arr = as_float_array(v)
        if arr.ndim != 4:
            raise ValueError(f"VoxelGrid data must be rank 4 (c, X, Y, Z), got rank {arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] * arr.shape[2] * arr.shape[3] < 1:
            raise ValueError(f"VoxelGrid needs c >= 1 and at least one voxel, got {arr.shape}")
        return arr

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def extents(self) -> tuple[int, int, int]:
        return tuple(int(e) for e in self.data.shape[1:])

    @property
    def num_voxels(self) -> int:
        x, y, z = self.extents
        return x * y * z

    def flatten(self) -> np.ndarray:
        """Return the (c, n) matrix view."""
        return self.data.reshape(self.channels, self.num_voxels)

    @classmethod
    def from_flat(cls, flat: np.ndarray, extents: tuple[int, int, int]) -> "VoxelGrid":
        """Inverse of `flatten()`."""
        flat = np.asarray(flat, dtype=np.float64)
        x, y, z = extents
        if flat.ndim != 2 or flat.shape[1] != x * y * z:
            raise ShapeError(f"cannot unflatten {flat.shape} into extents {extents}")
        return cls(data=flat.reshape(flat.shape[0], x, y, z))

    @classmethod
    def zeros(cls, channels: int, extents: tuple[int, int, int]) -> "VoxelGrid":
        return cls(data=np.zeros((channels, *extents)))


class CoordField(BaseModel):
    """
    Per-voxel 3D coordinates in voxel-index units, dims (3, X, Y, Z).

    The canonical grid P satisfies P[:, i, j, k] == (i, j, k).
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    data: np.ndarray = Field(..., description="Coordinates, dims (3, ...)")

    @field_validator('data', mode='before')
    @classmethod
    def coerce_data(cls, v):
        arr = as_float_array(v)
        if arr.ndim < 2 or arr.shape[0] != 3:
            raise ValueError(f"CoordField data must have leading dimension 3, got {arr.shape}")
        return arr

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(int(e) for e in self.data.shape[1:])

    @classmethod
    def canonical(cls, extents: tuple[int, int, int]) -> "CoordField":
        """The identity lattice P."""
        grids = np.meshgrid(*(np.arange(e, dtype=np.float64) for e in extents), indexing='ij')
        return cls(data=np.stack(grids, axis=0))

    def shifted(self, offsets: np.ndarray) -> "CoordField":
        """P + M for an offset field of identical dims."""
        offsets = np.asarray(offsets, dtype=np.float64)
        if offsets.shape != self.data.shape:
            raise ShapeError(f"offset dims {offsets.shape} do not match coords {self.data.shape}")
        return CoordField(data=self.data + offsets)


class RigidTransform(BaseModel):
    """
    Rotation plus translation acting on 3D points: x -> R x + t.

    Translation is expressed in voxel units when applied to grid coordinates.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rotation: np.ndarray = Field(default_factory=lambda: np.eye(3), description="3x3 orthonormal matrix")
    translation: np.ndarray = Field(default_factory=lambda: np.zeros(3), description="3-vector")

    @field_validator('rotation', mode='before')
    @classmethod
    def coerce_rotation(cls, v):
        arr = as_float_array(v)
        if arr.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {arr.shape}")
        if not np.allclose(arr.T @ arr, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        return arr

    @field_validator('translation', mode='before')
    @classmethod
    def coerce_translation(cls, v):
        arr = as_float_array(v).reshape(-1)
        if arr.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {arr.shape}")
        return arr

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0), center: Optional[np.ndarray] = None) -> "RigidTransform":
        """
        Rotation by `yaw` radians about the z-axis, optionally about `center`,
        followed by `translation`.
        """
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        t = np.asarray(translation, dtype=np.float64)
        if center is not None:
            center = np.asarray(center, dtype=np.float64)
            t = t + center - rot @ center
        return cls(rotation=rot, translation=t)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply `other` first, then `self`."""
        return RigidTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rotation=rt, translation=-(rt @ self.translation))

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.rotation, np.eye(3)) and not np.any(self.translation))
