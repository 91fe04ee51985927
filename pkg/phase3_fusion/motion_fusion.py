"""
Phase 3: Motion Fusion
Per-voxel offset prediction, motion-compensated warping of the motion state
and one descent step on L_m = ‖Warp(H_m_prev) - M‖², differentiated through
the trilinear sampler.
"""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from phase2_tensors import (
    CoordField,
    RigidTransform,
    ShapeError,
    VoxelGrid,
    channel_mix,
    transform_coords,
    trilinear_jacobian,
    trilinear_sample,
)
from phase2_tensors.schemas import as_float_array


logger = logging.getLogger(__name__)


class MotionField(BaseModel):
    """Per-voxel 3-vector offsets in voxel units, dims (3, X, Y, Z)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    offsets: np.ndarray = Field(..., description="Displacements, dims (3, X, Y, Z)")

    @field_validator('offsets', mode='before')
    @classmethod
    def coerce_offsets(cls, v):
        arr = as_float_array(v)
        if arr.ndim != 4 or arr.shape[0] != 3:
            raise ShapeError(f"motion offsets must be (3, X, Y, Z), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("motion offsets are not finite")
        return arr

    @property
    def extents(self) -> tuple[int, int, int]:
        return tuple(int(e) for e in self.offsets.shape[1:])

    @classmethod
    def zeros(cls, extents: tuple[int, int, int]) -> "MotionField":
        return cls(offsets=np.zeros((3, *extents)))

    def as_grid(self) -> VoxelGrid:
        return VoxelGrid(data=self.offsets)


class MotionPredictor(BaseModel):
    """f_m: per-voxel linear layer from c channels to a 3-vector."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    weight: np.ndarray = Field(..., description="3 x c")
    bias: np.ndarray = Field(default_factory=lambda: np.zeros(3))

    @field_validator('weight', mode='before')
    @classmethod
    def coerce_weight(cls, v):
        arr = as_float_array(v)
        if arr.ndim != 2 or arr.shape[0] != 3:
            raise ShapeError(f"motion predictor weight must be 3 x c, got {arr.shape}")
        return arr

    @field_validator('bias', mode='before')
    @classmethod
    def coerce_bias(cls, v):
        arr = as_float_array(v).reshape(-1)
        if arr.shape != (3,):
            raise ShapeError(f"motion predictor bias must be a 3-vector, got {arr.shape}")
        return arr

    @classmethod
    def random(cls, channels: int, rng: np.random.Generator, scale: Optional[float] = None) -> "MotionPredictor":
        """Uniform(-a, a) weights, a = 1/sqrt(c) unless given; zero bias."""
        a = 1.0 / np.sqrt(channels) if scale is None else scale
        return cls(weight=rng.uniform(-a, a, size=(3, channels)), bias=np.zeros(3))


def _check_pair(h_prev: MotionField, m_now: MotionField) -> None:
    if h_prev.extents != m_now.extents:
        raise ShapeError(f"motion extents disagree: {h_prev.extents} vs {m_now.extents}")


def _sample_coords(m_now: MotionField, transform: RigidTransform) -> CoordField:
    """P̂ = T(P + M)."""
    base = CoordField.canonical(m_now.extents)
    return transform_coords(transform, base.shifted(m_now.offsets))


def predict_motion(v: VoxelGrid, f_m: MotionPredictor) -> MotionField:
    """M = f_m(V) applied voxel by voxel."""
    if f_m.weight.shape[1] != v.channels:
        raise ShapeError(f"predictor expects {f_m.weight.shape[1]} channels, volume has {v.channels}")
    flat = channel_mix(f_m.weight, v.flatten(), f_m.bias)
    return MotionField(offsets=flat.reshape(3, *v.extents))


def warp_motion(h_prev: MotionField, m_now: MotionField, transform: RigidTransform) -> MotionField:
    """Sample(H_m_prev; T(P + M))."""
    _check_pair(h_prev, m_now)
    warped = trilinear_sample(h_prev.as_grid(), _sample_coords(m_now, transform))
    return MotionField(offsets=warped.data)


def motion_loss(h_prev: MotionField, m_now: MotionField, transform: RigidTransform) -> float:
    residual = warp_motion(h_prev, m_now, transform).offsets - m_now.offsets
    return float(np.sum(residual * residual))


def motion_gradient(h_prev: MotionField, m_now: MotionField, transform: RigidTransform) -> MotionField:
    """
    Gradient of L_m with respect to M.

    Per voxel, with r = Warp(H_m_prev) - M and J[ch, a] = d sample_ch / d p̂_a:

        ∇_b = 2 Σ_ch r_ch Σ_a J[ch, a] R[a, b] - 2 r_b

    which is 2 (RᵀJᵀ - I) r in column form. Translation does not enter.
    """
    _check_pair(h_prev, m_now)
    coords = _sample_coords(m_now, transform)
    grid = h_prev.as_grid()

    warped = trilinear_sample(grid, coords).data
    jac = trilinear_jacobian(grid, coords)
    residual = warped - m_now.offsets

    # d p̂ / d M = R, so d sample / d M = J R
    jac_m = np.einsum('ca...,ab->cb...', jac, transform.rotation)
    grad = 2.0 * np.einsum('c...,cb...->b...', residual, jac_m) - 2.0 * residual
    return MotionField(offsets=grad)


def motion_update(m_now: MotionField, grad: MotionField, eta_m: float) -> MotionField:
    """H_m = M - eta_m * ∇; also the fused motion M_f."""
    if eta_m < 0:
        raise ValueError(f"eta_m must be non-negative, got {eta_m}")
    return MotionField(offsets=m_now.offsets - eta_m * grad.offsets)


class MotionFusion:
    """Per-sequence driver for the motion stage."""

    def __init__(self, predictor: MotionPredictor, eta: float):
        self.predictor = predictor
        self.eta = eta

    def step(
        self,
        v_now: VoxelGrid,
        h_prev: Optional[MotionField],
        transform: RigidTransform,
    ) -> MotionField:
        """
        Predict M from the lifted volume and fuse it with the history.

        At the first frame (h_prev None) the state starts as the prediction.
        """
        m_now = predict_motion(v_now, self.predictor)
        if h_prev is None:
            return m_now
        grad = motion_gradient(h_prev, m_now, transform)
        logger.debug("motion step: loss=%.4e", motion_loss(h_prev, m_now, transform))
        return motion_update(m_now, grad, self.eta)
