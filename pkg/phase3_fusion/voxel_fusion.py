"""
Phase 3: Voxel-Level Fusion
A single-frame-sized recurrent state H_v = A_v warp(H_v_prev) + B_v V, the
sinusoidal time embedding, and the equivalence between a linear RNN update
and one gradient-descent step on ‖A h - B x‖².
"""

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from phase1_parsing.schemas import ConfigError, VoxelConfig, WeightsSource
from phase1_parsing.tensor_io import read_tensor
from phase2_tensors import (
    CoordField,
    RigidTransform,
    ShapeError,
    VoxelGrid,
    channel_mix,
    transform_coords,
    trilinear_sample,
)
from phase2_tensors.schemas import as_float_array

from .motion_fusion import MotionField


logger = logging.getLogger(__name__)


def _square(v, name: str) -> np.ndarray:
    arr = as_float_array(v)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"{name} must be square, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} is not finite")
    return arr


class FusionWeights(BaseModel):
    """RNN matrices A_v (history) and B_v (current frame)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    A_v: np.ndarray
    B_v: np.ndarray

    @field_validator('A_v', 'B_v', mode='before')
    @classmethod
    def coerce(cls, v, info):
        return _square(v, info.field_name)

    @model_validator(mode='after')
    def same_channels(self):
        if self.A_v.shape != self.B_v.shape:
            raise ShapeError(f"A_v {self.A_v.shape} and B_v {self.B_v.shape} disagree")
        return self

    @property
    def channels(self) -> int:
        return self.A_v.shape[0]

    @classmethod
    def ema(cls, channels: int, alpha: float) -> "FusionWeights":
        """A_v = alpha I, B_v = (1 - alpha) I."""
        eye = np.eye(channels)
        return cls(A_v=alpha * eye, B_v=(1.0 - alpha) * eye)


class GDStepWeights(BaseModel):
    """Quadratic objective ‖A h - B x‖² and descent step size eta."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    A: np.ndarray
    B: np.ndarray
    eta: float = Field(..., ge=0.0)

    @field_validator('A', 'B', mode='before')
    @classmethod
    def coerce(cls, v, info):
        return _square(v, info.field_name)


class VoxelHidden(BaseModel):
    """H_v; its size never depends on how many frames have been fused."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    state: VoxelGrid


def load_fusion_weights(cfg: VoxelConfig, channels: int) -> FusionWeights:
    """Build (A_v, B_v) from the configured source."""
    if cfg.weights == WeightsSource.EMA:
        return FusionWeights.ema(channels, cfg.alpha)
    if cfg.weights == WeightsSource.GD:
        eye = np.eye(channels)
        return prop1_transform(GDStepWeights(A=eye, B=eye, eta=cfg.gd_eta))

    path = Path(cfg.weights_file)
    stacked = read_tensor(path)
    if stacked.shape != (2, channels, channels):
        raise ConfigError(f"dense weights must be (2, {channels}, {channels}), got {stacked.shape}", 0, path)
    return FusionWeights(A_v=stacked[0], B_v=stacked[1])


def warp_volume(h_prev: VoxelGrid, m_fused: MotionField, transform: RigidTransform) -> VoxelGrid:
    """Sample H_v_prev at T(P + M_f)."""
    if h_prev.extents != m_fused.extents:
        raise ShapeError(f"hidden extents {h_prev.extents} vs motion extents {m_fused.extents}")
    coords = transform_coords(transform, CoordField.canonical(h_prev.extents).shifted(m_fused.offsets))
    return trilinear_sample(h_prev, coords)


def voxel_update(
    h_prev: VoxelHidden,
    v_now: VoxelGrid,
    m_fused: MotionField,
    transform: RigidTransform,
    w: FusionWeights,
) -> VoxelHidden:
    """
    H_v = A_v warp(H_v_prev) + B_v V.

    Args:
        h_prev: previous hidden state
        v_now: current (optionally time-embedded) lifted volume
        m_fused: fused motion used for warping
        transform: R_{t->t-1} in grid coordinates
        w: fusion matrices

    Returns:
        New hidden state, which is also V_f
    """
    if h_prev.state.extents != v_now.extents or h_prev.state.channels != v_now.channels:
        raise ShapeError(f"hidden {h_prev.state.data.shape} vs current {v_now.data.shape}")
    if w.channels != v_now.channels:
        raise ShapeError(f"fusion weights are {w.channels}-channel, volume has {v_now.channels}")

    warped = warp_volume(h_prev.state, m_fused, transform)
    fused = channel_mix(w.A_v, warped.flatten()) + channel_mix(w.B_v, v_now.flatten())
    return VoxelHidden(state=VoxelGrid.from_flat(fused, v_now.extents))


def time_embed(t_index: int, dt: float, channels: int) -> np.ndarray:
    """
    Sinusoidal embedding of the elapsed time tau = t_index * dt.

    Entry 2i is sin(tau / 10000^(2i/c)), entry 2i+1 the matching cosine.
    """
    if channels % 2:
        raise ConfigError(f"time embedding needs an even channel count, got {channels}")
    tau = t_index * dt
    freqs = 10000.0 ** (np.arange(0, channels, 2, dtype=np.float64) / channels)
    out = np.empty(channels)
    out[0::2] = np.sin(tau / freqs)
    out[1::2] = np.cos(tau / freqs)
    return out


def prop1_transform(g: GDStepWeights) -> FusionWeights:
    """RNN matrices equivalent to one descent step: A' = I - 2ηAᵀA, B' = 2ηAᵀB."""
    c = g.A.shape[0]
    return FusionWeights(
        A_v=np.eye(c) - 2.0 * g.eta * (g.A.T @ g.A),
        B_v=2.0 * g.eta * (g.A.T @ g.B),
    )


def prop1_check(g: GDStepWeights, h: np.ndarray, x: np.ndarray) -> float:
    """Max-abs gap between the RNN path A'h + B'x and h - 2ηAᵀ(Ah - Bx)."""
    h = np.asarray(h, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    w = prop1_transform(g)
    rnn = w.A_v @ h + w.B_v @ x
    descent = h - 2.0 * g.eta * (g.A.T @ (g.A @ h - g.B @ x))
    return float(np.max(np.abs(rnn - descent)))


class VoxelFusion:
    """Per-sequence driver for the voxel stage."""

    def __init__(self, weights: FusionWeights, time_embedding: bool = False, dt: float = 0.5):
        self.weights = weights
        self.time_embedding = time_embedding
        self.dt = dt

    def embed(self, v_now: VoxelGrid, t_index: int) -> VoxelGrid:
        if not self.time_embedding:
            return v_now
        emb = time_embed(t_index, self.dt, v_now.channels)
        return VoxelGrid(data=v_now.data + emb.reshape(-1, 1, 1, 1))

    def step(
        self,
        h_prev: VoxelHidden | None,
        v_now: VoxelGrid,
        m_fused: MotionField,
        transform: RigidTransform,
        t_index: int,
    ) -> VoxelHidden:
        """Fuse one frame; at the first frame H_v_prev is V itself."""
        v_in = self.embed(v_now, t_index)
        if h_prev is None:
            h_prev = VoxelHidden(state=v_in)
            transform = RigidTransform.identity()
            m_fused = MotionField.zeros(v_now.extents)
        return voxel_update(h_prev, v_in, m_fused, transform, self.weights)
