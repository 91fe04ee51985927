"""
Phase 3: Geometry Fusion
Per-ray depth distributions over K uniform bins are carried across frames:
the previous distribution is re-binned into the current camera, blended with
the new observation through a learned scalar gate per ray, and stays on the
probability simplex throughout.
"""

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from phase2_tensors import RigidTransform, ShapeError
from phase2_tensors.schemas import as_float_array


logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9
# bin positions this close to an integer are snapped onto it
SNAP_TOL = 1e-9


class DepthDistribution(BaseModel):
    """Per-ray probabilities over K depth bins; G and H_g."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    probs: np.ndarray = Field(..., description="rays x K, rows on the simplex")
    bin_centers: np.ndarray = Field(..., description="K uniformly spaced metric depths")

    @field_validator('probs', mode='before')
    @classmethod
    def coerce_probs(cls, v):
        arr = as_float_array(v)
        if arr.ndim != 2:
            raise ShapeError(f"depth probs must be rays x K, got {arr.shape}")
        if np.any(arr < 0):
            raise ValueError("depth probabilities must be non-negative")
        if not np.allclose(arr.sum(axis=1), 1.0, rtol=0.0, atol=SIMPLEX_TOL):
            raise ValueError("depth probability rows must sum to 1")
        return arr

    @field_validator('bin_centers', mode='before')
    @classmethod
    def uniform_centers(cls, v):
        arr = as_float_array(v).reshape(-1)
        steps = np.diff(arr)
        if arr.size < 2 or np.any(steps <= 0):
            raise ValueError("bin centers must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("bin centers must be uniformly spaced")
        return arr

    @model_validator(mode='after')
    def matching_bins(self):
        if self.probs.shape[1] != self.bin_centers.shape[0]:
            raise ShapeError(f"{self.probs.shape[1]} bins in probs, {self.bin_centers.shape[0]} centers")
        return self

    @property
    def rays(self) -> int:
        return self.probs.shape[0]

    @property
    def bins(self) -> int:
        return self.probs.shape[1]

    @property
    def bin_width(self) -> float:
        return float(self.bin_centers[1] - self.bin_centers[0])


class GateParams(BaseModel):
    """f_eta_g: linear map from concat(Ĥ_g, G) to one scalar per ray."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    weight: np.ndarray = Field(..., description="2K-vector")
    bias: float = 0.0

    @field_validator('weight', mode='before')
    @classmethod
    def coerce_weight(cls, v):
        return as_float_array(v).reshape(-1)

    @classmethod
    def zeros(cls, bins: int, bias: float = 0.0) -> "GateParams":
        return cls(weight=np.zeros(2 * bins), bias=bias)


class CameraPose(BaseModel):
    """
    Camera motion between frames and the fixed ray bundle of the camera.

    `transform` maps previous-camera coordinates to current-camera
    coordinates; rays are described in camera coordinates.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    transform: RigidTransform = Field(default_factory=RigidTransform.identity)
    origins: np.ndarray = Field(..., description="rays x 3")
    directions: np.ndarray = Field(..., description="rays x 3, unit length")

    @field_validator('origins', 'directions', mode='before')
    @classmethod
    def coerce_rays(cls, v):
        arr = as_float_array(v)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ShapeError(f"ray geometry must be rays x 3, got {arr.shape}")
        return arr

    @model_validator(mode='after')
    def unit_directions(self):
        if self.origins.shape != self.directions.shape:
            raise ShapeError(f"{self.origins.shape[0]} origins for {self.directions.shape[0]} directions")
        if not np.allclose(np.linalg.norm(self.directions, axis=1), 1.0, rtol=0.0, atol=1e-12):
            raise ValueError("ray directions must be unit length")
        return self

    @property
    def rays(self) -> int:
        return self.origins.shape[0]

    def points(self, depths: np.ndarray) -> np.ndarray:
        """3D points at each depth along each ray, dims (rays, K, 3)."""
        return self.origins[:, None, :] + depths[None, :, None] * self.directions[:, None, :]


def _nearest_rays(points: np.ndarray, pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """
    Associate (m, 3) points with the closest ray by perpendicular distance.

    Returns:
        (ray index per point, depth along that ray per point)
    """
    rel = points[:, None, :] - pose.origins[None, :, :]
    along = np.einsum('mrk,rk->mr', rel, pose.directions)
    perp = rel - along[:, :, None] * pose.directions[None, :, :]
    dist = np.einsum('mrk,mrk->mr', perp, perp)
    ray = np.argmin(dist, axis=1)
    return ray, along[np.arange(points.shape[0]), ray]


def renormalize(mass: np.ndarray) -> np.ndarray:
    """Rows scaled onto the simplex; rows without mass become uniform."""
    totals = mass.sum(axis=1, keepdims=True)
    uniform = np.full_like(mass, 1.0 / mass.shape[1])
    safe = np.where(totals > 0, totals, 1.0)
    return np.where(totals > 0, mass / safe, uniform)


def warp_geometry(h_prev: DepthDistribution, pose: CameraPose) -> DepthDistribution:
    """
    Re-bin the previous depth distribution into the current camera.

    Each (ray, bin) is lifted to its 3D point, moved by the camera
    transform, attached to the nearest current ray and split linearly
    between the two enclosing bins of that ray. Mass landing outside
    [d_1, d_K] is dropped before renormalization.
    """
    if h_prev.rays != pose.rays:
        raise ShapeError(f"{h_prev.rays} distributions for {pose.rays} rays")

    centers = h_prev.bin_centers
    K = h_prev.bins
    out = np.zeros_like(h_prev.probs)

    for k in range(K):
        moved = pose.transform.apply_points(pose.points(centers[k:k + 1])[:, 0, :])
        ray, depth = _nearest_rays(moved, pose)

        pos = (depth - centers[0]) / h_prev.bin_width
        nearest = np.round(pos)
        pos = np.where(np.abs(pos - nearest) < SNAP_TOL, nearest, pos)

        inside = (pos >= 0) & (pos <= K - 1)
        lower = np.floor(pos[inside]).astype(np.int64)
        frac = pos[inside] - lower
        mass = h_prev.probs[inside, k]
        rows = ray[inside]

        np.add.at(out, (rows, lower), (1.0 - frac) * mass)
        upper = np.minimum(lower + 1, K - 1)
        np.add.at(out, (rows, upper), np.where(lower + 1 < K, frac * mass, 0.0))

    dropped = 1.0 - out.sum() / max(h_prev.probs.sum(), 1e-300)
    logger.debug("geometry warp dropped %.2f%% of the mass", 100.0 * dropped)
    return DepthDistribution(probs=renormalize(out), bin_centers=centers)


# open interval endpoints representable in float64
_GATE_LO = np.nextafter(0.0, 1.0)
_GATE_HI = np.nextafter(1.0, 0.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function clipped to the open interval (0, 1)."""
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return np.clip(out, _GATE_LO, _GATE_HI)


def gate(h_warped: DepthDistribution, g_now: DepthDistribution, params: GateParams) -> np.ndarray:
    """eta_g = sigmoid(w · concat(Ĥ_g, G) + b), one value per ray, strictly inside (0, 1)."""
    if h_warped.probs.shape != g_now.probs.shape:
        raise ShapeError(f"gate inputs disagree: {h_warped.probs.shape} vs {g_now.probs.shape}")
    if params.weight.shape[0] != 2 * g_now.bins:
        raise ShapeError(f"gate weight has {params.weight.shape[0]} entries, expected {2 * g_now.bins}")
    features = np.concatenate([h_warped.probs, g_now.probs], axis=1)
    return _sigmoid(features @ params.weight + params.bias)


def geometry_update(h_warped: DepthDistribution, g_now: DepthDistribution, gates: np.ndarray) -> DepthDistribution:
    """H_g = (1 - eta_g) Ĥ_g + eta_g G per ray; agreement is a fixed point."""
    gates = np.asarray(gates, dtype=np.float64).reshape(-1, 1)
    if gates.shape[0] != g_now.rays or h_warped.probs.shape != g_now.probs.shape:
        raise ShapeError("geometry update inputs disagree")
    if np.any(gates < 0) or np.any(gates > 1):
        raise ValueError("gates must lie in [0, 1]")
    h, g = h_warped.probs, g_now.probs
    blended = np.where(h == g, g, (1.0 - gates) * h + gates * g)
    return DepthDistribution(probs=blended, bin_centers=g_now.bin_centers)


class GeometryFusion:
    """Per-sequence driver for the geometry stage of one view."""

    def __init__(self, params: GateParams):
        self.params = params

    def step(self, h_prev: DepthDistribution | None, g_now: DepthDistribution, pose: CameraPose) -> DepthDistribution:
        """Warp, gate and blend; the first frame starts from G itself."""
        if h_prev is None:
            return g_now
        warped = warp_geometry(h_prev, pose)
        gates = gate(warped, g_now, self.params)
        logger.debug("geometry step: mean gate %.3f", float(gates.mean()))
        return geometry_update(warped, g_now, gates)
