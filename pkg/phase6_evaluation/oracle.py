"""
Phase 6: Oracles
Independent reference computations: central finite differences, a naive
per-column chain-rule scene gradient, and the multi-frame stacking baseline
that stores the last N_h volumes.
"""

import logging
from typing import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from phase1_parsing.tensor_io import encode_tensor
from phase2_tensors import CoordField, DEFAULT_EPS, RigidTransform, ShapeError, VoxelGrid, channel_mix
from phase2_tensors import transform_coords, trilinear_sample
from phase3_fusion import AugmentWeights, SceneGradient, SceneParams


logger = logging.getLogger(__name__)


class OracleError(ArithmeticError):
    """The evaluated function returned a non-finite value."""


def finite_diff_grad(loss: Callable[[np.ndarray], float], at: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """
    Central-difference gradient of a scalar function.

    Entry i uses step h * max(1, |x_i|).

    Args:
        loss: scalar function of an array shaped like `at`
        at: evaluation point (not modified)
        h: base step, must be positive

    Returns:
        Array shaped like `at`
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    x0 = np.array(at, dtype=np.float64)
    grad = np.zeros_like(x0)
    x = x0.copy()
    logger.debug("finite differences over %d entries", x0.size)

    for j in np.ndindex(x0.shape):
        step = h * max(1.0, abs(x0[j]))
        x[j] = x0[j] + step
        f_plus = loss(x)
        x[j] = x0[j] - step
        f_minus = loss(x)
        x[j] = x0[j]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise OracleError(f"non-finite loss while probing entry {j}")
        grad[j] = (f_plus - f_minus) / (2.0 * step)
    return grad


def naive_chain_gradient(
    v: np.ndarray,
    params: SceneParams,
    aug: AugmentWeights,
    eps: float = DEFAULT_EPS,
) -> SceneGradient:
    """
    Scene gradient evaluated column by column with an explicit c x c
    normalization Jacobian per column. Slow reference for the fused path.
    """
    v = np.asarray(v, dtype=np.float64)
    c, n = v.shape
    if c != params.channels:
        raise ShapeError(f"expected {params.channels} channels, got {c}")
    ones = np.ones(c)

    d_gamma = np.zeros(c)
    d_beta = np.zeros(c)
    d_W = np.zeros((c, c))
    d_b = np.zeros(c)

    for j in range(n):
        x1 = aug.Q1 @ v[:, j]
        target = aug.Q2 @ v[:, j]
        z = params.W @ x1 + params.b
        mu = z.sum() / c
        sigma = np.sqrt(((z - mu) ** 2).sum() / c + eps)
        zhat = (z - mu) / sigma
        delta1 = params.gamma * zhat + params.beta + x1 - target

        d_gamma += 2.0 * delta1 * zhat
        d_beta += 2.0 * delta1

        d_zhat = 2.0 * params.gamma * delta1
        jac = (np.eye(c) - np.outer(ones, ones) / c - np.outer(zhat, zhat) / c) / sigma
        d_z = jac.T @ d_zhat
        d_W += np.outer(d_z, x1)
        d_b += d_z

    return SceneGradient(d_gamma=d_gamma, d_beta=d_beta, d_W=d_W, d_b=d_b)


class StackingState(BaseModel):
    """
    Multi-frame baseline: the last N_h volumes, warped to the current
    frame, most recent first, and a linear fuse map over the stacked
    channels.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    capacity: int = Field(..., ge=0, description="N_h")
    fuse: np.ndarray = Field(..., description="c x (N_h + 1) c")
    queue: list[VoxelGrid] = Field(default_factory=list)

    @classmethod
    def averaging(cls, capacity: int, channels: int) -> "StackingState":
        """Uniform mean over the N_h + 1 stacked frames."""
        block = np.eye(channels) / (capacity + 1)
        return cls(capacity=capacity, fuse=np.hstack([block] * (capacity + 1)))

    def history_nbytes(self) -> int:
        return sum(len(encode_tensor(grid.data)) for grid in self.queue)


def stacking_update(state: StackingState, v_now: VoxelGrid, transform: RigidTransform) -> tuple[VoxelGrid, StackingState]:
    """
    Warp the queue into the current frame, fuse it with V, and push V.

    Until N_h frames have been seen the missing slots repeat V.
    """
    c = v_now.channels
    if state.fuse.shape != (c, (state.capacity + 1) * c):
        raise ShapeError(f"fuse map {state.fuse.shape} does not fit N_h={state.capacity}, c={c}")

    coords = transform_coords(transform, CoordField.canonical(v_now.extents))
    warped = [trilinear_sample(grid, coords) for grid in state.queue]

    slots = [v_now] + warped
    slots += [v_now] * (state.capacity + 1 - len(slots))
    stacked = np.vstack([grid.flatten() for grid in slots])
    fused = VoxelGrid.from_flat(channel_mix(state.fuse, stacked), v_now.extents)

    queue = ([v_now] + warped)[:state.capacity]
    return fused, state.model_copy(update={'queue': queue})
