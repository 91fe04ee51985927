"""
Phase 2: Tensor Primitives
Matrix product, channel-wise Z-score normalization and rigid coordinate
transforms. All arithmetic is float64.
"""

import numpy as np

from .schemas import CoordField, RigidTransform, ShapeError


DEFAULT_EPS = 1e-6


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Matrix product with a fixed summation order.

    Accumulates rank-1 updates over k = 0 .. K-1, so every output entry is
    summed exactly like the textbook triple loop and the result is
    bit-reproducible for a given input.

    Args:
        a: (m, k) matrix
        b: (k, n) matrix

    Returns:
        (m, n) matrix
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")

    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += np.multiply.outer(a[:, k], b[k, :])
    return out


def zscore_norm(z: np.ndarray, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Z-score normalization across the channel dimension.

    Statistics run per column (spatial position) over the c channels:
    mu_j = mean_i z[i, j], sigma_j = sqrt(var_j + eps).

    Args:
        z: (c, n) matrix
        eps: variance regularizer, must be positive

    Returns:
        (zhat, mu, sigma) with mu and sigma shaped (1, n)
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ShapeError(f"zscore_norm expects a (c, n) matrix with c >= 1, got {z.shape}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")

    mu = z.mean(axis=0, keepdims=True)
    centered = z - mu
    var = (centered * centered).mean(axis=0, keepdims=True)
    sigma = np.sqrt(var + eps)
    return centered / sigma, mu, sigma


def transform_coords(transform: RigidTransform, coords: CoordField) -> CoordField:
    """Apply R·p + t to every coordinate of the field."""
    data = np.einsum('ij,j...->i...', transform.rotation, coords.data)
    shape = (3,) + (1,) * (coords.data.ndim - 1)
    return CoordField(data=data + transform.translation.reshape(shape))


def channel_mix(weight: np.ndarray, flat: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Per-voxel affine map of a (c_in, n) matrix: weight @ flat + bias."""
    out = matmul(weight, flat)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64).reshape(-1, 1)
    return out
