"""
Phase 2: Trilinear Sampling
Sampling, its Jacobian with respect to the sampling coordinates, and the
adjoint splat used by the 2D-to-3D lift.

Corner weights follow w(p) = phi_x ⊗ phi_y ⊗ phi_z with phi_0(e) = 1 - e,
phi_1(e) = e on the cell whose lower corner is floor(p). Corners outside the
grid contribute zero.
"""

import itertools

import numpy as np

from .schemas import CoordField, ShapeError, VoxelGrid


# corner offsets in Kronecker order: x slowest, z fastest
CORNERS = tuple(itertools.product((0, 1), repeat=3))


def _basis(frac: np.ndarray, bit: int) -> np.ndarray:
    return frac if bit else 1.0 - frac


def _basis_deriv(bit: int) -> float:
    return 1.0 if bit else -1.0


def _cell(points: np.ndarray):
    """Split (3, m) points into integer lower corners and fractional parts."""
    lower = np.floor(points)
    return lower.astype(np.int64), points - lower


def _gather(flat: np.ndarray, extents, idx: np.ndarray) -> np.ndarray:
    """Values at integer corners idx (3, m); zero where out of bounds."""
    x, y, z = extents
    inside = (
        (idx[0] >= 0) & (idx[0] < x)
        & (idx[1] >= 0) & (idx[1] < y)
        & (idx[2] >= 0) & (idx[2] < z)
    )
    linear = (np.clip(idx[0], 0, x - 1) * y + np.clip(idx[1], 0, y - 1)) * z + np.clip(idx[2], 0, z - 1)
    values = flat[:, linear]
    return np.where(inside, values, 0.0)


def _points(coords: CoordField) -> np.ndarray:
    if not np.all(np.isfinite(coords.data)):
        raise ValueError("sampling coordinates must be finite")
    return coords.data.reshape(3, -1)


def trilinear_sample(grid: VoxelGrid, coords: CoordField) -> VoxelGrid:
    """
    Sample `grid` at every coordinate of `coords`.

    Args:
        grid: source volume (c, X, Y, Z)
        coords: target coordinates (3, X', Y', Z') in source voxel units

    Returns:
        VoxelGrid (c, X', Y', Z')
    """
    if len(coords.extents) != 3:
        raise ShapeError(f"coords must be a (3, X, Y, Z) field, got {coords.data.shape}")
    pts = _points(coords)
    lower, frac = _cell(pts)
    flat = grid.flatten()

    out = np.zeros((grid.channels, pts.shape[1]))
    for corner in CORNERS:
        weight = _basis(frac[0], corner[0]) * _basis(frac[1], corner[1]) * _basis(frac[2], corner[2])
        idx = lower + np.array(corner).reshape(3, 1)
        out += weight * _gather(flat, grid.extents, idx)
    return VoxelGrid(data=out.reshape(grid.channels, *coords.extents))


def trilinear_jacobian(grid: VoxelGrid, coords: CoordField) -> np.ndarray:
    """
    Derivative of `trilinear_sample` with respect to the sampling coordinates.

    Implements J[p] = (∇_p w(p))ᵀ H[p] with phi'_0 = -1, phi'_1 = 1. On a
    lattice plane the derivative is the one-sided value of the cell above
    (floor convention).

    Returns:
        array (c, 3, X', Y', Z'): entry [ch, a] = d sample_ch / d p_a
    """
    if len(coords.extents) != 3:
        raise ShapeError(f"coords must be a (3, X, Y, Z) field, got {coords.data.shape}")
    pts = _points(coords)
    lower, frac = _cell(pts)
    flat = grid.flatten()

    jac = np.zeros((grid.channels, 3, pts.shape[1]))
    for corner in CORNERS:
        idx = lower + np.array(corner).reshape(3, 1)
        values = _gather(flat, grid.extents, idx)
        phi = [_basis(frac[a], corner[a]) for a in range(3)]
        dx = _basis_deriv(corner[0]) * phi[1] * phi[2]
        dy = phi[0] * _basis_deriv(corner[1]) * phi[2]
        dz = phi[0] * phi[1] * _basis_deriv(corner[2])
        jac[:, 0, :] += dx * values
        jac[:, 1, :] += dy * values
        jac[:, 2, :] += dz * values
    return jac.reshape(grid.channels, 3, *coords.extents)


def trilinear_splat(values: np.ndarray, points: np.ndarray, extents: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """
    Deposit per-point values into a grid with trilinear weights.

    Adjoint of sampling: corners outside the grid are dropped.

    Args:
        values: (c, m) values to deposit
        points: (3, m) positions in voxel units
        extents: target grid extents

    Returns:
        (flat grid (c, n), deposited weight per point (m,))
    """
    values = np.asarray(values, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if values.shape[1] != points.shape[1]:
        raise ShapeError(f"{values.shape[1]} values for {points.shape[1]} points")
    x, y, z = extents
    lower, frac = _cell(points)

    out = np.zeros((values.shape[0], x * y * z))
    kept = np.zeros(points.shape[1])
    for corner in CORNERS:
        weight = _basis(frac[0], corner[0]) * _basis(frac[1], corner[1]) * _basis(frac[2], corner[2])
        idx = lower + np.array(corner).reshape(3, 1)
        inside = (
            (idx[0] >= 0) & (idx[0] < x)
            & (idx[1] >= 0) & (idx[1] < y)
            & (idx[2] >= 0) & (idx[2] < z)
            & (weight != 0.0)
        )
        if not np.any(inside):
            continue
        linear = (idx[0, inside] * y + idx[1, inside]) * z + idx[2, inside]
        for ch in range(values.shape[0]):
            np.add.at(out[ch], linear, weight[inside] * values[ch, inside])
        kept[inside] += weight[inside]
    return out, kept
