"""
Phase 2: Tensor Module
Dense volumes, trilinear sampling and the primitive operations of every
fusion operator.
"""

from .schemas import VoxelGrid, CoordField, RigidTransform, ShapeError
from .tensor_ops import matmul, zscore_norm, transform_coords, channel_mix, DEFAULT_EPS
from .trilinear import trilinear_sample, trilinear_jacobian, trilinear_splat

__all__ = [
    'VoxelGrid',
    'CoordField',
    'RigidTransform',
    'ShapeError',
    'matmul',
    'zscore_norm',
    'transform_coords',
    'channel_mix',
    'DEFAULT_EPS',
    'trilinear_sample',
    'trilinear_jacobian',
    'trilinear_splat',
]
