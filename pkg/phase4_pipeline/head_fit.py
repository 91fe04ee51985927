"""
Phase 4: Head Fitting
Closed-form ridge regression of one-hot labels on voxel features.
"""

import logging

import numpy as np

from phase2_tensors import ShapeError, VoxelGrid

from .schemas import HeadParams


logger = logging.getLogger(__name__)


def fit_head(features: list[VoxelGrid], labels: list[np.ndarray], classes: int, ridge: float = 1e-3) -> HeadParams:
    """
    Fit f_o by ridge regression.

    Solves W = Y Fᵀ (F Fᵀ + λI)⁻¹ on the features augmented with a constant
    row, so the last column of W is the bias. The bias is penalized like any
    other weight.

    Args:
        features: volumes (c, X, Y, Z), one per frame
        labels: integer label grids (X, Y, Z) matching the volumes
        classes: number of classes
        ridge: λ > 0

    Returns:
        HeadParams
    """
    if not features or len(features) != len(labels):
        raise ShapeError(f"{len(features)} feature volumes for {len(labels)} label grids")

    columns = []
    targets = []
    for volume, label in zip(features, labels):
        label = np.asarray(label)
        if label.shape != volume.extents:
            raise ShapeError(f"labels {label.shape} vs volume extents {volume.extents}")
        flat = volume.flatten()
        columns.append(np.vstack([flat, np.ones((1, flat.shape[1]))]))
        targets.append(label.reshape(-1))

    F = np.hstack(columns)
    y = np.concatenate(targets)
    Y = np.zeros((classes, y.shape[0]))
    Y[y, np.arange(y.shape[0])] = 1.0

    gram = F @ F.T + ridge * np.eye(F.shape[0])
    W = np.linalg.solve(gram, F @ Y.T).T
    logger.info("head fitted on %d voxels from %d frames", y.shape[0], len(features))
    return HeadParams(weight=W[:, :-1], bias=W[:, -1])
