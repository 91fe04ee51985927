"""
Phase 5: World Module
Synthetic scenes, ego motion and noisy sensing for desk-scale sequences.
"""

from .synthworld import (
    SensorNoise,
    Trajectory,
    ViewGeometry,
    SyntheticWorld,
    build_rig,
    default_world,
    ground_truth_occupancy,
    class_embeddings,
    cast_rays,
    depth_distribution,
    render_frame,
)

__all__ = [
    'SensorNoise',
    'Trajectory',
    'ViewGeometry',
    'SyntheticWorld',
    'build_rig',
    'default_world',
    'ground_truth_occupancy',
    'class_embeddings',
    'cast_rays',
    'depth_distribution',
    'render_frame',
]
