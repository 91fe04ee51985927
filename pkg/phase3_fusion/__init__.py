"""
Phase 3: Fusion Module
Scene, motion, geometry and voxel-level temporal fusion operators.
"""

from .scene_fusion import (
    SceneParams,
    SceneGradient,
    AugmentWeights,
    SceneIntermediates,
    SceneFusion,
    scene_forward,
    scene_loss,
    scene_gradient,
    scene_update,
    scene_apply,
)
from .motion_fusion import (
    MotionField,
    MotionPredictor,
    MotionFusion,
    predict_motion,
    warp_motion,
    motion_loss,
    motion_gradient,
    motion_update,
)
from .geometry_fusion import (
    DepthDistribution,
    GateParams,
    CameraPose,
    GeometryFusion,
    warp_geometry,
    gate,
    geometry_update,
)
from .voxel_fusion import (
    FusionWeights,
    GDStepWeights,
    VoxelHidden,
    VoxelFusion,
    load_fusion_weights,
    voxel_update,
    time_embed,
    prop1_transform,
    prop1_check,
)

__all__ = [
    'SceneParams',
    'SceneGradient',
    'AugmentWeights',
    'SceneIntermediates',
    'SceneFusion',
    'scene_forward',
    'scene_loss',
    'scene_gradient',
    'scene_update',
    'scene_apply',
    'MotionField',
    'MotionPredictor',
    'MotionFusion',
    'predict_motion',
    'warp_motion',
    'motion_loss',
    'motion_gradient',
    'motion_update',
    'DepthDistribution',
    'GateParams',
    'CameraPose',
    'GeometryFusion',
    'warp_geometry',
    'gate',
    'geometry_update',
    'FusionWeights',
    'GDStepWeights',
    'VoxelHidden',
    'VoxelFusion',
    'load_fusion_weights',
    'voxel_update',
    'time_embed',
    'prop1_transform',
    'prop1_check',
]
