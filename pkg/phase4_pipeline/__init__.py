"""
Phase 4: Pipeline Module
Streaming multi-level fusion: lift, fuse, classify, and carry state.
"""

from .schemas import (
    SequenceError,
    ViewInput,
    FrameInput,
    HiddenStateBundle,
    HeadParams,
    OccupancyPrediction,
)
from .pipeline import FusionModel, lift, head, camera_motion, step, run_sequence
from .head_fit import fit_head
from .bundle_io import bundle_nbytes, save_bundle, load_bundle

__all__ = [
    'SequenceError',
    'ViewInput',
    'FrameInput',
    'HiddenStateBundle',
    'HeadParams',
    'OccupancyPrediction',
    'FusionModel',
    'lift',
    'head',
    'camera_motion',
    'step',
    'run_sequence',
    'fit_head',
    'bundle_nbytes',
    'save_bundle',
    'load_bundle',
]
