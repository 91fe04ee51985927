"""
Phase 4: Multi-Level Fusion Pipeline
Per-frame order: geometry fusion -> lift with the fused geometry -> motion
fusion -> voxel fusion -> scene fusion -> occupancy head. The four hidden
states advance exactly once per frame.
"""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from phase1_parsing.schemas import PipelineConfig
from phase2_tensors import RigidTransform, ShapeError, VoxelGrid, channel_mix, trilinear_splat
from phase3_fusion import (
    AugmentWeights,
    DepthDistribution,
    FusionWeights,
    GateParams,
    GeometryFusion,
    MotionField,
    MotionFusion,
    MotionPredictor,
    SceneFusion,
    SceneParams,
    VoxelFusion,
    VoxelHidden,
    load_fusion_weights,
)

from .schemas import FrameInput, HeadParams, HiddenStateBundle, OccupancyPrediction, SequenceError


logger = logging.getLogger(__name__)


class FusionModel(BaseModel):
    """
    The fixed (non-recurrent) weights of a pipeline: scene augmentations,
    f_m, the geometry gate, A_v/B_v and the head.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    aug: AugmentWeights
    predictor: MotionPredictor
    gate: GateParams
    weights: FusionWeights
    head: HeadParams

    @classmethod
    def initialize(cls, cfg: PipelineConfig, rng: np.random.Generator) -> "FusionModel":
        """Seeded weights; the head starts at zero until it is fitted."""
        c = cfg.grid.channels
        return cls(
            aug=AugmentWeights.random(c, rng),
            predictor=MotionPredictor.random(c, rng, cfg.motion.init_scale),
            gate=GateParams.zeros(cfg.depth.bins, cfg.geometry.gate_bias),
            weights=load_fusion_weights(cfg.voxel, c),
            head=HeadParams.zeros(cfg.grid.classes, c),
        )

    def with_head(self, head: HeadParams) -> "FusionModel":
        return self.model_copy(update={'head': head})


def lift(frame: FrameInput, g_fused: list[DepthDistribution], extents: tuple[int, int, int]) -> VoxelGrid:
    """
    Lift-splat every view into the grid.

    For each ray and bin, probs[ray, k] * feature[ray] is deposited with
    trilinear weights at the point d_k along the ray; contributions from all
    views accumulate.
    """
    if len(g_fused) != len(frame.views):
        raise SequenceError(f"{len(g_fused)} fused distributions for {len(frame.views)} views")

    channels = frame.views[0].features.shape[1]
    total = np.zeros((channels, int(np.prod(extents))))
    for view, geometry in zip(frame.views, g_fused):
        if geometry.rays != view.rays:
            raise ShapeError(f"{geometry.rays} distributions for {view.rays} rays")
        if view.features.shape[1] != channels:
            raise ShapeError("views disagree on the feature channel count")

        points = view.cam_to_grid.apply_points(view.camera.points(geometry.bin_centers))
        values = view.features.T[:, :, None] * geometry.probs[None, :, :]
        flat, _ = trilinear_splat(values.reshape(channels, -1), points.reshape(-1, 3).T, extents)
        total += flat
    return VoxelGrid.from_flat(total, extents)


def head(v: VoxelGrid, p: HeadParams) -> OccupancyPrediction:
    """O = f_o(V), an affine map per voxel."""
    if p.weight.shape[1] != v.channels:
        raise ShapeError(f"head expects {p.weight.shape[1]} channels, volume has {v.channels}")
    logits = channel_mix(p.weight, v.flatten(), p.bias)
    return OccupancyPrediction(logits=VoxelGrid.from_flat(logits, v.extents), features=v)


def camera_motion(ego: RigidTransform, cam_to_grid: RigidTransform) -> RigidTransform:
    """Previous-camera to current-camera transform for a camera rigidly mounted on the ego."""
    grid_to_cam = cam_to_grid.inverse()
    return grid_to_cam.compose(ego.inverse()).compose(cam_to_grid)


def _check_states(frame: FrameInput, states: HiddenStateBundle, cfg: PipelineConfig) -> None:
    if states.h_v.state.extents != tuple(cfg.grid.extents):
        raise SequenceError(f"state extents {states.h_v.state.extents} do not match grid {cfg.grid.extents}")
    if len(states.h_g) != len(frame.views):
        raise SequenceError(f"state has {len(states.h_g)} views, frame has {len(frame.views)}")
    for h_g, view in zip(states.h_g, frame.views):
        if h_g.probs.shape != view.geometry.probs.shape:
            raise SequenceError(f"geometry state {h_g.probs.shape} vs frame {view.geometry.probs.shape}")
    if frame.frame_index <= states.frame_index:
        raise SequenceError(f"frame {frame.frame_index} does not follow state frame {states.frame_index}")


def step(
    frame: FrameInput,
    states: Optional[HiddenStateBundle],
    cfg: PipelineConfig,
    model: FusionModel,
) -> tuple[OccupancyPrediction, HiddenStateBundle]:
    """
    Advance the pipeline by one frame.

    Args:
        frame: current observation
        states: bundle from the previous frame, None at the first frame
        cfg: configuration; `cfg.fusion` toggles the four stages
        model: fixed weights

    Returns:
        (occupancy prediction, new bundle)
    """
    extents = tuple(cfg.grid.extents)
    toggles = cfg.fusion
    first = states is None
    if not first:
        _check_states(frame, states, cfg)

    # geometry
    g_fused = []
    geometry = GeometryFusion(model.gate)
    for i, view in enumerate(frame.views):
        if toggles.geometry:
            h_prev = None if first else states.h_g[i]
            g_fused.append(geometry.step(h_prev, view.geometry, view.camera))
        else:
            g_fused.append(view.geometry)

    v_now = lift(frame, g_fused, extents)
    if v_now.channels != cfg.grid.channels:
        raise ShapeError(f"lifted {v_now.channels} channels, configured {cfg.grid.channels}")

    # motion
    if toggles.motion:
        h_m = MotionFusion(model.predictor, cfg.motion.eta).step(v_now, None if first else states.h_m, frame.ego)
    else:
        h_m = MotionField.zeros(extents)

    # voxel
    if toggles.voxel:
        voxel = VoxelFusion(model.weights, toggles.time_embedding, frame.dt)
        h_v = voxel.step(None if first else states.h_v, v_now, h_m, frame.ego, frame.frame_index)
    else:
        h_v = VoxelHidden(state=v_now)
    v_fused = h_v.state

    # scene
    h_s_prev = SceneParams.identity_start(cfg.grid.channels) if first else states.h_s
    if toggles.scene:
        eta = cfg.scene.eta
        if cfg.scene.normalize_step:
            eta = eta / (v_now.num_voxels * v_now.channels)
        scene = SceneFusion(model.aug, eta, cfg.scene.eps, cfg.scene.update_norm_params)
        v_hat_flat, h_s = scene.step(h_s_prev, v_now.flatten(), v_fused.flatten())
        v_hat = VoxelGrid.from_flat(v_hat_flat, extents)
    else:
        v_hat, h_s = v_fused, h_s_prev

    prediction = head(v_hat, model.head)
    bundle = HiddenStateBundle(h_v=h_v, h_s=h_s, h_m=h_m, h_g=g_fused, frame_index=frame.frame_index)
    logger.debug("frame %d fused", frame.frame_index)
    return prediction, bundle


def run_sequence(
    frames: list[FrameInput],
    cfg: PipelineConfig,
    model: FusionModel,
    states: Optional[HiddenStateBundle] = None,
) -> tuple[list[OccupancyPrediction], HiddenStateBundle]:
    """
    Fold `step` over the frames in order.

    States are never reset inside a sequence; pass a reloaded bundle as
    `states` to resume a sequence that was split.
    """
    if not frames:
        raise SequenceError("run_sequence needs at least one frame")
    view_counts = {len(f.views) for f in frames}
    if len(view_counts) != 1:
        raise SequenceError(f"view count changes within the sequence: {sorted(view_counts)}")

    predictions = []
    for frame in frames:
        prediction, states = step(frame, states, cfg, model)
        predictions.append(prediction)

    logger.info("sequence of %d frames finished at frame %d", len(frames), states.frame_index)
    return predictions, states
