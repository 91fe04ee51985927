"""
Phase 6: Benchmarks
Memory curves of the single-frame hidden state against the N_h-frame
stacking queue, and wall-time profiles of the fused scene gradient against
the naive chain-rule evaluator and of the per-frame kernels.
"""

import logging

import numpy as np

from phase1_parsing.schemas import PipelineConfig
from phase2_tensors import CoordField, RigidTransform, VoxelGrid, transform_coords, trilinear_jacobian, trilinear_sample
from phase3_fusion import AugmentWeights, MotionField, SceneParams, motion_gradient, scene_gradient
from phase4_pipeline import FusionModel, lift, step
from phase5_world import SyntheticWorld

from .metrics import MetricRow, memory_report, runtime_profile
from .oracle import StackingState, naive_chain_gradient, stacking_update


logger = logging.getLogger(__name__)

GDFUSION = "gdfusion"


def gdfusion_memory(cfg: PipelineConfig, world: SyntheticWorld) -> list[MetricRow]:
    """Bundle bytes per component after every frame of a Full run."""
    run_cfg = cfg.with_fusion('Full')
    model = FusionModel.initialize(run_cfg, np.random.default_rng([world.seed, 1]))
    rows, states = [], None
    for frame in world.frames(cfg.run.frames):
        _, states = step(frame, states, run_cfg, model)
        report = memory_report(states, frame.frame_index)
        t = str(report.frame)
        for name, nbytes in report.components.items():
            rows.append(MetricRow(run_id=GDFUSION, frame=t, metric=f'bytes_{name}', value=nbytes))
        rows.append(MetricRow(run_id=GDFUSION, frame=t, metric='history_bytes', value=report.total))
    return rows


def stacking_memory(cfg: PipelineConfig, world: SyntheticWorld, capacity: int) -> list[MetricRow]:
    """
    Queue bytes for one N_h, reported at frame t as the history that fuses
    frame t, i.e. before V^t is pushed: min(t - 1, N_h) stored volumes.
    """
    extents = tuple(cfg.grid.extents)
    state = StackingState.averaging(capacity, cfg.grid.channels)
    run_id = f"stacking_n{capacity}"
    rows = []
    for frame in world.frames(cfg.run.frames):
        report = memory_report(state, frame.frame_index)
        rows.append(MetricRow(run_id=run_id, frame=str(report.frame), metric='history_bytes', value=report.total))
        v_now = lift(frame, [view.geometry for view in frame.views], extents)
        _, state = stacking_update(state, v_now, frame.ego)
    return rows


def memory_curves(cfg: PipelineConfig, seed: int | None = None) -> list[MetricRow]:
    """gdfusion curve followed by one stacking curve per configured horizon."""
    world = SyntheticWorld(cfg, seed=seed)
    rows = gdfusion_memory(cfg, world)
    for capacity in cfg.bench.horizons:
        rows += stacking_memory(cfg, world, capacity)
    logger.info("memory curves: %d horizons over %d frames", len(cfg.bench.horizons), cfg.run.frames)
    return rows


def gradient_closures(channels: int, voxels: int, rng: np.random.Generator) -> dict:
    """Fused and naive scene gradients on the same random instance."""
    v = rng.standard_normal((channels, voxels))
    params = SceneParams.identity_start(channels)
    aug = AugmentWeights.random(channels, rng)
    return {
        'scene_gradient': lambda: scene_gradient(v, params, aug),
        'naive_chain_gradient': lambda: naive_chain_gradient(v, params, aug),
    }


def kernel_closures(cfg: PipelineConfig, rng: np.random.Generator) -> dict:
    """Per-frame kernels at the configured grid."""
    extents = tuple(cfg.grid.extents)
    c = cfg.grid.channels
    grid = VoxelGrid(data=rng.standard_normal((c, *extents)))
    center = (np.asarray(extents, dtype=np.float64) - 1.0) / 2.0
    transform = RigidTransform.from_yaw(0.05, (0.3, -0.2, 0.0), center)
    coords = transform_coords(transform, CoordField.canonical(extents))
    h_m = MotionField(offsets=0.1 * rng.standard_normal((3, *extents)))
    m_now = MotionField(offsets=0.1 * rng.standard_normal((3, *extents)))
    params = SceneParams.identity_start(c)
    aug = AugmentWeights.random(c, rng)
    flat = grid.flatten()
    return {
        'trilinear_sample': lambda: trilinear_sample(grid, coords),
        'trilinear_jacobian': lambda: trilinear_jacobian(grid, coords),
        'motion_gradient': lambda: motion_gradient(h_m, m_now, transform),
        'scene_gradient': lambda: scene_gradient(flat, params, aug),
    }


def runtime_rows(cfg: PipelineConfig, seed: int = 0) -> list[MetricRow]:
    """Median milliseconds and share of each profiled group."""
    bench = cfg.bench
    groups = {
        'gradient': gradient_closures(bench.runtime_channels, bench.runtime_voxels, np.random.default_rng([seed, 20])),
        'kernels': kernel_closures(cfg, np.random.default_rng([seed, 21])),
    }
    rows = []
    for group, closures in groups.items():
        for r in runtime_profile(closures, bench.warmup, bench.repeats):
            run_id = f"{group}.{r.name}"
            rows.append(MetricRow(run_id=run_id, frame='all', metric='median_ms', value=r.median_ms))
            rows.append(MetricRow(run_id=run_id, frame='all', metric='share', value=r.share))
            logger.info("%s: %.3f ms (%.1f%%)", run_id, r.median_ms, 100.0 * r.share)
    return rows
