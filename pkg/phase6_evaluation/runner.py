"""
Phase 6: Ablation Runner
Runs each fusion configuration over a seeded synthetic sequence, fits its
head on a second rendition of that sequence (an independent noise stream by
default), scores the noisy run, and compares every configuration against
the baseline.
"""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from phase1_parsing.schemas import HeadFit, PipelineConfig
from phase2_tensors import VoxelGrid
from phase4_pipeline import FrameInput, FusionModel, fit_head, head, lift, run_sequence, save_bundle, step
from phase5_world import SyntheticWorld

from .metrics import (
    ConfusionMatrix,
    MetricRow,
    iou_binary_from_confusion,
    miou_dynamic_from_confusion,
    miou_from_confusion,
)
from .oracle import StackingState, stacking_update


logger = logging.getLogger(__name__)

BASELINE = "B"
# noise streams of the scored run and of the head-fitting rendition
SCORED_STREAM = 0
FIT_STREAM = 1


class RunResult(BaseModel):
    """Scores of one configuration over one sequence."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    label: str
    confusion: ConfusionMatrix
    miou: float
    miou_dynamic: Optional[float] = None
    iou: float
    rows: list[MetricRow]


def _score(label: str, world: SyntheticWorld, predicted: list[np.ndarray], truth: list[np.ndarray]) -> RunResult:
    classes = world.world.classes
    empty = world.world.empty_index
    rows = []
    total = None

    for t, (pred, gt) in enumerate(zip(predicted, truth), start=1):
        cm = ConfusionMatrix.from_labels(pred, gt, len(classes))
        total = cm if total is None else total + cm
        rows.append(MetricRow(run_id=label, frame=str(t), metric='miou', value=miou_from_confusion(cm, classes)[0]))
        dyn = miou_dynamic_from_confusion(cm, classes)
        if dyn is not None:
            rows.append(MetricRow(run_id=label, frame=str(t), metric='miou_dynamic', value=dyn))
        rows.append(MetricRow(run_id=label, frame=str(t), metric='iou', value=iou_binary_from_confusion(cm, empty)))

    mean, _ = miou_from_confusion(total, classes)
    dyn = miou_dynamic_from_confusion(total, classes)
    iou = iou_binary_from_confusion(total, empty)
    rows.append(MetricRow(run_id=label, frame='all', metric='miou', value=mean))
    if dyn is not None:
        rows.append(MetricRow(run_id=label, frame='all', metric='miou_dynamic', value=dyn))
    rows.append(MetricRow(run_id=label, frame='all', metric='iou', value=iou))
    return RunResult(label=label, confusion=total, miou=mean, miou_dynamic=dyn, iou=iou, rows=rows)


def fit_frames(cfg: PipelineConfig, world: SyntheticWorld) -> list[FrameInput]:
    """The rendition the head is fitted on, per `run.head_fit`."""
    if cfg.run.head_fit == HeadFit.NOISELESS:
        return world.frames(cfg.run.frames, noiseless=True)
    return world.frames(cfg.run.frames, stream=FIT_STREAM)


def _run_dumping(frames, cfg: PipelineConfig, model: FusionModel, dump_dir: Path):
    predictions, states = [], None
    for frame in frames:
        prediction, states = step(frame, states, cfg, model)
        predictions.append(prediction)
        save_bundle(states, dump_dir / f"frame_{frame.frame_index:03d}")
    return predictions, states


def evaluate_configuration(
    cfg: PipelineConfig,
    label: str,
    world: SyntheticWorld,
    dump_dir: Optional[Path] = None,
) -> RunResult:
    """
    Fit and score one fusion configuration.

    Args:
        cfg: base configuration; its toggles are replaced by `label`
        label: ablation label such as 'B', 'BV' or 'Full'
        world: the scene to observe
        dump_dir: when set, the state bundle after every frame is written
            below dump_dir/<label>/

    Returns:
        RunResult with per-frame and whole-sequence rows
    """
    run_cfg = cfg.with_fusion(label)
    frames_count = cfg.run.frames
    model = FusionModel.initialize(run_cfg, np.random.default_rng([world.seed, 1]))
    truth = world.labels(frames_count)

    fitted, _ = run_sequence(fit_frames(cfg, world), run_cfg, model)
    model = model.with_head(fit_head([p.features for p in fitted], truth, run_cfg.grid.classes, cfg.run.ridge))

    noisy = world.frames(frames_count, stream=SCORED_STREAM)
    if dump_dir is not None:
        predictions, _ = _run_dumping(noisy, run_cfg, model, Path(dump_dir) / label)
    else:
        predictions, _ = run_sequence(noisy, run_cfg, model)

    result = _score(label, world, [p.labels() for p in predictions], truth)
    logger.info("%s: mIoU %.4f, IoU %.4f", label, result.miou, result.iou)
    return result


def evaluate_stacking(cfg: PipelineConfig, world: SyntheticWorld, capacity: int) -> RunResult:
    """Score the N_h-frame stacking baseline on raw lifted volumes."""
    extents = tuple(cfg.grid.extents)
    frames_count = cfg.run.frames
    truth = world.labels(frames_count)

    def fused_volumes(frames) -> list[VoxelGrid]:
        state = StackingState.averaging(capacity, cfg.grid.channels)
        volumes = []
        for frame in frames:
            v_now = lift(frame, [view.geometry for view in frame.views], extents)
            fused, state = stacking_update(state, v_now, frame.ego)
            volumes.append(fused)
        return volumes

    fitted = fit_head(fused_volumes(fit_frames(cfg, world)), truth, cfg.grid.classes, cfg.run.ridge)
    predicted = [head(v, fitted).labels() for v in fused_volumes(world.frames(frames_count, stream=SCORED_STREAM))]
    return _score(f"stack{capacity}", world, predicted, truth)


def comparison_rows(results: list[RunResult]) -> list[MetricRow]:
    """Whole-sequence scores of every run and their deltas against the baseline."""
    baseline = next((r for r in results if r.label == BASELINE), results[0])
    rows = []
    for r in results:
        for metric, value, base in (
            ('miou', r.miou, baseline.miou),
            ('miou_dynamic', r.miou_dynamic, baseline.miou_dynamic),
            ('iou', r.iou, baseline.iou),
        ):
            if value is None:
                continue
            rows.append(MetricRow(run_id=r.label, frame='all', metric=metric, value=value))
            if base is not None:
                rows.append(MetricRow(run_id=r.label, frame='all', metric=f'{metric}_delta_vs_{baseline.label}', value=value - base))
    return rows


def run_ablation(
    cfg: PipelineConfig,
    labels: Optional[list[str]] = None,
    dump_dir: Optional[Path] = None,
    seed: Optional[int] = None,
) -> list[RunResult]:
    """Evaluate each label, plus the stacking baseline when N_h > 0."""
    world = SyntheticWorld(cfg, seed=seed)
    results = [evaluate_configuration(cfg, label, world, dump_dir) for label in (labels or cfg.run.fusion)]
    if cfg.bench.baseline_n > 0:
        results.append(evaluate_stacking(cfg, world, cfg.bench.baseline_n))
    return results
