"""
Phase 6: Metrics
Confusion matrices and the IoU family, serialization-based memory
accounting, wall-time profiles, and the CSV rows they are reported as.
"""

import csv
import statistics
import time
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from phase1_parsing.schemas import ClassInfo
from phase2_tensors import ShapeError
from phase4_pipeline import HiddenStateBundle, bundle_nbytes

from .oracle import StackingState


CSV_FIELDS = ['run_id', 'frame', 'metric', 'value']


class ConfusionMatrix(BaseModel):
    """Counts with rows = ground truth, columns = prediction."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    counts: np.ndarray

    @classmethod
    def from_labels(cls, pred: np.ndarray, gt: np.ndarray, num_classes: int) -> "ConfusionMatrix":
        pred = np.asarray(pred, dtype=np.int64).reshape(-1)
        gt = np.asarray(gt, dtype=np.int64).reshape(-1)
        if pred.shape != gt.shape:
            raise ShapeError(f"{pred.size} predictions for {gt.size} labels")
        flat = np.bincount(gt * num_classes + pred, minlength=num_classes * num_classes)
        return cls(counts=flat.reshape(num_classes, num_classes))

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(counts=self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def class_iou(self, index: int) -> Optional[float]:
        """TP / (TP + FP + FN); None when the class is absent from both sides."""
        tp = self.counts[index, index]
        union = self.counts[index, :].sum() + self.counts[:, index].sum() - tp
        if union == 0:
            return None
        return float(tp / union)

    def mean_iou(self, indices: list[int]) -> Optional[float]:
        values = [iou for iou in (self.class_iou(i) for i in indices) if iou is not None]
        if not values:
            return None
        return float(np.mean(values))


def _semantic_indices(classes: list[ClassInfo]) -> list[int]:
    return [i for i, info in enumerate(classes) if not info.empty]


def _empty_index(classes: list[ClassInfo]) -> int:
    return next(i for i, info in enumerate(classes) if info.empty)


def miou(pred: np.ndarray, gt: np.ndarray, classes: list[ClassInfo]) -> tuple[float, dict[str, Optional[float]]]:
    """
    Mean IoU over the non-empty classes that occur in prediction or
    ground truth.

    Returns:
        (mIoU, per-class IoU keyed by class name; None for absent classes)
    """
    cm = ConfusionMatrix.from_labels(pred, gt, len(classes))
    return miou_from_confusion(cm, classes)


def miou_from_confusion(cm: ConfusionMatrix, classes: list[ClassInfo]) -> tuple[float, dict[str, Optional[float]]]:
    indices = _semantic_indices(classes)
    per_class = {classes[i].name: cm.class_iou(i) for i in indices}
    mean = cm.mean_iou(indices)
    return (0.0 if mean is None else mean), per_class


def miou_dynamic(pred: np.ndarray, gt: np.ndarray, classes: list[ClassInfo]) -> Optional[float]:
    """mIoU over dynamic classes only; None when the class table has none."""
    cm = ConfusionMatrix.from_labels(pred, gt, len(classes))
    return miou_dynamic_from_confusion(cm, classes)


def miou_dynamic_from_confusion(cm: ConfusionMatrix, classes: list[ClassInfo]) -> Optional[float]:
    dynamic = [i for i, info in enumerate(classes) if info.dynamic and not info.empty]
    if not dynamic:
        return None
    mean = cm.mean_iou(dynamic)
    return 0.0 if mean is None else mean


def iou_binary(pred: np.ndarray, gt: np.ndarray, empty_index: int = 0) -> float:
    """Occupied-vs-empty IoU; 1.0 when neither side has any occupied voxel."""
    pred_occ = np.asarray(pred) != empty_index
    gt_occ = np.asarray(gt) != empty_index
    if pred_occ.shape != gt_occ.shape:
        raise ShapeError(f"prediction {pred_occ.shape} vs ground truth {gt_occ.shape}")
    union = np.count_nonzero(pred_occ | gt_occ)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(pred_occ & gt_occ) / union)


def iou_binary_from_confusion(cm: ConfusionMatrix, empty_index: int) -> float:
    occupied = np.ones(cm.counts.shape[0], dtype=bool)
    occupied[empty_index] = False
    tp = cm.counts[np.ix_(occupied, occupied)].sum()
    union = cm.total - cm.counts[empty_index, empty_index]
    if union == 0:
        return 1.0
    return float(tp / union)


class MemoryReport(BaseModel):
    """Serialized bytes per state component at one frame."""
    frame: int
    components: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.components.values())


def memory_report(state: Union[HiddenStateBundle, StackingState], t: int) -> MemoryReport:
    """Byte counts of the carried history, derived from serialization only."""
    if isinstance(state, HiddenStateBundle):
        return MemoryReport(frame=t, components=bundle_nbytes(state))
    return MemoryReport(frame=t, components={'queue': state.history_nbytes()})


class RuntimeRow(BaseModel):
    name: str
    median_ms: float = Field(..., ge=0.0)
    share: float = Field(..., ge=0.0, le=1.0)


def runtime_profile(closures: dict[str, Callable[[], object]], warmup: int = 3, repeats: int = 11) -> list[RuntimeRow]:
    """
    Median wall time of each closure on a monotonic clock.

    Shares are each median over the sum of all medians.
    """
    medians = {}
    for name, fn in closures.items():
        for _ in range(warmup):
            fn()
        samples = []
        for _ in range(repeats):
            start = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - start)
        medians[name] = statistics.median(samples) * 1000.0

    total = sum(medians.values())
    return [
        RuntimeRow(name=name, median_ms=ms, share=(ms / total if total > 0 else 0.0))
        for name, ms in medians.items()
    ]


class MetricRow(BaseModel):
    """One scalar of a report."""
    run_id: str
    frame: str
    metric: str
    value: float


def write_rows(path: str | Path, rows: list[MetricRow]) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({**row.model_dump(), 'value': repr(float(row.value))})


def read_rows(path: str | Path) -> list[MetricRow]:
    with open(path, 'r', newline='') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_FIELDS:
            raise ValueError(f"{path}: expected columns {CSV_FIELDS}, got {reader.fieldnames}")
        return [MetricRow(**record) for record in reader]
