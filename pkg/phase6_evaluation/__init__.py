"""
Phase 6: Evaluation Module
Oracles, gradient checks, metrics, benchmarks and the ablation runner.
"""

from .oracle import OracleError, StackingState, finite_diff_grad, naive_chain_gradient, stacking_update
from .metrics import (
    CSV_FIELDS,
    ConfusionMatrix,
    MemoryReport,
    MetricRow,
    RuntimeRow,
    iou_binary,
    iou_binary_from_confusion,
    memory_report,
    miou,
    miou_dynamic,
    miou_dynamic_from_confusion,
    miou_from_confusion,
    read_rows,
    runtime_profile,
    write_rows,
)
from .gradcheck import (
    CHECK_FIELDS,
    FAULTS,
    CheckResult,
    check_motion,
    check_prop1,
    check_scene,
    check_trilinear,
    run_gradchecks,
    write_checks,
)
from .bench import memory_curves, runtime_rows
from .runner import RunResult, comparison_rows, evaluate_configuration, evaluate_stacking, run_ablation

__all__ = [
    'OracleError',
    'StackingState',
    'finite_diff_grad',
    'naive_chain_gradient',
    'stacking_update',
    'CSV_FIELDS',
    'ConfusionMatrix',
    'MemoryReport',
    'MetricRow',
    'RuntimeRow',
    'iou_binary',
    'iou_binary_from_confusion',
    'memory_report',
    'miou',
    'miou_dynamic',
    'miou_dynamic_from_confusion',
    'miou_from_confusion',
    'read_rows',
    'runtime_profile',
    'write_rows',
    'CHECK_FIELDS',
    'FAULTS',
    'CheckResult',
    'check_motion',
    'check_prop1',
    'check_scene',
    'check_trilinear',
    'run_gradchecks',
    'write_checks',
    'memory_curves',
    'runtime_rows',
    'RunResult',
    'comparison_rows',
    'evaluate_configuration',
    'evaluate_stacking',
    'run_ablation',
]
