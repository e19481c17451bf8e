"""Continual learning experiments, segmentation metrics and corruption robustness."""

from catsd.harness.config import ExperimentConfig
from catsd.harness.experiment import (
    ReferenceResult,
    ablation_components,
    ablation_pseudo_exemplars,
    ablation_scales,
    ablation_temperatures,
    fitting_scale_settings,
    reference_experiment_async,
    run_continual,
    run_stage0,
)
from catsd.harness.metrics import ClassGroupMetrics, ForgettingReport, evaluate, evaluate_arrays, forgetting_summary
from catsd.harness.perturb import FAMILIES, SEVERITY_TABLES, PerturbationSpec, perturb
from catsd.harness.report import MetricsReport, dump_predictions
from catsd.harness.robustness import RobustnessReport, robustness_report, robustness_report_async, severity_trend
from catsd.harness.train import StepRecord, continual_train, train_stage0

__all__ = [
    "FAMILIES",
    "SEVERITY_TABLES",
    "ClassGroupMetrics",
    "ExperimentConfig",
    "ForgettingReport",
    "MetricsReport",
    "PerturbationSpec",
    "ReferenceResult",
    "RobustnessReport",
    "StepRecord",
    "ablation_components",
    "ablation_pseudo_exemplars",
    "ablation_scales",
    "ablation_temperatures",
    "continual_train",
    "dump_predictions",
    "evaluate",
    "evaluate_arrays",
    "forgetting_summary",
    "perturb",
    "reference_experiment_async",
    "robustness_report",
    "robustness_report_async",
    "run_continual",
    "run_stage0",
    "severity_trend",
    "train_stage0",
]
