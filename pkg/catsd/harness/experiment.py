"""End-to-end experiments: the reference two time point run and ablation sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

from catsd.const import Method, Split
from catsd.distill import ShiftSpec
from catsd.exceptions import MissingInputError, ShapeError
from catsd.harness.config import ExperimentConfig
from catsd.harness.metrics import ClassGroupMetrics, ForgettingReport, evaluate, forgetting_summary
from catsd.harness.train import TrainingData, continual_train, train_stage0
from catsd.model import CatsdBaseModel
from catsd.model.manifest import DatasetManifest
from catsd.model.segnet import DOWNSAMPLE, ModelWeights
from catsd.synth.assets import AssetBank
from catsd.synth.dataset import SuiteConfig, synth_suite_async

_logger = logging.getLogger(__name__)

# Toy scale: 64x64 images, ~200 images per training stage
REFERENCE_SUITE = SuiteConfig(train_target=57, exemplar_target=20, test_target=20)
# The toy network needs larger steps than the full-scale defaults to learn in few epochs
REFERENCE_OVERRIDES: dict[str, object] = {"lr_t0": 0.05, "lr_t1": 0.02, "epochs_t0": 10, "epochs_t1": 6}


@dataclass
class SelectionTracker:
    """Keeps the epoch weights with the best validation mIoU over all classes."""

    manifest: DatasetManifest
    config: ExperimentConfig
    best: Optional[ModelWeights] = None
    best_score: float = -1.0
    best_epoch: int = -1

    def __call__(self, epoch: int, weights: ModelWeights) -> None:
        score = evaluate(weights, self.manifest, self.config.taxonomy).group_miou.get("all") or 0.0
        if score > self.best_score:
            self.best, self.best_score, self.best_epoch = weights, score, epoch

    def select(self, final: ModelWeights) -> ModelWeights:
        if self.best is None:
            return final
        _logger.info("Selected epoch %d with validation mIoU %.4f", self.best_epoch, self.best_score)
        return self.best


def _tracker(config: ExperimentConfig) -> Optional[SelectionTracker]:
    if config.selection != "best_val":
        return None
    if config.val is None:
        raise MissingInputError("best_val selection needs a validation dataset")
    return SelectionTracker(DatasetManifest.read(config.val), config)


def run_stage0(config: ExperimentConfig, data: Optional[TrainingData] = None) -> ModelWeights:
    """:func:`train_stage0` honouring the configured model selection."""
    tracker = _tracker(config)
    weights = train_stage0(config, data, on_epoch=tracker)
    return tracker.select(weights) if tracker else weights


def run_continual(teacher: ModelWeights, config: ExperimentConfig, data: Optional[TrainingData] = None) -> ModelWeights:
    """:func:`continual_train` honouring the configured model selection."""
    tracker = _tracker(config)
    weights = continual_train(teacher, config, data, on_epoch=tracker)
    return tracker.select(weights) if tracker else weights


def experiment_config_for(manifests: dict[str, DatasetManifest], base: ExperimentConfig) -> ExperimentConfig:
    """Point ``base`` at the files of a generated suite."""

    def path(split: str) -> Optional[str]:
        m = manifests.get(split)
        return str(m.root / f"{split}.json") if m is not None else None

    return base.with_overrides(
        t0_train=path(Split.T0_TRAIN),
        t1_train=path(Split.T1_TRAIN),
        exemplar=path(Split.EXEMPLAR),
        val=path(Split.VAL),
        test=path(Split.TEST),
    )


@dataclass
class ReferenceResult:
    teacher: ModelWeights
    teacher_metrics: ClassGroupMetrics
    students: dict[str, ModelWeights] = field(default_factory=dict)
    metrics: dict[str, ClassGroupMetrics] = field(default_factory=dict)
    forgetting: dict[str, ForgettingReport] = field(default_factory=dict)


async def reference_experiment_async(
    out_dir: Union[str, Path],
    seed: int = 0,
    suite: SuiteConfig = REFERENCE_SUITE,
    base: Optional[ExperimentConfig] = None,
    methods: Sequence[Method] = (Method.FT, Method.CATSD),
    bank: Optional[AssetBank] = None,
    threads: Optional[int] = None,
) -> ReferenceResult:
    """Synthesize a suite, train the t=0 teacher, then each continual method, and compare."""
    manifests = await synth_suite_async(suite, seed, out_dir, bank, threads)
    if base is None:
        base = ExperimentConfig(taxonomy=suite.taxonomy, seed=seed).with_overrides(**REFERENCE_OVERRIDES)
    config = experiment_config_for(manifests, base)
    test = manifests[Split.TEST]

    teacher = run_stage0(config)
    result = ReferenceResult(teacher, evaluate(teacher, test, config.taxonomy))
    for method in methods:
        student = run_continual(teacher, config.with_overrides(method=method))
        metrics = evaluate(student, test, config.taxonomy)
        result.students[method] = student
        result.metrics[method] = metrics
        result.forgetting[method] = forgetting_summary(result.teacher_metrics, metrics, method)
        _logger.info("%s: %s", method, metrics.group_miou)
    return result


class AblationRow(CatsdBaseModel):
    label: str
    settings: dict[str, object]
    group_miou: dict[str, Optional[float]]


def _ablate(
    teacher: ModelWeights, config: ExperimentConfig, test: DatasetManifest, label: str, **changes: object
) -> AblationRow:
    student = continual_train(teacher, config.with_overrides(**changes))
    metrics = evaluate(student, test, config.taxonomy)
    _logger.info("Ablation %s: %s", label, metrics.group_miou)
    return AblationRow(label=label, settings=changes, group_miou=metrics.group_miou)


# Component switches: CAT off distils at unit temperatures, SD off keeps only whole-map pooling
CAT_OFF: dict[str, object] = {"t_old": 1.0, "t_regular": 1.0}
SD_OFF: dict[str, object] = {"scales": (1,), "shifted": False}

# (pooling scales, shift scales) rows of the scale ablation; 8 needs 8x8 encoder outputs (64x64 images)
SCALE_SETTINGS: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...] = (
    ((1,), ()),
    ((1, 2), (4,)),
    ((1, 2), (2, 4)),
    ((1, 2, 4), (4,)),
    ((1, 2, 4), (2, 4)),
    ((2, 4, 8), (4,)),
    ((2, 4, 8), (2, 4)),
    ((1, 2, 4, 8), (4,)),
    ((1, 2, 4, 8), (2, 4)),
    ((2, 4), (4,)),
)


def fitting_scale_settings(
    image_size: int, settings: Sequence[tuple[tuple[int, ...], tuple[int, ...]]] = SCALE_SETTINGS
) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """The settings whose grids cut the encoder output of ``image_size`` images on whole pixels."""
    extent = image_size // DOWNSAMPLE

    def fits(scales: tuple[int, ...], shift_scales: tuple[int, ...]) -> bool:
        if any(extent % s for s in scales):
            return False
        try:
            for k in shift_scales:
                ShiftSpec.for_scale(k).boundaries(extent)
        except ShapeError:
            return False
        return True

    return [(scales, shifts) for scales, shifts in settings if fits(scales, shifts)]


def ablation_temperatures(
    teacher: ModelWeights,
    config: ExperimentConfig,
    test: DatasetManifest,
    pairs: Sequence[tuple[float, float]] = ((1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (3.0, 4.0), (2.0, 4.0)),
) -> list[AblationRow]:
    """CATSD runs over (T_old, T_regular) pairs; equal pairs are the uniform-temperature rows."""
    return [
        _ablate(teacher, config, test, f"T_o={t_old:g} T_r={t_regular:g}", method=Method.CATSD, t_old=t_old, t_regular=t_regular)
        for t_old, t_regular in pairs
    ]


def ablation_scales(
    teacher: ModelWeights,
    config: ExperimentConfig,
    test: DatasetManifest,
    settings: Sequence[tuple[tuple[int, ...], tuple[int, ...]]] = SCALE_SETTINGS,
) -> list[AblationRow]:
    """CATSD runs over (pooling scales, shift scales) pairs; empty shift scales drop the shifted blocks."""
    rows = []
    for scales, shift_scales in settings:
        shift = ",".join(map(str, shift_scales)) if shift_scales else "off"
        label = f"s={','.join(map(str, scales))} shifted s={shift}"
        changes: dict[str, object] = {"method": Method.CATSD, "scales": scales}
        if shift_scales:
            changes.update(shift_scales=shift_scales, shifted=True)
        else:
            changes.update(shift_scales=None, shifted=False)
        rows.append(_ablate(teacher, config, test, label, **changes))
    return rows


def ablation_components(teacher: ModelWeights, config: ExperimentConfig, test: DatasetManifest) -> list[AblationRow]:
    """Fine-tuning, then CATSD with each combination of the SD and CAT components switched on or off."""
    rows = [_ablate(teacher, config, test, "FT", method=Method.FT)]
    for sd in (False, True):
        for cat in (False, True):
            changes: dict[str, object] = {"method": Method.CATSD}
            if not sd:
                changes.update(SD_OFF)
            if not cat:
                changes.update(CAT_OFF)
            label = f"SD={'on' if sd else 'off'} CAT={'on' if cat else 'off'}"
            rows.append(_ablate(teacher, config, test, label, **changes))
    return rows


def ablation_pseudo_exemplars(
    teacher: ModelWeights, config: ExperimentConfig, test: DatasetManifest
) -> list[AblationRow]:
    """CATSD trained on new data only against new data plus old-class pseudo-exemplars."""
    rows = [_ablate(teacher, config, test, "new data only", method=Method.CATSD, exemplar=None)]
    if config.exemplar is not None:
        rows.append(_ablate(teacher, config, test, "with pseudo-exemplars", method=Method.CATSD, exemplar=config.exemplar))
    return rows
