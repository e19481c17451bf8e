"""Training at t=0 (plain cross-entropy) and t=1 (cross-entropy plus distillation)."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable, Optional

import numpy as np

from catsd.const import Method
from catsd.distill import (
    cat_loss,
    feature_l2_loss,
    kd_logits_loss,
    local_pod_loss,
    pod_loss,
    sd_loss,
    temperature_kd_loss,
    total_loss,
)
from catsd.exceptions import TaxonomyError
from catsd.harness.config import ExperimentConfig, check_stage_masks, manifest_path
from catsd.model.manifest import DatasetManifest
from catsd.model.segnet import ForwardResult, ModelWeights, expand_classifier, forward, init_weights, sgd_step
from catsd.synth.io import load_dataset
from catsd.tensor import GradTape, Tensor
from catsd.tensor import ops

_logger = logging.getLogger(__name__)


@dataclass
class StepRecord:
    """Loss values of one optimizer step."""

    stage: str
    epoch: int
    step: int
    loss: float
    parts: dict[str, float] = field(default_factory=dict)


StepCallback = Callable[[StepRecord], None]
EpochCallback = Callable[[int, ModelWeights], None]


@dataclass
class TrainingData:
    images: np.ndarray
    masks: np.ndarray


def load_training_data(path: str, config: ExperimentConfig, forbidden: tuple[int, ...], stage: str) -> TrainingData:
    manifest = DatasetManifest.read(path)
    images, masks = load_dataset(manifest)
    check_stage_masks(manifest, masks, config.taxonomy, forbidden, stage)
    return TrainingData(images, masks)


def label_indices(masks: np.ndarray, class_list: tuple[int, ...]) -> np.ndarray:
    """Map class ids to classifier channel indices."""
    lut = np.full(max(max(class_list), int(masks.max(initial=0))) + 1, -1, dtype=np.int64)
    lut[list(class_list)] = np.arange(len(class_list))
    indices = lut[masks]
    if (indices < 0).any():
        stray = sorted(set(np.unique(masks[indices < 0]).tolist()))
        raise TaxonomyError(f"Mask ids {stray} are not predicted by the model")
    return indices


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _fit(
    weights: ModelWeights,
    data: TrainingData,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    stage: str,
    loss_fn: Callable[[np.ndarray, ForwardResult, Tensor], tuple[Tensor, dict[str, Tensor]]],
    on_step: Optional[StepCallback],
    on_epoch: Optional[EpochCallback],
) -> ModelWeights:
    labels = label_indices(data.masks, weights.class_list)
    step = 0
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, 0 if stage == "t0" else 1, epoch])
        totals: dict[str, float] = {}
        batches = _batches(len(data.images), batch_size, rng)
        for idx in batches:
            params = weights.tensors(requires_grad=True)
            with GradTape() as tape:
                result = forward(weights, data.images[idx], params)
                ce = ops.cross_entropy(result.logits, labels[idx])
                loss, parts = loss_fn(idx, result, ce)
            tape.backward(loss)
            weights = sgd_step(weights, {n: p.grad for n, p in params.items()}, lr)

            record = StepRecord(stage, epoch, step, loss.item(), {"ce": ce.item(), **{k: v.item() for k, v in parts.items()}})
            for k, v in record.parts.items():
                totals[k] = totals.get(k, 0.0) + v
            _logger.debug("%s epoch %d step %d loss %.6f", stage, epoch, step, record.loss)
            if on_step is not None:
                on_step(record)
            step += 1
        _logger.info(
            "%s epoch %d: %s",
            stage,
            epoch,
            ", ".join(f"{k}={v / max(len(batches), 1):.4f}" for k, v in totals.items()),
        )
        if on_epoch is not None:
            on_epoch(epoch, weights)
    return weights


def train_stage0(
    config: ExperimentConfig,
    data: Optional[TrainingData] = None,
    on_step: Optional[StepCallback] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> ModelWeights:
    """Train a fresh model on background, regular and old classes with cross-entropy."""
    tax = config.taxonomy
    if data is None:
        data = load_training_data(str(manifest_path(config.t0_train, "t=0 training")), config, tax.new, "t=0")
    else:
        config.taxonomy.check_ids(np.unique(data.masks), tax.old_model_classes)
    classes = tax.old_model_classes
    weights = init_weights(config.seed, len(classes), classes)
    return _fit(
        weights,
        data,
        config.epochs_t0,
        config.lr_t0,
        config.batch_size,
        config.seed,
        "t0",
        lambda idx, result, ce: (ce, {}),
        on_step,
        on_epoch,
    )


def distillation_parts(
    config: ExperimentConfig, teacher: ModelWeights, teacher_out: ForwardResult, student_out: ForwardResult
) -> dict[str, Tensor]:
    """The distillation terms the configured method adds to cross-entropy."""
    method = Method(config.method)
    t_logits, s_logits = teacher_out.logits, student_out.logits
    if method == Method.LWF:
        return {"kd": kd_logits_loss(t_logits, s_logits)}
    if method == Method.TKD:
        return {"tkd": temperature_kd_loss(t_logits, s_logits, float(config.temperature or 0.0))}
    if method == Method.ILT:
        return {
            "kd": kd_logits_loss(t_logits, s_logits),
            "feature_l2": feature_l2_loss(teacher_out.features, student_out.features),
        }
    if method == Method.LOCALPOD:
        return {"local_pod": local_pod_loss(teacher_out.block_outputs, student_out.block_outputs, config.scales or ())}
    if method == Method.POD:
        return {"pod": pod_loss(teacher_out.block_outputs, student_out.block_outputs)}
    if method == Method.CATSD:
        return {
            "cat": cat_loss(t_logits, s_logits, config.tvec(), class_list=teacher.class_list),
            "sd": sd_loss(teacher_out.features, student_out.features, config.scales or (), config.shifts()),
        }
    return {}


def continual_train(
    teacher: ModelWeights,
    config: ExperimentConfig,
    data: Optional[TrainingData] = None,
    on_step: Optional[StepCallback] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> ModelWeights:
    """Expand the teacher to the new classes and train it on t=1 data.

    The frozen teacher runs on every batch; the method decides which of its
    outputs the student is distilled towards.

    When ``data`` is omitted it is loaded from ``config.t1_train``, and
    methods listed in ``config.pseudo_exemplar_methods`` also rehearse the
    exemplar split. CATSD with zero loss weights therefore reproduces FT step
    for step only when both see the same data: pass ``data`` explicitly or
    set ``exemplar=None``.
    """
    config.check_method()
    tax = config.taxonomy
    if data is None:
        data = load_training_data(str(manifest_path(config.t1_train, "t=1 training")), config, tax.old, "t=1")
        if config.uses_pseudo_exemplars:
            exemplars = DatasetManifest.read(str(config.exemplar))
            ex_images, ex_masks = load_dataset(exemplars)
            config.taxonomy.check_ids(np.unique(ex_masks), tax.old_model_classes)
            data = TrainingData(np.concatenate([data.images, ex_images]), np.concatenate([data.masks, ex_masks]))
            _logger.info("Rehearsing %d pseudo-exemplars", len(ex_images))

    student = expand_classifier(teacher, tax.new, seed=config.seed + 1)
    method = Method(config.method)

    def loss_fn(idx: np.ndarray, result: ForwardResult, ce: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
        if method == Method.FT:
            return ce, {}
        teacher_out = forward(teacher, data.images[idx])
        parts = distillation_parts(config, teacher, teacher_out, result)
        return total_loss(method, ce, parts, config.weights), parts

    return _fit(
        student,
        data,
        config.epochs_t1,
        config.lr_t1,
        config.batch_size,
        config.seed,
        "t1",
        loss_fn,
        on_step,
        on_epoch,
    )
