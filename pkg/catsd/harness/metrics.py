"""Dataset-level IoU per class and per class group, and forgetting summaries."""

from __future__ import annotations

import logging
from typing import Mapping, Optional, Sequence

import numpy as np

from catsd.const import BACKGROUND_ID
from catsd.exceptions import TaxonomyError
from catsd.model import CatsdBaseModel
from catsd.model.manifest import DatasetManifest
from catsd.model.segnet import ModelWeights, predict
from catsd.model.taxonomy import ClassTaxonomy
from catsd.synth.io import load_sample

_logger = logging.getLogger(__name__)

GROUPS = ("regular", "old", "new", "all")
EVAL_BATCH = 16


class ClassGroupMetrics(CatsdBaseModel):
    """IoU per class (None when the class never occurs in ground truth) and group means."""

    taxonomy: ClassTaxonomy
    per_class_iou: dict[int, Optional[float]]
    group_miou: dict[str, Optional[float]]
    per_dataset: dict[str, dict[str, Optional[float]]] = {}
    pixel_accuracy: float = 0.0


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, n: int) -> np.ndarray:
    """``n`` x ``n`` counts, rows ground truth and columns prediction."""
    idx = n * gt.astype(np.int64).ravel() + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=n * n).reshape(n, n)


def iou_from_confusion(cm: np.ndarray) -> list[Optional[float]]:
    """TP / (TP + FP + FN) per class; None for classes absent from ground truth."""
    tp = np.diag(cm).astype(np.float64)
    gt_total = cm.sum(axis=1)
    union = gt_total + cm.sum(axis=0) - np.diag(cm)
    return [None if gt_total[i] == 0 else float(tp[i] / union[i]) for i in range(len(tp))]


def group_means(per_class: Mapping[int, Optional[float]], taxonomy: ClassTaxonomy) -> dict[str, Optional[float]]:
    """Mean IoU of each group over its classes present in ground truth.

    The ``all`` group spans every class, background included.
    """
    members = {
        "regular": taxonomy.regular,
        "old": taxonomy.old,
        "new": taxonomy.new,
        "all": taxonomy.continual_classes,
    }
    out: dict[str, Optional[float]] = {}
    for group in GROUPS:
        values = [per_class[c] for c in members[group] if per_class.get(c) is not None]
        out[group] = float(np.mean(values)) if values else None
    return out


def _index_map(taxonomy: ClassTaxonomy) -> tuple[list[int], np.ndarray]:
    ids = sorted(taxonomy.all_classes)
    lut = np.full(max(ids) + 1, -1, dtype=np.int64)
    lut[ids] = np.arange(len(ids))
    return ids, lut


def _to_indices(mask: np.ndarray, lut: np.ndarray, what: str) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size and (mask.min() < 0 or mask.max() >= len(lut) or (lut[mask] < 0).any()):
        stray = sorted(set(np.unique(mask).tolist()) - set(np.nonzero(lut >= 0)[0].tolist()))
        raise TaxonomyError(f"{what} contains class ids {stray} outside the taxonomy")
    return lut[mask]


def evaluate_arrays(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    taxonomy: ClassTaxonomy,
    sources: Optional[Sequence[str]] = None,
) -> ClassGroupMetrics:
    """Accumulate one global confusion matrix over all pairs, plus one per source tag."""
    ids, lut = _index_map(taxonomy)
    n = len(ids)
    total = np.zeros((n, n), dtype=np.int64)
    by_source: dict[str, np.ndarray] = {}
    for i, (pred, gt) in enumerate(zip(preds, gts)):
        cm = confusion_matrix(_to_indices(pred, lut, "prediction"), _to_indices(gt, lut, "ground truth"), n)
        total += cm
        if sources is not None and sources[i]:
            by_source[sources[i]] = by_source.get(sources[i], np.zeros_like(total)) + cm

    per_class = dict(zip(ids, iou_from_confusion(total)))
    per_dataset = {
        src: group_means(dict(zip(ids, iou_from_confusion(cm))), taxonomy) for src, cm in sorted(by_source.items())
    }
    pixels = int(total.sum())
    return ClassGroupMetrics(
        taxonomy=taxonomy,
        per_class_iou=per_class,
        group_miou=group_means(per_class, taxonomy),
        per_dataset=per_dataset,
        pixel_accuracy=float(np.trace(total) / pixels) if pixels else 0.0,
    )


def predict_images(weights: ModelWeights, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Class-id predictions for a stack of (3, h, w) images."""
    return np.concatenate([predict(weights, images[i : i + batch_size]) for i in range(0, len(images), batch_size)])


def evaluate(weights: ModelWeights, manifest: DatasetManifest, taxonomy: ClassTaxonomy) -> ClassGroupMetrics:
    """Segmentation quality of ``weights`` on every sample of ``manifest``."""
    _, lut = _index_map(taxonomy)
    preds, gts, sources = [], [], []
    for record in manifest.samples:
        image, mask = load_sample(manifest, record)
        _to_indices(mask, lut, f"mask {record.mask}")
        preds.append(predict(weights, image))
        gts.append(mask)
        sources.append(record.source)
    metrics = evaluate_arrays(preds, gts, taxonomy, sources)
    _logger.info("Evaluated %d samples: %s", len(gts), metrics.group_miou)
    return metrics


class ForgettingReport(CatsdBaseModel):
    """Change of group mIoU between time points, and the plasticity/rigidity pair."""

    method: str = ""
    deltas: dict[str, Optional[float]]
    plasticity: Optional[float]
    rigidity: Optional[float]


def forgetting_summary(
    metrics_t0: ClassGroupMetrics, metrics_t1: ClassGroupMetrics, method: str = ""
) -> ForgettingReport:
    """Group deltas (t=1 minus t=0), new-class mIoU at t=1, old-class mIoU retained at t=1."""
    if metrics_t0.taxonomy != metrics_t1.taxonomy:
        raise TaxonomyError("Metrics were computed under different taxonomies")
    deltas: dict[str, Optional[float]] = {}
    for group in GROUPS:
        before, after = metrics_t0.group_miou.get(group), metrics_t1.group_miou.get(group)
        deltas[group] = None if before is None or after is None else after - before
    return ForgettingReport(
        method=method,
        deltas=deltas,
        plasticity=metrics_t1.group_miou.get("new"),
        rigidity=metrics_t1.group_miou.get("old"),
    )


def background_only(metrics: ClassGroupMetrics) -> Optional[float]:
    return metrics.per_class_iou.get(BACKGROUND_ID)
