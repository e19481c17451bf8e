"""Metrics report documents and colorized prediction dumps."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from catsd.harness.metrics import ClassGroupMetrics, ForgettingReport
from catsd.harness.robustness import RobustnessReport
from catsd.model import CatsdBaseModel
from catsd.model.manifest import DatasetManifest
from catsd.model.segnet import ModelWeights, predict
from catsd.synth.io import chw_to_image, load_sample

_logger = logging.getLogger(__name__)

# RGB per class id; ids past the table wrap around
CLASS_PALETTE = np.array(
    [
        [0, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
    ],
    dtype=np.uint8,
)
DUMP_ZOOM = 4


class RobustnessEntry(CatsdBaseModel):
    family: str
    corruption: str
    severity: int
    group_miou: dict[str, Optional[float]]


class MetricsReport(CatsdBaseModel):
    """What ``eval`` and ``robust`` write to disk."""

    method: str
    seed: int
    per_class_iou: dict[int, Optional[float]]
    group_miou: dict[str, Optional[float]]
    per_dataset: dict[str, dict[str, Optional[float]]] = {}
    pixel_accuracy: float = 0.0
    robustness: list[RobustnessEntry] = []
    forgetting: Optional[ForgettingReport] = None

    @classmethod
    def from_metrics(
        cls,
        metrics: ClassGroupMetrics,
        method: str,
        seed: int,
        robustness: Optional[RobustnessReport] = None,
        forgetting: Optional[ForgettingReport] = None,
    ) -> MetricsReport:
        entries = []
        if robustness is not None:
            entries = [
                RobustnessEntry(
                    family=c.family, corruption=c.corruption, severity=c.severity, group_miou=c.metrics.group_miou
                )
                for c in robustness.cells
            ]
        return cls(
            method=method,
            seed=seed,
            per_class_iou=metrics.per_class_iou,
            group_miou=metrics.group_miou,
            per_dataset=metrics.per_dataset,
            pixel_accuracy=metrics.pixel_accuracy,
            robustness=entries,
            forgetting=forgetting,
        )

    def to_json(self) -> str:
        return json.dumps(self.dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path: Union[str, Path]) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.to_json(), encoding="utf-8")
        return p


def colorize(mask: np.ndarray) -> np.ndarray:
    return CLASS_PALETTE[np.asarray(mask, dtype=np.int64) % len(CLASS_PALETTE)]


def side_by_side(image: np.ndarray, gt: np.ndarray, pred: np.ndarray, zoom: int = DUMP_ZOOM) -> np.ndarray:
    """Image, ground truth and prediction panels as one HxWx3 ``uint8`` array."""
    panel = np.concatenate([chw_to_image(image), colorize(gt), colorize(pred)], axis=1)
    return np.repeat(np.repeat(panel, zoom, axis=0), zoom, axis=1)


def dump_predictions(
    weights: ModelWeights,
    manifest: DatasetManifest,
    out_dir: Union[str, Path],
    limit: Optional[int] = None,
) -> list[Path]:
    """Write one side-by-side PNG per test sample (up to ``limit``)."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for index, record in enumerate(manifest.samples[:limit]):
        image, gt = load_sample(manifest, record)
        path = root / f"{index:05d}.png"
        Image.fromarray(side_by_side(image, gt, predict(weights, image))).save(path)
        written.append(path)
    _logger.info("Wrote %d prediction panels to %s", len(written), root)
    return written
