"""Segmentation quality under corrupted inputs, per corruption and severity."""

from __future__ import annotations

import asyncio
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from catsd.harness.metrics import ClassGroupMetrics, evaluate_arrays
from catsd.harness.perturb import FAMILIES, SEVERITIES, PerturbationSpec, corruptions, perturb
from catsd.model import CatsdBaseModel
from catsd.model.manifest import DatasetManifest
from catsd.model.segnet import ModelWeights, predict
from catsd.model.taxonomy import ClassTaxonomy
from catsd.synth.dataset import substream, worker_limit
from catsd.synth.io import load_sample

_logger = logging.getLogger(__name__)


class RobustnessCell(CatsdBaseModel):
    """Metrics for one corruption at one severity; severity 0 is the clean input."""

    family: str
    corruption: str
    severity: int
    metrics: ClassGroupMetrics


class RobustnessReport(CatsdBaseModel):
    clean: ClassGroupMetrics
    cells: list[RobustnessCell]

    def grid(self, corruption: str) -> list[RobustnessCell]:
        """Severity-ordered cells of one corruption."""
        return sorted((c for c in self.cells if c.corruption == corruption), key=lambda c: c.severity)

    def corruptions(self) -> list[str]:
        return list(dict.fromkeys(c.corruption for c in self.cells))


async def robustness_report_async(
    weights: ModelWeights,
    manifest: DatasetManifest,
    taxonomy: ClassTaxonomy,
    families: Sequence[str] = tuple(FAMILIES),
    severities: Sequence[int] = SEVERITIES,
    seed: int = 0,
    threads: Optional[int] = None,
) -> RobustnessReport:
    """Evaluate ``weights`` on every (corruption, severity) version of the test set.

    Each image draws its corruption noise from a generator keyed by
    (seed, corruption, severity, image index), so results do not depend on
    the degree of parallelism.
    """
    names = corruptions(tuple(families))
    specs = [PerturbationSpec.build(name, s) for name in names for s in severities]
    loaded = [load_sample(manifest, record) for record in manifest.samples]
    gts = [mask for _, mask in loaded]
    sources = [record.source for record in manifest.samples]
    semaphore = asyncio.Semaphore(worker_limit(threads))

    def _predict(spec: Optional[PerturbationSpec], index: int) -> np.ndarray:
        image = loaded[index][0]
        if spec is not None:
            image = perturb(image, spec, substream(seed, spec.corruption, spec.severity, index))
        return predict(weights, image)

    async def _bounded(spec: Optional[PerturbationSpec], index: int) -> np.ndarray:
        async with semaphore:
            return await asyncio.to_thread(_predict, spec, index)

    async def _cell(spec: Optional[PerturbationSpec]) -> ClassGroupMetrics:
        preds = await asyncio.gather(*(_bounded(spec, i) for i in range(len(loaded))))
        return evaluate_arrays(list(preds), gts, taxonomy, sources)

    clean = await _cell(None)
    cells = []
    for spec in specs:
        metrics = await _cell(spec)
        _logger.debug("%s severity %d: %s", spec.corruption, spec.severity, metrics.group_miou)
        cells.append(
            RobustnessCell(family=spec.family, corruption=spec.corruption, severity=spec.severity, metrics=metrics)
        )
    _logger.info("Robustness sweep over %d corruptions x %d severities done", len(names), len(severities))
    return RobustnessReport(clean=clean, cells=cells)


def robustness_report(
    weights: ModelWeights,
    manifest: DatasetManifest,
    taxonomy: ClassTaxonomy,
    families: Sequence[str] = tuple(FAMILIES),
    severities: Sequence[int] = SEVERITIES,
    seed: int = 0,
    threads: Optional[int] = None,
) -> RobustnessReport:
    """Blocking wrapper around :func:`robustness_report_async`."""
    return asyncio.run(robustness_report_async(weights, manifest, taxonomy, families, severities, seed, threads))


def severity_trend(report: RobustnessReport, corruption: str, group: str = "old") -> float:
    """Spearman correlation of a group's mIoU with severity; 0 when undefined."""
    cells = [c for c in report.grid(corruption) if c.metrics.group_miou.get(group) is not None]
    if len(cells) < 2:
        return 0.0
    rho, _ = spearmanr([c.severity for c in cells], [c.metrics.group_miou[group] for c in cells])
    return 0.0 if rho is None or np.isnan(rho) else float(rho)
