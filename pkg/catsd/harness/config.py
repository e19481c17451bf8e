"""Settings of a two time point continual learning experiment."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal, Optional

try:
    from pydantic.v1 import validator
except ImportError:
    from pydantic import validator  # type: ignore[no-redef]

import numpy as np

from catsd.const import LR_T0, LR_T1, POD_SCALES, SHIFT_EPSILON, T_OLD, T_REGULAR, Method
from catsd.distill import LossWeights, ShiftSpec, TemperatureVector, cat_vector
from catsd.exceptions import MethodConfigError, MissingInputError, TaxonomyError
from catsd.model import CatsdBaseModel
from catsd.model.manifest import DatasetManifest
from catsd.model.taxonomy import ClassTaxonomy

_logger = logging.getLogger(__name__)

Selection = Literal["final", "best_val"]


class ExperimentConfig(CatsdBaseModel):
    """Method, data, optimizer and distillation settings.

    Manifest paths may point at a manifest file or at a dataset directory
    holding ``manifest.json``.
    """

    taxonomy: ClassTaxonomy = ClassTaxonomy()
    method: Method = Method.CATSD
    t0_train: Optional[str] = None
    t1_train: Optional[str] = None
    exemplar: Optional[str] = None
    val: Optional[str] = None
    test: Optional[str] = None
    lr_t0: float = LR_T0
    lr_t1: float = LR_T1
    epochs_t0: int = 10
    epochs_t1: int = 10
    batch_size: int = 8
    seed: int = 0
    t_old: Optional[float] = T_OLD
    t_regular: Optional[float] = T_REGULAR
    # scalar temperature of the TKD baseline
    temperature: Optional[float] = 2.0
    scales: Optional[tuple[int, ...]] = POD_SCALES
    epsilons: Optional[tuple[float, ...]] = SHIFT_EPSILON
    # one shifted block per scale, each cut by ShiftSpec.for_scale; overrides epsilons
    shift_scales: Optional[tuple[int, ...]] = None
    shifted: bool = True
    weights: LossWeights = LossWeights()
    selection: Selection = "final"
    pseudo_exemplar_methods: tuple[Method, ...] = (Method.CATSD,)

    class Config:  # noqa: D106
        extra = "forbid"

    @validator("lr_t0", "lr_t1")
    def _lr(cls, v: float) -> float:  # noqa: N805
        if v < 0:
            raise ValueError("learning rates must not be negative")
        return v

    @validator("epochs_t0", "epochs_t1")
    def _epochs(cls, v: int) -> int:  # noqa: N805
        if v < 0:
            raise ValueError("epochs must not be negative")
        return v

    @validator("shift_scales")
    def _shift_scales(cls, v: Optional[tuple[int, ...]]) -> Optional[tuple[int, ...]]:  # noqa: N805
        if v is not None and any(k < 2 for k in v):
            raise ValueError("shift scales must be at least 2")
        return v

    @validator("batch_size")
    def _batch(cls, v: int) -> int:  # noqa: N805
        if v < 1:
            raise ValueError("batch_size must be positive")
        return v

    def tvec(self) -> TemperatureVector:
        if self.t_old is None or self.t_regular is None:
            raise MethodConfigError(f"Method {self.method} needs t_old and t_regular")
        return cat_vector(self.taxonomy, self.t_old, self.t_regular)

    def shifts(self) -> tuple[ShiftSpec, ...]:
        """Shift specs of the shifted-feature embedding; empty when it is switched off."""
        if not self.shifted:
            return ()
        if self.shift_scales:
            return tuple(ShiftSpec.for_scale(k) for k in self.shift_scales)
        if self.epsilons is None:
            raise MethodConfigError(f"Method {self.method} needs shift epsilons or shift scales")
        return (ShiftSpec(self.epsilons),)

    def check_method(self) -> None:
        """Raise MethodConfigError when the method lacks a hyperparameter it needs."""
        method = Method(self.method)
        if method == Method.TKD and not self.temperature:
            raise MethodConfigError("Method tkd needs a positive temperature")
        if method in (Method.LOCALPOD, Method.CATSD) and not self.scales:
            raise MethodConfigError(f"Method {method} needs at least one pooling scale")
        if method == Method.CATSD:
            self.tvec()
            self.shifts()

    @property
    def uses_pseudo_exemplars(self) -> bool:
        return self.exemplar is not None and Method(self.method) in {Method(m) for m in self.pseudo_exemplar_methods}

    def with_overrides(self, **changes: object) -> ExperimentConfig:
        """Copy with some fields replaced, validating the result."""
        return ExperimentConfig(**{**self.dict(), **changes})


def check_stage_masks(manifest: DatasetManifest, masks: np.ndarray, taxonomy: ClassTaxonomy, forbidden: tuple[int, ...], stage: str) -> None:
    """Ensure a training set respects its time point's class set."""
    present = set(int(c) for c in np.unique(masks))
    taxonomy.check_ids(present)
    stray = sorted(present & set(forbidden))
    if stray:
        raise TaxonomyError(
            f"{stage} training data {manifest.split or manifest.root} contains class ids {stray}"
        )


def manifest_path(value: Optional[str], name: str) -> Path:
    if value is None:
        raise MissingInputError(f"No {name} dataset configured")
    return Path(value)
