"""Class-aware temperature vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from catsd.const import T_OLD, T_REGULAR
from catsd.exceptions import DomainError, TaxonomyError
from catsd.model.taxonomy import ClassTaxonomy


@dataclass(frozen=True)
class TemperatureVector:
    """Per-class softening temperatures, ordered like the old model's class list."""

    class_ids: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.class_ids) != len(self.values):
            raise TaxonomyError(
                f"{len(self.values)} temperatures for {len(self.class_ids)} classes"
            )
        if any(not v > 0 for v in self.values):
            raise DomainError(f"Temperatures must be strictly positive, got {self.values}")

    @classmethod
    def constant(cls, class_ids: Sequence[int], value: float) -> TemperatureVector:
        return cls(tuple(class_ids), tuple(float(value) for _ in class_ids))

    def __len__(self) -> int:
        return len(self.class_ids)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def as_dict(self) -> Mapping[int, float]:
        return dict(zip(self.class_ids, self.values))

    def check_covers(self, class_list: Optional[Sequence[int]], k: int) -> None:
        """Raise TaxonomyError unless this vector matches a k-class teacher."""
        if len(self) != k:
            raise TaxonomyError(f"Temperature vector covers {len(self)} classes, teacher has {k}")
        if class_list is not None and tuple(class_list) != self.class_ids:
            raise TaxonomyError(
                f"Temperature vector classes {self.class_ids} differ from teacher classes "
                f"{tuple(class_list)}"
            )


def cat_vector(
    taxonomy: ClassTaxonomy, t_old: float = T_OLD, t_regular: float = T_REGULAR
) -> TemperatureVector:
    """Old classes get ``t_old``; background and regular classes get ``t_regular``."""
    if not (t_old > 0 and t_regular > 0):
        raise DomainError(f"Temperatures must be strictly positive, got {t_old}, {t_regular}")
    if t_regular < t_old:
        raise DomainError(
            f"Regular-class temperature {t_regular} must exceed old-class temperature {t_old}"
        )
    old = set(taxonomy.old)
    ids = taxonomy.old_model_classes
    return TemperatureVector(
        ids, tuple(float(t_old) if c in old else float(t_regular) for c in ids)
    )
