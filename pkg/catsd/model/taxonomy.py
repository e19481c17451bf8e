"""Partition of class ids into background, regular, old and new groups."""

from __future__ import annotations

from typing import Iterable

try:
    from pydantic.v1 import root_validator, validator
except ImportError:
    from pydantic import root_validator, validator  # type: ignore[no-redef]

from catsd.const import BACKGROUND_ID, NEW_CLASSES, OLD_CLASSES, REGULAR_CLASSES
from catsd.exceptions import TaxonomyError
from catsd.model import CatsdBaseModel


class ClassTaxonomy(CatsdBaseModel):
    """Class groups of a two time point continual segmentation problem.

    Regular classes appear in both the old and the new dataset, old classes only
    in the old one, new classes only in the new one. Background (id 0) is
    implicit and belongs to every model.
    """

    regular: tuple[int, ...] = REGULAR_CLASSES
    old: tuple[int, ...] = OLD_CLASSES
    new: tuple[int, ...] = NEW_CLASSES

    class Config:  # noqa: D106
        extra = "forbid"

    @validator("regular", "old", "new", each_item=True)
    def _positive(cls, v: int) -> int:  # noqa: N805
        if v <= BACKGROUND_ID:
            raise ValueError(f"class id {v} must be positive; 0 is background")
        return v

    @validator("regular", "old", "new")
    def _sorted_unique(cls, v: tuple[int, ...]) -> tuple[int, ...]:  # noqa: N805
        if len(set(v)) != len(v):
            raise ValueError(f"duplicate class ids in {v}")
        return tuple(sorted(v))

    @root_validator(skip_on_failure=True)
    def _disjoint(cls, values: dict) -> dict:  # noqa: N805
        groups = {k: set(values[k]) for k in ("regular", "old", "new")}
        for a, b in (("regular", "old"), ("regular", "new"), ("old", "new")):
            shared = groups[a] & groups[b]
            if shared:
                raise ValueError(f"{a} and {b} share class ids {sorted(shared)}")
        return values

    @classmethod
    def reference(cls) -> ClassTaxonomy:
        """The 5 regular / 2 old / 2 new instrument taxonomy."""
        return cls()

    @classmethod
    def build(
        cls, regular: Iterable[int], old: Iterable[int], new: Iterable[int]
    ) -> ClassTaxonomy:
        """Construct a taxonomy, raising TaxonomyError instead of a validation error."""
        try:
            return cls(regular=tuple(regular), old=tuple(old), new=tuple(new))
        except ValueError as err:
            raise TaxonomyError(str(err)) from err

    @property
    def old_model_classes(self) -> tuple[int, ...]:
        """Classes predicted at t=0: background, regular and old."""
        return (BACKGROUND_ID, *sorted(self.regular + self.old))

    @property
    def continual_classes(self) -> tuple[int, ...]:
        """Classes predicted at t=1: the old model's classes followed by the new ones."""
        return self.old_model_classes + self.new

    @property
    def all_classes(self) -> frozenset[int]:
        return frozenset(self.continual_classes)

    def group_of(self, class_id: int) -> str:
        """Name of the group a class belongs to."""
        if class_id == BACKGROUND_ID:
            return "background"
        for group in ("regular", "old", "new"):
            if class_id in getattr(self, group):
                return group
        raise TaxonomyError(f"Class id {class_id} is not part of the taxonomy")

    def check_ids(self, ids: Iterable[int], allowed: Iterable[int] | None = None) -> None:
        """Raise TaxonomyError if any id falls outside ``allowed`` (default: all classes)."""
        allowed_set = set(self.all_classes if allowed is None else allowed)
        stray = sorted(set(int(i) for i in ids) - allowed_set)
        if stray:
            raise TaxonomyError(f"Class ids {stray} are outside the permitted set")
