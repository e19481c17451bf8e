"""Index of a synthesized dataset."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Union

try:
    from pydantic.v1 import Field, PrivateAttr, ValidationError
except ImportError:
    from pydantic import Field, PrivateAttr, ValidationError  # type: ignore[no-redef]

from catsd.const import Origin
from catsd.exceptions import MissingInputError, SynthesisError
from catsd.model import CatsdBaseModel
from catsd.model.taxonomy import ClassTaxonomy

_logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class InstanceRecord(CatsdBaseModel):
    """One composited instrument: its class, clipped bounding box and background origin."""

    class_id: int = Field(alias="class")
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive), clipped to the canvas
    background_origin: Origin

    class Config:  # noqa: D106
        allow_population_by_field_name = True


class SampleRecord(CatsdBaseModel):
    """An image/mask pair relative to the manifest directory."""

    image: str
    mask: str
    instances: list[InstanceRecord] = []
    split: str = ""
    # Time point whose data distribution the sample belongs to ("t0"/"t1")
    source: str = ""


class DatasetManifest(CatsdBaseModel):
    """Files, per-class instance totals, split and generation parameters of a dataset."""

    seed: int
    taxonomy: ClassTaxonomy
    samples: list[SampleRecord]
    class_totals: dict[int, int]
    split: str = ""
    n_background_variations: int = 0
    n_foreground_variations: int = 0
    pseudo_exemplars: bool = False

    _root: Path = PrivateAttr(default_factory=Path)

    @property
    def root(self) -> Path:
        """Directory the sample paths are relative to."""
        return self._root

    def with_root(self, root: Union[str, Path]) -> DatasetManifest:
        self._root = Path(root)
        return self

    def path_of(self, relative: str) -> Path:
        return self._root / relative

    def to_json(self) -> str:
        """Canonical serialization: stable key order so equal manifests are equal bytes."""
        return json.dumps(self.dict(by_alias=True), indent=2, sort_keys=True) + "\n"

    def write(self, directory: Union[str, Path], name: str = MANIFEST_NAME) -> Path:
        path = Path(directory) / name
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> DatasetManifest:
        """Load a manifest file, or the manifest inside a dataset directory."""
        p = Path(path)
        if p.is_dir():
            p = p / MANIFEST_NAME
        if not p.is_file():
            raise MissingInputError(f"Manifest {p} does not exist")
        try:
            manifest = cls.parse_raw(p.read_text(encoding="utf-8"))
        except ValidationError as err:
            raise SynthesisError(f"Manifest {p} is invalid: {err}") from err
        return manifest.with_root(p.parent)

    def check_files(self) -> None:
        """Raise MissingInputError if any referenced image or mask is absent."""
        for sample in self.samples:
            for rel in (sample.image, sample.mask):
                if not self.path_of(rel).is_file():
                    raise MissingInputError(f"Manifest references missing file {rel}")

    def merged(self, other: DatasetManifest, split: Optional[str] = None) -> DatasetManifest:
        """Combine two manifests sharing a root directory into one index."""
        totals = dict(self.class_totals)
        for k, v in other.class_totals.items():
            totals[k] = totals.get(k, 0) + v
        return DatasetManifest(
            seed=self.seed,
            taxonomy=self.taxonomy,
            samples=self.samples + other.samples,
            class_totals=totals,
            split=split or self.split,
            n_background_variations=self.n_background_variations,
            n_foreground_variations=self.n_foreground_variations,
        ).with_root(self._root)
