"""Reading samples back from disk."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from catsd.exceptions import MissingInputError
from catsd.model.manifest import DatasetManifest, SampleRecord

_logger = logging.getLogger(__name__)

# Expected layout of a real EndoVis-style dataset; no such data ships with the lab
ENDOVIS_LAYOUT = ("images", "labels")


def image_to_chw(image: np.ndarray) -> np.ndarray:
    """``uint8`` HxWx3 image to a float (3, h, w) array in [0, 1]."""
    return np.ascontiguousarray(np.asarray(image, dtype=np.float64).transpose(2, 0, 1) / 255.0)


def chw_to_image(array: np.ndarray) -> np.ndarray:
    return np.round(np.clip(array, 0.0, 1.0).transpose(1, 2, 0) * 255.0).astype(np.uint8)


def load_sample(manifest: DatasetManifest, record: SampleRecord) -> tuple[np.ndarray, np.ndarray]:
    """Image as float (3, h, w) in [0, 1] and mask as int64 (h, w)."""
    image_path, mask_path = manifest.path_of(record.image), manifest.path_of(record.mask)
    for path in (image_path, mask_path):
        if not path.is_file():
            raise MissingInputError(f"Sample file {path} does not exist")
    with Image.open(image_path) as im:
        image = image_to_chw(np.asarray(im.convert("RGB")))
    with Image.open(mask_path) as im:
        mask = np.asarray(im, dtype=np.int64)
    return image, mask


def load_dataset(manifest: DatasetManifest) -> tuple[np.ndarray, np.ndarray]:
    """Stack every sample: images (n, 3, h, w) and masks (n, h, w)."""
    if not manifest.samples:
        raise MissingInputError(f"Dataset {manifest.split or manifest.root} has no samples")
    pairs = [load_sample(manifest, s) for s in manifest.samples]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def load_endovis_stub(root: Union[str, Path]) -> list[tuple[Path, Path]]:
    """Pair images with label masks under ``root/<split>/{images,labels}``.

    Only the directory shape is checked; real data has to be supplied by the
    user. Raises MissingInputError when the layout is absent.
    """
    base = Path(root)
    if not base.is_dir():
        raise MissingInputError(f"No dataset directory at {base}")
    pairs: list[tuple[Path, Path]] = []
    for split_dir in sorted(p for p in base.iterdir() if p.is_dir()):
        images, labels = (split_dir / name for name in ENDOVIS_LAYOUT)
        if not images.is_dir() or not labels.is_dir():
            continue
        for image in sorted(images.glob("*.png")):
            label = labels / image.name
            if label.is_file():
                pairs.append((image, label))
    if not pairs:
        raise MissingInputError(
            f"{base} does not contain <split>/images/*.png with matching <split>/labels/*.png"
        )
    _logger.info("Found %d image/label pairs under %s", len(pairs), base)
    return pairs
