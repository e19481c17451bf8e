"""Compositing of instruments onto backgrounds, and colour harmonization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
from typing import Sequence

import numpy as np

from catsd.const import MAX_INSTRUMENTS_PER_IMAGE
from catsd.exceptions import SynthesisError
from catsd.model.manifest import InstanceRecord
from catsd.synth.assets import BackgroundAsset, ForegroundAsset

_logger = logging.getLogger(__name__)

# Full-range BT.601 luminance/chrominance transform
_RGB_TO_YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


@dataclass(frozen=True)
class Placement:
    """A foreground asset with its canvas position (top-left corner) and z-order."""

    asset: ForegroundAsset
    position: tuple[int, int]
    z: int = 0


@dataclass
class SegSample:
    """An RGB image with its per-pixel class mask (0 = background)."""

    image: np.ndarray
    mask: np.ndarray
    instances: list[InstanceRecord] = field(default_factory=list)


def blend(
    background: BackgroundAsset,
    placements: Sequence[Placement],
    max_instruments: int = MAX_INSTRUMENTS_PER_IMAGE,
) -> SegSample:
    """Composite foregrounds in ascending z-order; the topmost class owns each pixel."""
    if len(placements) > max_instruments:
        raise SynthesisError(f"At most {max_instruments} instruments per image, got {len(placements)}")
    image = np.array(background.image, dtype=np.uint8)
    height, width = image.shape[:2]
    mask = np.zeros((height, width), dtype=np.uint8)
    instances: list[InstanceRecord] = []

    for placement in sorted(placements, key=lambda p: p.z):
        asset = placement.asset
        x, y = placement.position
        ah, aw = asset.rgba.shape[:2]
        # canvas window and matching asset window after clipping at the borders
        cx0, cy0 = max(x, 0), max(y, 0)
        cx1, cy1 = min(x + aw, width), min(y + ah, height)
        if cx0 >= cx1 or cy0 >= cy1:
            raise SynthesisError(f"Instrument at {placement.position} lies entirely off the canvas")
        window = asset.rgba[cy0 - y : cy1 - y, cx0 - x : cx1 - x]
        covered = window[..., 3] > 0
        image[cy0:cy1, cx0:cx1][covered] = window[..., :3][covered]
        mask[cy0:cy1, cx0:cx1][covered] = asset.class_id

        bx0, by0, bx1, by1 = asset.bbox
        instances.append(
            InstanceRecord(
                class_id=asset.class_id,
                bbox=(
                    max(x + bx0, 0),
                    max(y + by0, 0),
                    min(x + bx1, width),
                    min(y + by1, height),
                ),
                background_origin=background.origin,
            )
        )
    return SegSample(image=image, mask=mask, instances=instances)


def rgb_to_ycc(rgb: np.ndarray) -> np.ndarray:
    return rgb.astype(np.float64) @ _RGB_TO_YCC.T


def ycc_to_rgb(ycc: np.ndarray) -> np.ndarray:
    return ycc @ _YCC_TO_RGB.T


def harmonize(sample: SegSample, strength: float = 1.0) -> SegSample:
    """Shift foreground colour statistics towards the background's.

    Per luminance/chrominance channel the foreground is standardized with its
    own mean and deviation and rescaled with the background's (Reinhard
    transfer). ``strength`` blends between the original (0) and the full
    transfer (1). Background pixels and the mask are left untouched.
    """
    if not 0.0 <= strength <= 1.0:
        raise SynthesisError(f"Harmonization strength must lie in [0, 1], got {strength}")
    fg = sample.mask != 0
    if not fg.any() or fg.all():
        return replace(sample, image=sample.image.copy(), mask=sample.mask.copy())

    ycc = rgb_to_ycc(sample.image)
    f, b = ycc[fg], ycc[~fg]
    mu_f, sd_f = f.mean(axis=0), f.std(axis=0)
    mu_b, sd_b = b.mean(axis=0), b.std(axis=0)
    gain = np.where(sd_f > 1e-6, sd_b / np.where(sd_f > 1e-6, sd_f, 1.0), 1.0)
    transferred = (f - mu_f) * gain + mu_b
    f = f + strength * (transferred - f)

    image = sample.image.copy()
    image[fg] = np.clip(np.round(ycc_to_rgb(f)), 0, 255).astype(np.uint8)
    return replace(sample, image=image, mask=sample.mask.copy())
