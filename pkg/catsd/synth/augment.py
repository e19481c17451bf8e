"""Seeded geometric and photometric augmentation of RGB and RGBA images."""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Optional

try:
    from pydantic.v1 import validator
except ImportError:
    from pydantic import validator  # type: ignore[no-redef]

import numpy as np
from PIL import Image, ImageEnhance, ImageFilter

from catsd.exceptions import DomainError
from catsd.model import CatsdBaseModel

_logger = logging.getLogger(__name__)

Range = Optional[tuple[float, float]]

MAX_ROTATION = 45.0
MAX_SHEAR = 16.0


def _check_range(value: Range, low: float, high: float, name: str) -> Range:
    if value is None:
        return None
    lo, hi = value
    if lo > hi:
        raise ValueError(f"{name} range {value} is reversed")
    if lo < low or hi > high:
        raise ValueError(f"{name} range {value} exceeds [{low}, {high}]")
    return value


class AugmentationSpec(CatsdBaseModel):
    """Enabled transforms and their ranges; ``None`` disables a transform."""

    hflip: bool = True
    vflip: bool = True
    flip_probability: float = 0.5
    rotation: Range = (-MAX_ROTATION, MAX_ROTATION)
    shear: Range = (-MAX_SHEAR, MAX_SHEAR)
    scale: Range = (0.8, 1.2)
    blur_radius: Range = (0.0, 1.0)
    contrast: Range = (0.8, 1.2)
    brightness: Range = (0.8, 1.2)
    seed: int = 0

    class Config:  # noqa: D106
        extra = "forbid"

    @validator("flip_probability")
    def _probability(cls, v: float) -> float:  # noqa: N805
        if not 0.0 <= v <= 1.0:
            raise ValueError("flip_probability must lie in [0, 1]")
        return v

    @validator("rotation")
    def _rotation(cls, v: Range) -> Range:  # noqa: N805
        return _check_range(v, -MAX_ROTATION, MAX_ROTATION, "rotation")

    @validator("shear")
    def _shear(cls, v: Range) -> Range:  # noqa: N805
        return _check_range(v, -MAX_SHEAR, MAX_SHEAR, "shear")

    @validator("scale")
    def _scale(cls, v: Range) -> Range:  # noqa: N805
        if v is not None and v[0] <= 0:
            raise DomainError(f"Scale factors must be positive, got {v}")
        return _check_range(v, 0.0, math.inf, "scale")

    @validator("blur_radius", "contrast", "brightness")
    def _non_negative(cls, v: Range) -> Range:  # noqa: N805
        return _check_range(v, 0.0, math.inf, "photometric")

    @classmethod
    def identity(cls, seed: int = 0) -> AugmentationSpec:
        """Settings with every transform disabled."""
        return cls(
            hflip=False,
            vflip=False,
            rotation=None,
            shear=None,
            scale=None,
            blur_radius=None,
            contrast=None,
            brightness=None,
            seed=seed,
        )

    @classmethod
    def for_backgrounds(cls, seed: int = 0) -> AugmentationSpec:
        """Mild rotations with enough zoom that no empty corner enters the frame."""
        return cls(rotation=(-10.0, 10.0), shear=None, scale=(1.2, 1.5), seed=seed)


@dataclass(frozen=True)
class TransformParams:
    """One sampled transform chain."""

    hflip: bool = False
    vflip: bool = False
    angle: float = 0.0
    shear: float = 0.0
    scale: float = 1.0
    blur_radius: float = 0.0
    contrast: float = 1.0
    brightness: float = 1.0

    @property
    def is_geometric(self) -> bool:
        return self.angle != 0.0 or self.shear != 0.0 or self.scale != 1.0


def sample_transform(spec: AugmentationSpec, rng: np.random.Generator) -> TransformParams:
    """Draw transform parameters; every range is drawn in a fixed order."""

    def draw(r: Range, neutral: float) -> float:
        value = float(rng.uniform(r[0], r[1])) if r is not None else neutral
        return value

    hflip = bool(rng.random() < spec.flip_probability) and spec.hflip
    vflip = bool(rng.random() < spec.flip_probability) and spec.vflip
    return TransformParams(
        hflip=hflip,
        vflip=vflip,
        angle=draw(spec.rotation, 0.0),
        shear=draw(spec.shear, 0.0),
        scale=draw(spec.scale, 1.0),
        blur_radius=draw(spec.blur_radius, 0.0),
        contrast=draw(spec.contrast, 1.0),
        brightness=draw(spec.brightness, 1.0),
    )


def _inverse_affine(params: TransformParams, width: int, height: int) -> tuple[float, ...]:
    """Output-to-input affine coefficients for PIL, about the image centre."""
    if params.scale <= 0:
        raise DomainError(f"Degenerate scale {params.scale}")
    a = math.radians(params.angle)
    sh = math.tan(math.radians(params.shear))
    rotation = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    forward = rotation @ shear * params.scale
    inverse = np.linalg.inv(forward)
    cx, cy = width / 2.0, height / 2.0
    offset = np.array([cx, cy]) - inverse @ np.array([cx, cy])
    return (
        inverse[0, 0],
        inverse[0, 1],
        offset[0],
        inverse[1, 0],
        inverse[1, 1],
        offset[1],
    )


def apply_transform(image: np.ndarray, params: TransformParams) -> np.ndarray:
    """Apply a sampled chain to a ``uint8`` RGB or RGBA image.

    Alpha is warped with nearest-neighbour sampling and re-binarized; colour
    is warped bilinearly and receives the photometric steps.
    """
    arr = np.asarray(image, dtype=np.uint8)
    if params.hflip:
        arr = arr[:, ::-1]
    if params.vflip:
        arr = arr[::-1]
    rgb = Image.fromarray(np.ascontiguousarray(arr[..., :3]))
    alpha = Image.fromarray(np.ascontiguousarray(arr[..., 3])) if arr.shape[2] == 4 else None

    if params.is_geometric:
        coeffs = _inverse_affine(params, rgb.width, rgb.height)
        rgb = rgb.transform(rgb.size, Image.Transform.AFFINE, coeffs, resample=Image.Resampling.BILINEAR)
        if alpha is not None:
            alpha = alpha.transform(alpha.size, Image.Transform.AFFINE, coeffs, resample=Image.Resampling.NEAREST)

    if params.blur_radius > 0:
        rgb = rgb.filter(ImageFilter.GaussianBlur(params.blur_radius))
    if params.contrast != 1.0:
        rgb = ImageEnhance.Contrast(rgb).enhance(params.contrast)
    if params.brightness != 1.0:
        rgb = ImageEnhance.Brightness(rgb).enhance(params.brightness)

    out = np.asarray(rgb, dtype=np.uint8)
    if alpha is not None:
        a = np.where(np.asarray(alpha) >= 128, 255, 0).astype(np.uint8)
        out = np.dstack([out, a])
    return np.ascontiguousarray(out)


def augment(image: np.ndarray, spec: AugmentationSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Sample a transform chain from ``spec`` and apply it.

    Without ``rng`` the chain is drawn from ``spec.seed``.
    """
    stream = rng if rng is not None else np.random.default_rng(spec.seed)
    return apply_transform(image, sample_transform(spec, stream))
