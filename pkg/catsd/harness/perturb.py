"""Common image corruptions at five severity levels.

Images are float (3, h, w) arrays in [0, 1]. Motion blur, fog and JPEG are
proxies: a horizontal box blur, an additive low-frequency haze and a
block-DCT coefficient quantization.
"""

from __future__ import annotations

import logging
from typing import Callable

try:
    from pydantic.v1 import validator
except ImportError:
    from pydantic import validator  # type: ignore[no-redef]

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.fft import dctn, idctn

from catsd.exceptions import PerturbationError
from catsd.model import CatsdBaseModel
from catsd.synth.texture import fbm_2d

_logger = logging.getLogger(__name__)

SEVERITIES = (1, 2, 3, 4, 5)

FAMILIES: dict[str, tuple[str, ...]] = {
    "noise": ("gaussian_noise", "shot_noise", "impulse_noise", "speckle_noise"),
    "blur": ("defocus_blur", "gaussian_blur", "motion_blur"),
    "digital": ("contrast", "pixelate", "jpeg_compression"),
    "weather": ("brightness", "fog"),
    "other": ("gamma", "saturate"),
}

# Magnitude per severity 1..5; larger is always a stronger corruption
SEVERITY_TABLES: dict[str, tuple[float, ...]] = {
    "gaussian_noise": (0.04, 0.06, 0.08, 0.09, 0.10),
    "shot_noise": (1 / 60, 1 / 25, 1 / 12, 1 / 5, 1 / 3),
    "impulse_noise": (0.03, 0.06, 0.09, 0.17, 0.27),
    "speckle_noise": (0.15, 0.2, 0.35, 0.45, 0.6),
    "defocus_blur": (1.0, 1.5, 2.0, 2.5, 3.0),
    "gaussian_blur": (0.5, 1.0, 1.5, 2.0, 3.0),
    "motion_blur": (3, 5, 7, 9, 11),
    "contrast": (0.6, 0.7, 0.8, 0.9, 0.95),
    "pixelate": (1.5, 2.0, 2.5, 10 / 3, 4.0),
    "jpeg_compression": (0.02, 0.04, 0.08, 0.12, 0.2),
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),
    "fog": (0.15, 0.25, 0.35, 0.45, 0.55),
    "gamma": (0.2, 0.4, 0.6, 0.8, 1.0),
    "saturate": (0.2, 0.4, 0.6, 0.8, 1.0),
}

_JPEG_BLOCK = 8


def family_of(corruption: str) -> str:
    for family, members in FAMILIES.items():
        if corruption in members:
            return family
    raise PerturbationError(f"Unknown corruption {corruption!r}")


def corruptions(families: tuple[str, ...] = tuple(FAMILIES)) -> list[str]:
    """Corruption names of the given families, in table order."""
    unknown = [f for f in families if f not in FAMILIES]
    if unknown:
        raise PerturbationError(f"Unknown corruption families {unknown}")
    return [c for f in families for c in FAMILIES[f]]


class PerturbationSpec(CatsdBaseModel):
    """One corruption at one severity."""

    corruption: str
    severity: int

    @validator("corruption")
    def _known(cls, v: str) -> str:  # noqa: N805
        family_of(v)
        return v

    @validator("severity")
    def _severity(cls, v: int) -> int:  # noqa: N805
        if v not in SEVERITIES:
            raise PerturbationError(f"Severity must be one of {SEVERITIES}, got {v}")
        return v

    @classmethod
    def build(cls, corruption: str, severity: int) -> PerturbationSpec:
        try:
            return cls(corruption=corruption, severity=severity)
        except ValueError as err:
            raise PerturbationError(str(err)) from err

    @property
    def family(self) -> str:
        return family_of(self.corruption)

    @property
    def magnitude(self) -> float:
        return SEVERITY_TABLES[self.corruption][self.severity - 1]


def _per_channel(image: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    return np.stack([fn(channel) for channel in image])


def _disk(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    kernel = (x * x + y * y <= radius * radius).astype(np.float64)
    return kernel / kernel.sum()


def _pixelate(image: np.ndarray, factor: float) -> np.ndarray:
    h, w = image.shape[-2:]
    small = (max(1, int(round(w / factor))), max(1, int(round(h / factor))))

    def channel(c: np.ndarray) -> np.ndarray:
        im = Image.fromarray(c.astype(np.float32), mode="F")
        return np.asarray(im.resize(small, Image.BOX).resize((w, h), Image.NEAREST), dtype=np.float64)

    return _per_channel(image, channel)


def _jpeg_proxy(image: np.ndarray, step: float) -> np.ndarray:
    """Quantize 8x8 block DCT coefficients, more coarsely at higher frequencies."""
    b = _JPEG_BLOCK
    h, w = image.shape[-2:]
    ph, pw = -h % b, -w % b
    padded = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="edge")
    c, hh, ww = padded.shape
    blocks = padded.reshape(c, hh // b, b, ww // b, b)
    coef = dctn(blocks, axes=(2, 4), norm="ortho")
    freq = np.add.outer(np.arange(b), np.arange(b)).astype(np.float64)
    q = step * (1.0 + freq)[None, None, :, None, :]
    restored = idctn(np.round(coef / q) * q, axes=(2, 4), norm="ortho")
    return restored.reshape(c, hh, ww)[:, :h, :w]


def _luma(image: np.ndarray) -> np.ndarray:
    return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]


def perturb(image: np.ndarray, spec: PerturbationSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply one corruption; the result is clipped to [0, 1]."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise PerturbationError(f"Expected a (3, h, w) image, got shape {x.shape}")
    m = spec.magnitude
    name = spec.corruption

    if name == "gaussian_noise":
        out = x + rng.normal(0.0, m, x.shape)
    elif name == "shot_noise":
        out = rng.poisson(x / m) * m
    elif name == "impulse_noise":
        hit = rng.random(x.shape) < m
        out = np.where(hit, rng.integers(0, 2, x.shape).astype(np.float64), x)
    elif name == "speckle_noise":
        out = x + x * rng.normal(0.0, m, x.shape)
    elif name == "defocus_blur":
        kernel = _disk(m)
        out = _per_channel(x, lambda c: ndimage.convolve(c, kernel, mode="reflect"))
    elif name == "gaussian_blur":
        out = _per_channel(x, lambda c: ndimage.gaussian_filter(c, sigma=m, mode="reflect"))
    elif name == "motion_blur":
        out = ndimage.uniform_filter1d(x, size=int(m), axis=-1, mode="nearest")
    elif name == "contrast":
        mean = x.mean(axis=(1, 2), keepdims=True)
        out = (x - mean) * (1.0 - m) + mean
    elif name == "pixelate":
        out = _pixelate(x, m)
    elif name == "jpeg_compression":
        out = _jpeg_proxy(x, m)
    elif name == "brightness":
        out = x + m
    elif name == "fog":
        h, w = x.shape[-2:]
        haze = fbm_2d(h, w, rng, octaves=3, base_scale=max(h, w) / 2)
        out = x * (1.0 - m) + m * haze[None]
    elif name == "gamma":
        out = x ** (1.0 + m)
    elif name == "saturate":
        gray = _luma(x)[None]
        out = gray + (x - gray) * (1.0 + m)
    else:  # pragma: no cover
        raise PerturbationError(f"Unknown corruption {name!r}")
    return np.clip(out, 0.0, 1.0)
