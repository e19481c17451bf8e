"""Procedural tissue textures."""

from __future__ import annotations

import logging
from typing import Literal

import numpy as np
from scipy import ndimage

from catsd.const import Origin
from catsd.exceptions import SynthesisError
from catsd.synth.assets import BackgroundAsset

_logger = logging.getLogger(__name__)

BackgroundKind = Literal["procedural", "real-standin"]

# Dark to light tissue colours; every stop is red-dominant
_TISSUE_PALETTE = np.array(
    [
        [0.35, 0.05, 0.07],
        [0.62, 0.14, 0.16],
        [0.82, 0.38, 0.38],
        [0.96, 0.66, 0.64],
    ]
)
# Palette of the stand-in for the single open-source real background
_REAL_PALETTE = np.array(
    [
        [0.45, 0.10, 0.08],
        [0.70, 0.28, 0.20],
        [0.88, 0.52, 0.42],
        [0.98, 0.78, 0.70],
    ]
)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise_2d(height: int, width: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Smoothly interpolated lattice noise in [0, 1]."""
    scale = max(scale, 1.0)
    gh = int(np.ceil(height / scale)) + 2
    gw = int(np.ceil(width / scale)) + 2
    grid = rng.random((gh, gw))

    ys = np.linspace(0, (height - 1) / scale, height)
    xs = np.linspace(0, (width - 1) / scale, width)
    yi, xi = np.floor(ys).astype(int), np.floor(xs).astype(int)
    uy, ux = np.meshgrid(_fade(ys - yi), _fade(xs - xi), indexing="ij")
    yi, xi = np.meshgrid(yi, xi, indexing="ij")

    v0 = grid[yi, xi] + ux * (grid[yi, xi + 1] - grid[yi, xi])
    v1 = grid[yi + 1, xi] + ux * (grid[yi + 1, xi + 1] - grid[yi + 1, xi])
    return v0 + uy * (v1 - v0)


def fbm_2d(
    height: int,
    width: int,
    rng: np.random.Generator,
    octaves: int = 5,
    base_scale: float = 32.0,
    persistence: float = 0.5,
    lacunarity: float = 2.0,
) -> np.ndarray:
    """Fractal sum of value-noise octaves, normalized to [0, 1]."""
    result = np.zeros((height, width))
    amplitude, total, scale = 1.0, 0.0, base_scale
    for _ in range(octaves):
        result += amplitude * value_noise_2d(height, width, scale, rng)
        total += amplitude
        amplitude *= persistence
        scale /= lacunarity
    return result / total


def _apply_palette(values: np.ndarray, palette: np.ndarray) -> np.ndarray:
    stops = np.linspace(0.0, 1.0, len(palette))
    return np.stack([np.interp(values, stops, palette[:, ch]) for ch in range(3)], axis=-1)


def _vignette(height: int, width: int, strength: float) -> np.ndarray:
    y, x = np.mgrid[0:height, 0:width]
    r = np.hypot((y - (height - 1) / 2) / height, (x - (width - 1) / 2) / width) * 2.0
    return 1.0 - strength * np.clip(r, 0.0, 1.0) ** 2


def gen_background(kind: BackgroundKind, seed: int, size: int) -> BackgroundAsset:
    """Tissue-like texture: fBm value noise through a red palette, darkened at the rim.

    ``procedural`` backgrounds are marked procedural-synthetic. ``real-standin``
    renders a vessel-streaked texture that plays the role of the one
    open-source real background.
    """
    if size <= 0 or size % 8:
        raise SynthesisError(f"Background size must be a positive multiple of 8, got {size}")
    rng = np.random.default_rng(seed)
    noise = fbm_2d(size, size, rng, base_scale=size / 2)
    noise = (noise - noise.min()) / max(noise.max() - noise.min(), 1e-12)

    if kind == "procedural":
        rgb = _apply_palette(noise, _TISSUE_PALETTE)
        origin = Origin.PROCEDURAL_SYNTHETIC
    elif kind == "real-standin":
        ridges = 1.0 - np.abs(2.0 * fbm_2d(size, size, rng, octaves=3, base_scale=size / 4) - 1.0)
        vessels = ndimage.gaussian_filter(np.clip((ridges - 0.85) * 6.0, 0.0, 1.0), sigma=0.7)
        rgb = _apply_palette(noise, _REAL_PALETTE)
        rgb[..., 1:] *= 1.0 - 0.6 * vessels[..., None]
        origin = Origin.OPEN_SOURCE_REAL
    else:
        raise SynthesisError(f"Unknown background kind {kind!r}")

    rgb *= _vignette(size, size, 0.35)[..., None]
    image = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    return BackgroundAsset(image, origin)
