"""Foreground instrument bank and background images."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Callable, Iterable, Union

import numpy as np
from PIL import Image, ImageDraw

from catsd.const import CLASS_NAMES, Origin, Pose
from catsd.exceptions import MissingInputError, SynthesisError

_logger = logging.getLogger(__name__)

ASSET_SIZE = 48
SHAFT_END = 26
_MID = ASSET_SIZE // 2

# Base tint per head design; instruments stay distinguishable after harmonization
_TINTS = (
    (0.20, 0.45, 0.95),
    (0.95, 0.85, 0.20),
    (0.20, 0.90, 0.35),
    (0.85, 0.30, 0.90),
    (0.10, 0.85, 0.90),
    (0.98, 0.55, 0.10),
    (0.55, 0.35, 0.15),
    (0.92, 0.92, 0.92),
    (0.10, 0.10, 0.12),
)


@dataclass(frozen=True)
class ForegroundAsset:
    """RGBA instrument crop; alpha is the silhouette, binary after construction."""

    class_id: int
    rgba: np.ndarray
    pose: Pose

    def __post_init__(self) -> None:
        rgba = np.array(self.rgba, dtype=np.uint8)
        if rgba.ndim != 3 or rgba.shape[2] != 4:
            raise SynthesisError(f"Foreground asset needs an RGBA array, got {rgba.shape}")
        rgba[..., 3] = np.where(rgba[..., 3] >= 128, 255, 0)
        rgba.setflags(write=False)
        object.__setattr__(self, "rgba", rgba)

    @property
    def alpha(self) -> np.ndarray:
        """Boolean silhouette."""
        return self.rgba[..., 3] > 0

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """Silhouette bounds ``(x0, y0, x1, y1)``, exclusive upper bounds."""
        ys, xs = np.nonzero(self.alpha)
        if xs.size == 0:
            return 0, 0, 0, 0
        return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1

    @property
    def file_name(self) -> str:
        return f"{self.class_id}_{self.pose}.png"


@dataclass(frozen=True)
class BackgroundAsset:
    """RGB tissue image and where it came from."""

    image: np.ndarray
    origin: Origin

    def __post_init__(self) -> None:
        image = np.array(self.image, dtype=np.uint8)
        if image.ndim != 3 or image.shape[2] != 3:
            raise SynthesisError(f"Background needs an RGB array, got {image.shape}")
        image.setflags(write=False)
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "origin", Origin(self.origin))


AssetBank = dict[tuple[int, Pose], ForegroundAsset]

HeadDrawer = Callable[[ImageDraw.ImageDraw, bool], None]


def _jaws(draw: ImageDraw.ImageDraw, opening: float, length: int, width: int) -> None:
    for sign in (-1, 1):
        draw.line([(SHAFT_END, _MID), (SHAFT_END + length, _MID + sign * opening)], fill=255, width=width)


def _bipolar(draw: ImageDraw.ImageDraw, is_open: bool) -> None:
    _jaws(draw, 8 if is_open else 3, 18, 3)


def _prograsp(draw: ImageDraw.ImageDraw, is_open: bool) -> None:
    off = 7 if is_open else 4
    for sign in (-1, 1):
        y = _MID + sign * off
        draw.polygon([(SHAFT_END, _MID), (42, y - 3), (42, y + 3)], fill=255)
        draw.ellipse([(34, y - 1), (37, y + 1)], fill=0)


def _needle_driver(draw: ImageDraw.ImageDraw, is_open: bool) -> None:
    draw.rectangle([(SHAFT_END, _MID - 6), (36, _MID + 6)], fill=255)
    if is_open:
        draw.polygon([(SHAFT_END + 2, _MID), (37, _MID - 2), (37, _MID + 2)], fill=0)


def _scissors(draw: ImageDraw.ImageDraw, is_open: bool) -> None:
    spread = 25 if is_open else 8
    draw.chord([(16, _MID - 14), (46, _MID + 10)], 300 + spread, 360 + spread, fill=255)
    draw.chord([(16, _MID - 10), (46, _MID + 14)], 0 - spread, 60 - spread, fill=255)


def _ultrasound(draw: ImageDraw.ImageDraw, is_open: bool) -> None:
    half = 10 if is_open else 8
    draw.rounded_rectangle([(SHAFT_END, _MID - half), (46, _MID + half)], radius=4, fill=255)


def _vessel_sealer(draw: ImageDraw.ImageDraw, is_open: bool) -> None:
    draw.ellipse([(24, _MID - 6), (47, _MID + 6)], fill=255)
    if is_open:
        draw.line([(30, _MID), (47, _MID)], fill=0, width=2)


def _retractor(draw: ImageDraw.ImageDraw, is_open: bool) -> None:
    for angle in ((-22, 0, 22) if is_open else (-9, 0, 9)):
        rad = np.deg2rad(angle)
        end = (SHAFT_END + 18 * np.cos(rad), _MID + 18 * np.sin(rad))
        draw.line([(SHAFT_END, _MID), end], fill=255, width=3)


def _suction(draw: ImageDraw.ImageDraw, is_open: bool) -> None:
    tip = 42 if is_open else 40
    draw.line([(SHAFT_END, _MID), (tip, _MID)], fill=255, width=4)
    draw.ellipse([(tip - 3, _MID - 3), (tip + 3, _MID + 3)], fill=255)


def _clip_applier(draw: ImageDraw.ImageDraw, is_open: bool) -> None:
    half = 7 if is_open else 4
    draw.line([(30, _MID - half), (30, _MID + half)], fill=255, width=3)
    for sign in (-1, 1):
        draw.line([(30, _MID + sign * half), (45, _MID + sign * half)], fill=255, width=3)


HEAD_DRAWERS: tuple[HeadDrawer, ...] = (
    _bipolar,
    _prograsp,
    _needle_driver,
    _scissors,
    _ultrasound,
    _vessel_sealer,
    _retractor,
    _suction,
    _clip_applier,
)


def draw_instrument(class_id: int, pose: Pose, rng: np.random.Generator) -> ForegroundAsset:
    """Draw one instrument: shared shaft, class-specific head, tinted shading."""
    design = (class_id - 1) % len(HEAD_DRAWERS)
    silhouette = Image.new("L", (ASSET_SIZE, ASSET_SIZE), 0)
    draw = ImageDraw.Draw(silhouette)
    draw.line([(0, _MID), (SHAFT_END, _MID)], fill=255, width=4)
    HEAD_DRAWERS[design](draw, pose == Pose.OPEN)

    tint = np.array(_TINTS[design]) + rng.uniform(-0.03, 0.03, size=3)
    shade = np.linspace(0.8, 1.05, ASSET_SIZE)[None, :, None]
    grain = rng.normal(0.0, 0.02, size=(ASSET_SIZE, ASSET_SIZE, 1))
    rgb = np.clip(tint[None, None, :] * shade + grain, 0.0, 1.0)
    rgba = np.dstack([np.round(rgb * 255.0), np.asarray(silhouette, dtype=np.float64)])
    return ForegroundAsset(class_id, rgba.astype(np.uint8), pose)


def gen_toy_assets(seed: int, class_ids: Iterable[int] = tuple(c for c in CLASS_NAMES if c)) -> AssetBank:
    """Procedurally draw two poses of every instrument class."""
    bank: AssetBank = {}
    for class_id in class_ids:
        for pose in (Pose.OPEN, Pose.CLOSED):
            rng = np.random.default_rng([seed, class_id, list(Pose).index(pose)])
            bank[(class_id, pose)] = draw_instrument(class_id, pose, rng)
    _logger.debug("Drew %d instrument assets", len(bank))
    return bank


def save_asset_bank(bank: AssetBank, directory: Union[str, Path]) -> None:
    """Write the bank as ``<classid>_<pose>.png`` RGBA files."""
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    for asset in bank.values():
        Image.fromarray(np.asarray(asset.rgba)).save(path / asset.file_name)


def load_asset_bank(directory: Union[str, Path], class_ids: Iterable[int]) -> AssetBank:
    """Read a bank written by :func:`save_asset_bank`, requiring both poses per class."""
    path = Path(directory)
    bank: AssetBank = {}
    for class_id in class_ids:
        for pose in (Pose.OPEN, Pose.CLOSED):
            file = path / f"{class_id}_{pose}.png"
            if not file.is_file():
                raise MissingInputError(f"Asset bank lacks {file.name}")
            with Image.open(file) as im:
                bank[(class_id, pose)] = ForegroundAsset(class_id, np.asarray(im.convert("RGBA")), pose)
    return bank
