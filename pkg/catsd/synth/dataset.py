"""Class-balanced synthetic dataset assembly."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass
import logging
import os
from pathlib import Path
from typing import Optional, Sequence, Union

from crccheck.crc import Crc32
import numpy as np
from PIL import Image

try:
    from pydantic.v1 import validator
except ImportError:
    from pydantic import validator  # type: ignore[no-redef]

from catsd.const import (
    ENV_THREADS,
    IMAGE_SIZE,
    MAX_INSTRUMENTS_PER_IMAGE,
    N_BACKGROUND_VARIATIONS,
    N_FOREGROUND_VARIATIONS,
    Origin,
    Pose,
    Split,
)
from catsd.exceptions import BalanceError, MissingInputError, SynthesisError
from catsd.model import CatsdBaseModel
from catsd.model.manifest import DatasetManifest, SampleRecord
from catsd.model.taxonomy import ClassTaxonomy
from catsd.synth.assets import AssetBank, BackgroundAsset, ForegroundAsset, gen_toy_assets
from catsd.synth.augment import AugmentationSpec, augment
from catsd.synth.blend import Placement, blend, harmonize
from catsd.synth.texture import gen_background

_logger = logging.getLogger(__name__)

# Augmented silhouettes smaller than this are redrawn
_MIN_SILHOUETTE = 16
_REDRAW_LIMIT = 20


def substream(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """Independent generator for a (seed, keys...) path; strings are hashed stably."""
    entropy = [seed] + [k if isinstance(k, int) else Crc32.calc(k.encode("utf-8")) for k in keys]
    return np.random.default_rng(entropy)


def worker_limit(requested: Optional[int] = None) -> int:
    """Concurrency cap: explicit request, else the environment, else the CPU count."""
    if requested:
        return max(1, requested)
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            _logger.warning("Ignoring non-integer %s=%r", ENV_THREADS, env)
    return os.cpu_count() or 1


class SynthConfig(CatsdBaseModel):
    """Settings of one generated dataset split."""

    seed: int = 0
    split: str = Split.T0_TRAIN
    source: str = ""
    taxonomy: ClassTaxonomy = ClassTaxonomy()
    targets: dict[int, int]
    image_size: int = IMAGE_SIZE
    n_background_variations: int = N_BACKGROUND_VARIATIONS
    n_foreground_variations: int = N_FOREGROUND_VARIATIONS
    max_instruments: int = MAX_INSTRUMENTS_PER_IMAGE
    harmonize_strength: float = 0.6
    augmentation: AugmentationSpec = AugmentationSpec()
    # Class groups composited onto procedural-synthetic backgrounds only
    procedural_groups: tuple[str, ...] = ("old",)
    pseudo_exemplars: bool = False

    class Config:  # noqa: D106
        extra = "forbid"

    @validator("procedural_groups")
    def _old_is_private(cls, v: tuple[str, ...]) -> tuple[str, ...]:  # noqa: N805
        if "old" not in v:
            raise ValueError("old classes may only be composited onto procedural backgrounds")
        return v

    @validator("max_instruments")
    def _cap(cls, v: int) -> int:  # noqa: N805
        if not 1 <= v <= MAX_INSTRUMENTS_PER_IMAGE:
            raise ValueError(f"max_instruments must lie in [1, {MAX_INSTRUMENTS_PER_IMAGE}]")
        return v


@dataclass
class VariationPools:
    """Augmented backgrounds per origin and augmented foregrounds per class."""

    backgrounds: dict[Origin, list[BackgroundAsset]]
    foregrounds: dict[int, list[ForegroundAsset]]


def _foreground_variant(asset: ForegroundAsset, spec: AugmentationSpec, rng: np.random.Generator) -> ForegroundAsset:
    for _ in range(_REDRAW_LIMIT):
        variant = ForegroundAsset(asset.class_id, augment(asset.rgba, spec, rng), asset.pose)
        if variant.alpha.sum() >= _MIN_SILHOUETTE:
            return variant
    return asset


def build_pools(config: SynthConfig, bank: AssetBank, class_ids: Sequence[int]) -> VariationPools:
    """Background and foreground variation pools; independent of the split."""
    size = config.image_size
    real = gen_background("real-standin", config.seed, size)
    bg_spec = AugmentationSpec.for_backgrounds(seed=config.seed)
    backgrounds: dict[Origin, list[BackgroundAsset]] = {
        Origin.OPEN_SOURCE_REAL: [
            BackgroundAsset(augment(real.image, bg_spec, substream(config.seed, "real-bg", i)), real.origin)
            for i in range(config.n_background_variations)
        ],
        Origin.PROCEDURAL_SYNTHETIC: [
            gen_background("procedural", int(substream(config.seed, "procedural-bg", i).integers(2**31)), size)
            for i in range(config.n_background_variations)
        ],
    }

    foregrounds: dict[int, list[ForegroundAsset]] = {}
    poses = (Pose.OPEN, Pose.CLOSED)
    for class_id in class_ids:
        if any((class_id, pose) not in bank for pose in poses):
            raise MissingInputError(f"Asset bank lacks both poses of class {class_id}")
        foregrounds[class_id] = [
            _foreground_variant(bank[(class_id, poses[v % 2])], config.augmentation, substream(config.seed, "fg", class_id, v))
            for v in range(config.n_foreground_variations)
        ]
    return VariationPools(backgrounds, foregrounds)


def plan_images(config: SynthConfig) -> list[tuple[Origin, list[int]]]:
    """Group class tokens into images of 1..max_instruments instruments each.

    Every class contributes exactly its target number of tokens; tokens of
    procedural groups never share an image with tokens of the others.
    """
    routed: dict[Origin, list[int]] = {Origin.OPEN_SOURCE_REAL: [], Origin.PROCEDURAL_SYNTHETIC: []}
    for class_id in sorted(config.targets):
        count = config.targets[class_id]
        if count < 1:
            raise BalanceError(f"Target for class {class_id} must be at least 1, got {count}")
        group = config.taxonomy.group_of(class_id)
        if group == "background":
            raise BalanceError("Background cannot be given an instance target")
        origin = Origin.PROCEDURAL_SYNTHETIC if group in config.procedural_groups else Origin.OPEN_SOURCE_REAL
        routed[origin].extend([class_id] * count)

    rng = substream(config.seed, config.split, "plan")
    plan: list[tuple[Origin, list[int]]] = []
    for origin in (Origin.OPEN_SOURCE_REAL, Origin.PROCEDURAL_SYNTHETIC):
        tokens = routed[origin]
        order = rng.permutation(len(tokens))
        shuffled = [tokens[i] for i in order]
        i = 0
        while i < len(shuffled):
            k = int(rng.integers(1, config.max_instruments + 1))
            plan.append((origin, shuffled[i : i + k]))
            i += k
    return plan


def _placement(asset: ForegroundAsset, size: int, z: int, rng: np.random.Generator) -> Placement:
    """Uniform position keeping at least half of each bbox extent on the canvas."""
    bx0, by0, bx1, by1 = asset.bbox
    bw, bh = bx1 - bx0, by1 - by0
    left = int(rng.integers(-(bw // 2), size - (bw + 1) // 2 + 1))
    top = int(rng.integers(-(bh // 2), size - (bh + 1) // 2 + 1))
    return Placement(asset, (left - bx0, top - by0), z)


def compose_image(
    config: SynthConfig, pools: VariationPools, index: int, origin: Origin, tokens: Sequence[int]
) -> tuple[np.ndarray, np.ndarray, list]:
    """Render one planned image from its own sub-stream."""
    rng = substream(config.seed, config.split, index)
    backgrounds = pools.backgrounds[origin]
    if not backgrounds:
        raise BalanceError(f"No {origin} backgrounds available")
    background = backgrounds[int(rng.integers(len(backgrounds)))]
    z_order = rng.permutation(len(tokens))
    placements = []
    for class_id, z in zip(tokens, z_order):
        variants = pools.foregrounds[class_id]
        asset = variants[int(rng.integers(len(variants)))]
        placements.append(_placement(asset, config.image_size, int(z), rng))
    sample = blend(background, placements, config.max_instruments)
    if config.harmonize_strength > 0:
        sample = harmonize(sample, config.harmonize_strength)
    return sample.image, sample.mask, sample.instances


async def synth_dataset_async(
    config: SynthConfig,
    out_dir: Union[str, Path],
    bank: Optional[AssetBank] = None,
    threads: Optional[int] = None,
) -> DatasetManifest:
    """Generate, write and index one split; images are rendered concurrently."""
    root = Path(out_dir)
    class_ids = sorted(config.targets)
    config.taxonomy.check_ids(class_ids)
    bank = bank if bank is not None else gen_toy_assets(config.seed, class_ids)
    if config.n_background_variations < 1 or config.n_foreground_variations < 1:
        raise BalanceError("Variation pools must not be empty")

    pools = build_pools(config, bank, class_ids)
    plan = plan_images(config)
    (root / config.split / "images").mkdir(parents=True, exist_ok=True)
    (root / config.split / "masks").mkdir(parents=True, exist_ok=True)

    semaphore = asyncio.Semaphore(worker_limit(threads))

    def _render(index: int, origin: Origin, tokens: list[int]) -> SampleRecord:
        image, mask, instances = compose_image(config, pools, index, origin, tokens)
        image_rel = f"{config.split}/images/{index:05d}.png"
        mask_rel = f"{config.split}/masks/{index:05d}.png"
        Image.fromarray(image).save(root / image_rel)
        Image.fromarray(mask).save(root / mask_rel)
        return SampleRecord(image=image_rel, mask=mask_rel, instances=instances, split=config.split, source=config.source)

    async def _bounded(index: int, origin: Origin, tokens: list[int]) -> SampleRecord:
        async with semaphore:
            return await asyncio.to_thread(_render, index, origin, tokens)

    try:
        samples = list(await asyncio.gather(*(_bounded(i, o, t) for i, (o, t) in enumerate(plan))))
    except OSError as err:
        raise SynthesisError(f"Could not write dataset to {root}: {err}") from err

    totals = {c: 0 for c in class_ids}
    for sample in samples:
        for inst in sample.instances:
            totals[inst.class_id] += 1
    if totals != dict(config.targets):
        raise BalanceError(f"Generated totals {totals} differ from targets {dict(config.targets)}")

    manifest = DatasetManifest(
        seed=config.seed,
        taxonomy=config.taxonomy,
        samples=samples,
        class_totals=totals,
        split=config.split,
        n_background_variations=config.n_background_variations,
        n_foreground_variations=config.n_foreground_variations,
        pseudo_exemplars=config.pseudo_exemplars,
    ).with_root(root)
    manifest.write(root, f"{config.split}.json")
    _logger.info(
        "Generated %d images for %s with class totals %s", len(samples), config.split, totals
    )
    return manifest


def synth_dataset(
    config: SynthConfig,
    out_dir: Union[str, Path],
    bank: Optional[AssetBank] = None,
    threads: Optional[int] = None,
) -> DatasetManifest:
    """Blocking wrapper around :func:`synth_dataset_async`."""
    return asyncio.run(synth_dataset_async(config, out_dir, bank, threads))


class SuiteConfig(CatsdBaseModel):
    """Every split of a two time point experiment.

    Test and validation data mix a t=0 part (regular and old classes) and a
    t=1 part (regular and new classes), tagged by ``source``.
    """

    taxonomy: ClassTaxonomy = ClassTaxonomy()
    image_size: int = IMAGE_SIZE
    n_background_variations: int = N_BACKGROUND_VARIATIONS
    n_foreground_variations: int = N_FOREGROUND_VARIATIONS
    harmonize_strength: float = 0.6
    augmentation: AugmentationSpec = AugmentationSpec()
    train_target: int = 57
    exemplar_target: int = 20
    val_target: int = 0
    test_target: int = 20
    include_pseudo_exemplars: bool = True

    class Config:  # noqa: D106
        extra = "forbid"


def _split_config(suite: SuiteConfig, seed: int, split: str, source: str, classes: Sequence[int], target: int, **extra: object) -> SynthConfig:
    return SynthConfig(
        seed=seed,
        split=split,
        source=source,
        taxonomy=suite.taxonomy,
        targets={c: target for c in classes},
        image_size=suite.image_size,
        n_background_variations=suite.n_background_variations,
        n_foreground_variations=suite.n_foreground_variations,
        harmonize_strength=suite.harmonize_strength,
        augmentation=suite.augmentation,
        **extra,
    )


async def synth_suite_async(
    suite: SuiteConfig,
    seed: int,
    out_dir: Union[str, Path],
    bank: Optional[AssetBank] = None,
    threads: Optional[int] = None,
) -> dict[str, DatasetManifest]:
    """Generate the t=0/t=1 training splits, pseudo-exemplars, validation and test data."""
    tax = suite.taxonomy
    t0_classes = tax.regular + tax.old
    t1_classes = tax.regular + tax.new
    bank = bank if bank is not None else gen_toy_assets(seed, sorted(set(t0_classes + t1_classes)))

    manifests: dict[str, DatasetManifest] = {}

    async def run(config: SynthConfig) -> DatasetManifest:
        return await synth_dataset_async(config, out_dir, bank, threads)

    manifests[Split.T0_TRAIN] = await run(_split_config(suite, seed, Split.T0_TRAIN, "t0", t0_classes, suite.train_target))
    manifests[Split.T1_TRAIN] = await run(_split_config(suite, seed, Split.T1_TRAIN, "t1", t1_classes, suite.train_target))
    if suite.include_pseudo_exemplars and tax.old:
        manifests[Split.EXEMPLAR] = await run(
            _split_config(suite, seed, Split.EXEMPLAR, "t1", tax.old, suite.exemplar_target, pseudo_exemplars=True)
        )
    for split, target in ((Split.VAL, suite.val_target), (Split.TEST, suite.test_target)):
        if target < 1:
            continue
        part0 = await run(_split_config(suite, seed, f"{split}_t0", "t0", t0_classes, target))
        part1 = await run(_split_config(suite, seed, f"{split}_t1", "t1", t1_classes, target))
        merged = part0.merged(part1, split=split)
        merged.write(out_dir, f"{split}.json")
        manifests[split] = merged
    return manifests
