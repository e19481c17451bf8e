"""Synthetic surgical scenes: instrument assets, tissue backgrounds, blending."""

from catsd.synth.assets import AssetBank, BackgroundAsset, ForegroundAsset, gen_toy_assets, load_asset_bank, save_asset_bank
from catsd.synth.augment import AugmentationSpec, TransformParams, apply_transform, augment, sample_transform
from catsd.synth.blend import Placement, SegSample, blend, harmonize
from catsd.synth.dataset import SuiteConfig, SynthConfig, synth_dataset, synth_dataset_async, synth_suite_async
from catsd.synth.io import load_dataset, load_endovis_stub, load_sample
from catsd.synth.texture import gen_background

__all__ = [
    "AssetBank",
    "AugmentationSpec",
    "BackgroundAsset",
    "ForegroundAsset",
    "Placement",
    "SegSample",
    "SuiteConfig",
    "SynthConfig",
    "TransformParams",
    "apply_transform",
    "augment",
    "blend",
    "gen_background",
    "gen_toy_assets",
    "harmonize",
    "load_asset_bank",
    "load_dataset",
    "load_endovis_stub",
    "load_sample",
    "sample_transform",
    "save_asset_bank",
    "synth_dataset",
    "synth_dataset_async",
    "synth_suite_async",
]
