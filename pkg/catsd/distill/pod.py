"""Pooled-output embeddings of feature maps and the losses built on them.

A feature map ``(..., c, h, w)`` is cut into rectangular sub-regions. Each
sub-region contributes its width-pooled slice (mean over width, ``c * dh``
values) followed by its height-pooled slice (mean over height, ``c * dw``
values); sub-regions are visited in row-major order. Leading batch axes are
kept, so a batch of maps yields a batch of embedding vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Sequence, Union

import numpy as np

from catsd.const import POD_SCALES, SHIFT_EPSILON
from catsd.exceptions import ShapeError
from catsd.tensor import Tensor, as_tensor
from catsd.tensor import ops

_logger = logging.getLogger(__name__)

FeatureLike = Union[Tensor, np.ndarray]


@dataclass(frozen=True)
class ShiftSpec:
    """Fractions at which the shifted grid cuts each spatial axis."""

    epsilons: tuple[float, ...] = SHIFT_EPSILON

    def __post_init__(self) -> None:
        eps = tuple(float(e) for e in self.epsilons)
        object.__setattr__(self, "epsilons", eps)
        if len(eps) < 2 or eps[0] != 0.0 or eps[-1] != 1.0:
            raise ShapeError(f"Shift fractions must start at 0 and end at 1, got {eps}")
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise ShapeError(f"Shift fractions must be strictly increasing, got {eps}")

    @classmethod
    def for_scale(cls, k: int) -> ShiftSpec:
        """Cuts of a ``k`` x ``k`` grid with its interior cells merged into one."""
        if k < 2:
            raise ShapeError(f"Shift scale must be at least 2, got {k}")
        return cls(tuple(sorted({0.0, 1.0 / k, 1.0 - 1.0 / k, 1.0})))

    @property
    def n(self) -> int:
        return len(self.epsilons)

    def boundaries(self, extent: int) -> list[int]:
        """Integer cut positions along an axis of length ``extent``."""
        cuts = []
        for e in self.epsilons:
            pos = e * extent
            if abs(pos - round(pos)) > 1e-9:
                raise ShapeError(f"Shift fraction {e} does not cut an extent of {extent} on a pixel")
            cuts.append(int(round(pos)))
        return cuts


ShiftLike = Union[ShiftSpec, Sequence[ShiftSpec], None]


def shift_specs(shift: ShiftLike) -> tuple[ShiftSpec, ...]:
    """Normalize one spec, several specs or ``None`` (no shifted block) to a tuple."""
    if shift is None:
        return ()
    if isinstance(shift, ShiftSpec):
        return (shift,)
    return tuple(shift)


@dataclass(frozen=True)
class Provenance:
    scales: tuple[int, ...]
    shifts: tuple[tuple[float, ...], ...]
    source_shape: tuple[int, ...]


@dataclass
class PodEmbedding:
    """Embedding vector (last axis) plus how it was produced."""

    vector: Tensor
    provenance: Provenance

    def __len__(self) -> int:
        return self.vector.shape[-1]


def _check_map(x: Tensor) -> None:
    if x.ndim < 3:
        raise ShapeError(f"Feature maps need (c, h, w) axes, got {x.shape}")


def _region_slices(x: Tensor, rows: list[int], cols: list[int]) -> list[Tensor]:
    lead = x.shape[:-3]
    parts: list[Tensor] = []
    for r0, r1 in zip(rows, rows[1:]):
        for c0, c1 in zip(cols, cols[1:]):
            region = ops.getitem(x, (Ellipsis, slice(r0, r1), slice(c0, c1)))
            parts.append(ops.reshape(ops.mean(region, axis=-1), lead + (-1,)))
            parts.append(ops.reshape(ops.mean(region, axis=-2), lead + (-1,)))
    return parts


def _scale_slices(x: Tensor, s: int) -> list[Tensor]:
    h, w = x.shape[-2:]
    if s < 1 or h % s or w % s:
        raise ShapeError(f"Scale {s} does not divide feature extents {h}x{w}")
    return _region_slices(x, list(range(0, h + 1, h // s)), list(range(0, w + 1, w // s)))


def pod_embedding(x: FeatureLike, s: int) -> PodEmbedding:
    """Embedding over an ``s`` x ``s`` grid of equal sub-regions."""
    t = as_tensor(x)
    _check_map(t)
    vector = ops.concat(_scale_slices(t, s), axis=-1)
    return PodEmbedding(vector, Provenance((s,), (), t.shape))


def multiscale_embedding(x: FeatureLike, scales: Sequence[int] = POD_SCALES) -> PodEmbedding:
    """Concatenation of :func:`pod_embedding` for each scale, in order."""
    t = as_tensor(x)
    _check_map(t)
    if not scales:
        raise ShapeError("At least one scale is required")
    parts = [p for s in scales for p in _scale_slices(t, s)]
    return PodEmbedding(ops.concat(parts, axis=-1), Provenance(tuple(scales), (), t.shape))


def shifted_embedding(x: FeatureLike, spec: ShiftSpec = ShiftSpec()) -> PodEmbedding:
    """Embedding over the irregular grid cut at the ShiftSpec fractions of each axis."""
    t = as_tensor(x)
    _check_map(t)
    h, w = t.shape[-2:]
    parts = _region_slices(t, spec.boundaries(h), spec.boundaries(w))
    return PodEmbedding(ops.concat(parts, axis=-1), Provenance((), (spec.epsilons,), t.shape))


def msshift_embedding(x: FeatureLike, scales: Sequence[int] = POD_SCALES, shift: ShiftLike = ShiftSpec()) -> PodEmbedding:
    """Multi-scale embedding followed by one shifted embedding per shift spec.

    ``shift=None`` (or an empty sequence) leaves out the shifted blocks.
    """
    t = as_tensor(x)
    _check_map(t)
    specs = shift_specs(shift)
    if not scales and not specs:
        raise ShapeError("Need at least one pooling scale or shift spec")
    blocks = [multiscale_embedding(t, scales).vector] if scales else []
    blocks += [shifted_embedding(t, spec).vector for spec in specs]
    vector = blocks[0] if len(blocks) == 1 else ops.concat(blocks, axis=-1)
    return PodEmbedding(vector, Provenance(tuple(scales), tuple(s.epsilons for s in specs), t.shape))


def embedding_length(c: int, h: int, w: int, scales: Sequence[int], shift: ShiftLike = None) -> int:
    """Closed-form embedding length for a ``(c, h, w)`` map."""
    length = sum(s * c * (h + w) for s in scales)
    for spec in shift_specs(shift):
        length += (spec.n - 1) * c * (h + w)
    return length


def _batch_mean_norm(diff: Tensor) -> Tensor:
    """Norm of each embedding vector, averaged over any batch axes."""
    norms = ops.l2_norm(diff, axis=-1)
    return norms if norms.ndim == 0 else ops.mean(norms)


def local_pod_loss(
    features_old: Sequence[FeatureLike],
    features_new: Sequence[FeatureLike],
    scales: Sequence[int] = POD_SCALES,
) -> Tensor:
    """Mean over layers of the multi-scale embedding distance."""
    if len(features_old) != len(features_new) or not features_old:
        raise ShapeError(
            f"Need equally long non-empty layer lists, got {len(features_old)} and {len(features_new)}"
        )
    terms: list[Tensor] = []
    for old, new in zip(features_old, features_new):
        a, b = as_tensor(old), as_tensor(new)
        if a.shape != b.shape:
            raise ShapeError(f"Layer shapes differ: {a.shape} vs {b.shape}")
        diff = ops.sub(multiscale_embedding(b, scales).vector, multiscale_embedding(a, scales).vector)
        terms.append(_batch_mean_norm(diff))
    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)
    return ops.scalar_mul(total, 1.0 / len(terms))


def pod_loss(features_old: Sequence[FeatureLike], features_new: Sequence[FeatureLike]) -> Tensor:
    """Single-scale (whole map) pooled distillation over every layer."""
    return local_pod_loss(features_old, features_new, scales=(1,))


def sd_loss(
    f_old: FeatureLike,
    f_new: FeatureLike,
    scales: Sequence[int] = POD_SCALES,
    shift: ShiftLike = ShiftSpec(),
) -> Tensor:
    """Distance between multi-scale + shifted embeddings of the encoder output."""
    a, b = as_tensor(f_old), as_tensor(f_new)
    if a.shape != b.shape:
        raise ShapeError(f"Feature shapes differ: {a.shape} vs {b.shape}")
    diff = ops.sub(msshift_embedding(b, scales, shift).vector, msshift_embedding(a, scales, shift).vector)
    return _batch_mean_norm(diff)
