"""Toy encoder/classifier segmentation network."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from catsd.codec import WeightsDecoder, WeightsEncoder
from catsd.const import BACKGROUND_ID, WEIGHTS_VERSION
from catsd.exceptions import (
    DomainError,
    GradientError,
    InvalidWeightsFile,
    MissingInputError,
    ModelError,
    ShapeError,
    TaxonomyError,
)
from catsd.tensor import Tensor, as_tensor
from catsd.tensor import ops

_logger = logging.getLogger(__name__)

ENCODER_CHANNELS = (3, 16, 32, 64)
KERNEL_SIZE = 3
POOL_WINDOW = 2
DOWNSAMPLE = POOL_WINDOW ** (len(ENCODER_CHANNELS) - 1)

PARAM_NAMES = tuple(
    [f"encoder.{i}.{kind}" for i in range(len(ENCODER_CHANNELS) - 1) for kind in ("kernel", "bias")]
    + ["classifier.kernel", "classifier.bias"]
)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ModelWeights:
    """Every parameter of the network plus the ordered ids its classifier predicts."""

    params: Mapping[str, np.ndarray]
    class_list: tuple[int, ...]
    version: str = WEIGHTS_VERSION

    def __post_init__(self) -> None:
        missing = [n for n in PARAM_NAMES if n not in self.params]
        if missing:
            raise ModelError(f"Missing parameters {missing}")
        if not self.class_list or self.class_list[0] != BACKGROUND_ID:
            raise ModelError("Background class 0 must be first in the class list")
        if len(set(self.class_list)) != len(self.class_list):
            raise ModelError(f"Duplicate ids in class list {self.class_list}")
        rows = self.params["classifier.kernel"].shape[0]
        if rows != len(self.class_list) or self.params["classifier.bias"].shape != (rows,):
            raise ModelError(
                f"Classifier has {rows} output channels for {len(self.class_list)} classes"
            )
        object.__setattr__(
            self, "params", {n: _frozen(self.params[n]) for n in PARAM_NAMES}
        )

    @property
    def n_classes(self) -> int:
        return len(self.class_list)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        """Wrap every parameter as a tensor, optionally tracked for training."""
        return {n: Tensor(a, requires_grad=requires_grad, name=n) for n, a in self.params.items()}

    def equals(self, other: ModelWeights) -> bool:
        """Bit-exact comparison of class lists and every parameter."""
        return self.class_list == other.class_list and all(
            np.array_equal(self.params[n], other.params[n]) for n in PARAM_NAMES
        )


@dataclass
class ForwardResult:
    """Outputs of one forward pass.

    ``features`` is the encoder output used for shifted-feature distillation;
    ``block_outputs`` holds every encoder block output (the last equals
    ``features``) for layer-wise pooled distillation.
    """

    features: Tensor
    logits: Tensor
    block_outputs: list[Tensor] = field(default_factory=list)


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_weights(seed: int, n_classes: int, class_list: Optional[Sequence[int]] = None) -> ModelWeights:
    """Initialize the network with He-normal kernels and zero biases.

    ``class_list`` defaults to ``0..n_classes-1``.
    """
    if n_classes < 2:
        raise ModelError(f"A segmentation model needs at least 2 classes, got {n_classes}")
    classes = tuple(range(n_classes)) if class_list is None else tuple(int(c) for c in class_list)
    if len(classes) != n_classes:
        raise ModelError(f"class_list has {len(classes)} ids for {n_classes} classes")

    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for i, (c_in, c_out) in enumerate(zip(ENCODER_CHANNELS, ENCODER_CHANNELS[1:])):
        params[f"encoder.{i}.kernel"] = _he_normal(rng, (c_out, c_in, KERNEL_SIZE, KERNEL_SIZE))
        params[f"encoder.{i}.bias"] = np.zeros(c_out)
    params["classifier.kernel"] = _he_normal(rng, (n_classes, ENCODER_CHANNELS[-1], 1, 1))
    params["classifier.bias"] = np.zeros(n_classes)
    _logger.debug("Initialized %d-class model from seed %d", n_classes, seed)
    return ModelWeights(params=params, class_list=classes)


def forward(
    weights: ModelWeights,
    image: Union[Tensor, np.ndarray],
    params: Optional[Mapping[str, Tensor]] = None,
) -> ForwardResult:
    """Run the network on a ``(3, h, w)`` image or a ``(n, 3, h, w)`` batch.

    Pass ``params`` (from :meth:`ModelWeights.tensors`) to differentiate with
    respect to the parameters; otherwise the stored weights are used as constants.
    """
    x = as_tensor(image)
    if x.ndim not in (3, 4) or x.shape[-3] != ENCODER_CHANNELS[0]:
        raise ShapeError(f"Expected a (3, h, w) image or (n, 3, h, w) batch, got {x.shape}")
    h, w = x.shape[-2:]
    if h % DOWNSAMPLE or w % DOWNSAMPLE:
        raise ShapeError(f"Image extents {h}x{w} must be divisible by {DOWNSAMPLE}")
    if x.data.min() < 0.0 or x.data.max() > 1.0:
        raise DomainError("Pixel values must lie in [0, 1]")

    p = params if params is not None else weights.tensors()
    blocks: list[Tensor] = []
    for i in range(len(ENCODER_CHANNELS) - 1):
        x = ops.conv2d(x, p[f"encoder.{i}.kernel"], p[f"encoder.{i}.bias"], padding=KERNEL_SIZE // 2)
        x = ops.pool2d(ops.relu(x), POOL_WINDOW, "mean")
        blocks.append(x)

    scores = ops.conv2d(x, p["classifier.kernel"], p["classifier.bias"])
    logits = ops.upsample_bilinear(scores, DOWNSAMPLE)
    return ForwardResult(features=x, logits=logits, block_outputs=blocks)


def predict(weights: ModelWeights, image: Union[Tensor, np.ndarray]) -> np.ndarray:
    """Per-pixel class ids (not channel indices) of the arg-max logit."""
    logits = forward(weights, image).logits.data
    return np.asarray(weights.class_list)[logits.argmax(axis=-3)]


def expand_classifier(old: ModelWeights, new_class_ids: Sequence[int], seed: int) -> ModelWeights:
    """Append classifier rows for ``new_class_ids``; everything else is copied bit-exact."""
    new_ids = tuple(int(c) for c in new_class_ids)
    if len(set(new_ids)) != len(new_ids):
        raise TaxonomyError(f"Duplicate ids in new classes {new_ids}")
    clash = sorted(set(new_ids) & set(old.class_list))
    if clash:
        raise TaxonomyError(f"Classes {clash} are already predicted by the model")
    if not new_ids:
        return old

    rng = np.random.default_rng(seed)
    kernel = old.params["classifier.kernel"]
    rows = _he_normal(rng, (len(new_ids),) + kernel.shape[1:])
    params = dict(old.params)
    params["classifier.kernel"] = np.concatenate([kernel, rows], axis=0)
    params["classifier.bias"] = np.concatenate([old.params["classifier.bias"], np.zeros(len(new_ids))])
    _logger.debug("Expanded classifier from %d to %d classes", old.n_classes, old.n_classes + len(new_ids))
    return ModelWeights(params=params, class_list=old.class_list + new_ids, version=old.version)


def sgd_step(weights: ModelWeights, grads: Mapping[str, Optional[np.ndarray]], lr: float) -> ModelWeights:
    """Plain gradient descent: ``w - lr * g`` for every parameter."""
    if lr < 0:
        raise DomainError(f"Learning rate must not be negative, got {lr}")
    params: dict[str, np.ndarray] = {}
    for name in PARAM_NAMES:
        g = grads.get(name)
        if g is None:
            raise GradientError(f"No gradient for parameter {name}")
        if g.shape != weights.params[name].shape:
            raise GradientError(f"Gradient for {name} has shape {g.shape}")
        params[name] = weights.params[name] - lr * g
    return ModelWeights(params=params, class_list=weights.class_list, version=weights.version)


def weights_to_bytes(weights: ModelWeights) -> bytes:
    return WeightsEncoder().encode(
        list(weights.class_list), ((n, weights.params[n]) for n in PARAM_NAMES)
    )


def weights_from_bytes(payload: bytes) -> ModelWeights:
    header, arrays = WeightsDecoder(payload).decode()
    try:
        return ModelWeights(
            params=arrays,
            class_list=tuple(int(c) for c in header["class_list"]),
            version=header["version"],
        )
    except (KeyError, ModelError) as err:
        raise InvalidWeightsFile(f"Inconsistent weights file: {err}", payload) from err


def save_weights(weights: ModelWeights, path: Union[str, Path]) -> None:
    """Write ``weights`` to ``path`` in the binary weights format."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(weights_to_bytes(weights))
    _logger.info("Wrote %d-class weights to %s", weights.n_classes, path)


def load_weights(path: Union[str, Path]) -> ModelWeights:
    """Read weights previously written by :func:`save_weights`."""
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"Weights file {p} does not exist")
    try:
        return weights_from_bytes(p.read_bytes())
    except InvalidWeightsFile as err:
        _logger.warning("Rejected weights file %s: %s", p, err.message)
        raise
