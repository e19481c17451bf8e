"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable, Sequence

import numpy as np

from catsd.exceptions import GradientError
from catsd.tensor.core import GradTape, Tensor

_logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# Below this magnitude the absolute difference is used instead of the relative one
_ABSOLUTE_FLOOR = 1e-8

LossFn = Callable[[Sequence[Tensor]], Tensor]


@dataclass
class GradCheckReport:
    """Outcome of a gradient check."""

    max_rel_error: float
    passed: bool
    worst_input: int = -1
    per_input: list[float] = field(default_factory=list)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.where(scale < _ABSOLUTE_FLOOR, diff, diff / np.where(scale > 0, scale, 1.0))


def grad_check(
    loss_fn: LossFn,
    inputs: Sequence[np.ndarray],
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn`` against central differences.

    ``loss_fn`` receives one tensor per entry of ``inputs`` and must return a
    one-element tensor.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with GradTape() as tape:
        loss = loss_fn(leaves)
    tape.backward(loss)

    def _evaluate(values: list[np.ndarray]) -> float:
        return loss_fn([Tensor(v) for v in values]).item()

    per_input: list[float] = []
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
        numeric = np.zeros(leaf.shape)
        trial = [a.copy() for a in arrays]
        flat = trial[i].reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + step
            plus = _evaluate(trial)
            flat[j] = original - step
            minus = _evaluate(trial)
            flat[j] = original
            numeric.reshape(-1)[j] = (plus - minus) / (2.0 * step)
        err = relative_error(analytic, numeric)
        per_input.append(float(err.max()) if err.size else 0.0)

    if not per_input:
        raise GradientError("grad_check needs at least one input")
    worst = int(np.argmax(per_input))
    report = GradCheckReport(
        max_rel_error=per_input[worst],
        passed=per_input[worst] <= tol,
        worst_input=worst,
        per_input=per_input,
    )
    _logger.debug("Gradient check: max relative error %.3e", report.max_rel_error)
    return report
