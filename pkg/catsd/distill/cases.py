"""Registry of seeded gradient-check instances for every exported loss."""

from __future__ import annotations

from dataclasses import dataclass
import logging
import time
from typing import Callable, Optional, Sequence

import numpy as np

from catsd.const import Method
from catsd.distill.losses import cat_loss, feature_l2_loss, kd_logits_loss, temperature_kd_loss
from catsd.distill.objective import total_loss
from catsd.distill.pod import ShiftSpec, local_pod_loss, sd_loss
from catsd.distill.temperature import TemperatureVector
from catsd.tensor import Tensor, custom_op, grad_check
from catsd.tensor import ops
from catsd.tensor.gradcheck import DEFAULT_STEP, DEFAULT_TOLERANCE

_logger = logging.getLogger(__name__)

LossFn = Callable[[Sequence[Tensor]], Tensor]
CaseFactory = Callable[[np.random.Generator], tuple[LossFn, list[np.ndarray]]]

_CASES: dict[str, CaseFactory] = {}


def register_case(name: str, factory: CaseFactory) -> None:
    """Add (or replace) a gradient-check case."""
    _CASES[name] = factory


def unregister_case(name: str) -> None:
    _CASES.pop(name, None)


def registered_cases() -> list[str]:
    return list(_CASES)


def _kd_case(rng: np.random.Generator) -> tuple[LossFn, list[np.ndarray]]:
    teacher, student = rng.normal(size=(3, 2, 2)), rng.normal(size=(4, 2, 2))
    return (lambda t: kd_logits_loss(t[0], t[1])), [teacher, student]


def _temperature_kd_case(rng: np.random.Generator) -> tuple[LossFn, list[np.ndarray]]:
    teacher, student = rng.normal(size=(3, 2, 2)), rng.normal(size=(4, 2, 2))
    temperature = float(rng.uniform(0.5, 5.0))
    return (lambda t: temperature_kd_loss(t[0], t[1], temperature)), [teacher, student]


def _cat_case(rng: np.random.Generator) -> tuple[LossFn, list[np.ndarray]]:
    teacher, student = rng.normal(size=(3, 2, 2)), rng.normal(size=(4, 2, 2))
    tvec = TemperatureVector((0, 1, 2), (4.0, 4.0, 3.0))
    return (lambda t: cat_loss(t[0], t[1], tvec)), [teacher, student]


def _feature_l2_case(rng: np.random.Generator) -> tuple[LossFn, list[np.ndarray]]:
    return (lambda t: feature_l2_loss(t[0], t[1])), [rng.normal(size=(2, 2, 2)), rng.normal(size=(2, 2, 2))]


def _local_pod_case(rng: np.random.Generator) -> tuple[LossFn, list[np.ndarray]]:
    shapes = [(1, 4, 4), (2, 2, 2)]
    inputs = [rng.normal(size=s) for s in shapes for _ in range(2)]
    return (lambda t: local_pod_loss([t[0], t[2]], [t[1], t[3]], scales=(1, 2))), inputs


def _sd_case(rng: np.random.Generator) -> tuple[LossFn, list[np.ndarray]]:
    spec = ShiftSpec()
    return (lambda t: sd_loss(t[0], t[1], (2, 4), spec)), [rng.normal(size=(1, 4, 4)), rng.normal(size=(1, 4, 4))]


def _objective_case(rng: np.random.Generator) -> tuple[LossFn, list[np.ndarray]]:
    labels = rng.integers(0, 4, size=(2, 2))
    tvec = TemperatureVector((0, 1, 2), (4.0, 4.0, 3.0))
    spec = ShiftSpec()

    def loss(t: Sequence[Tensor]) -> Tensor:
        teacher, student, f_old, f_new = t
        ce = ops.cross_entropy(student, labels)
        parts = {"cat": cat_loss(teacher, student, tvec), "sd": sd_loss(f_old, f_new, (2, 4), spec)}
        return total_loss(Method.CATSD, ce, parts)

    inputs = [
        rng.normal(size=(3, 2, 2)),
        rng.normal(size=(4, 2, 2)),
        rng.normal(size=(1, 4, 4)),
        rng.normal(size=(1, 4, 4)),
    ]
    return loss, inputs


def faulty_case(rng: np.random.Generator) -> tuple[LossFn, list[np.ndarray]]:
    """Sum of squares whose backward is off by a factor of two."""

    def loss(t: Sequence[Tensor]) -> Tensor:
        x = t[0]
        sq = custom_op("wrong-square", x.data * x.data, (x,), lambda g: (g * 4.0 * x.data,))
        return ops.sum_(sq)

    return loss, [rng.normal(size=(3,))]


for _name, _factory in (
    ("kd_logits_loss", _kd_case),
    ("temperature_kd_loss", _temperature_kd_case),
    ("cat_loss", _cat_case),
    ("feature_l2_loss", _feature_l2_case),
    ("local_pod_loss", _local_pod_case),
    ("sd_loss", _sd_case),
    ("total_loss", _objective_case),
):
    register_case(_name, _factory)


@dataclass
class CaseResult:
    """Aggregate of a case over all its seeded instances."""

    name: str
    instances: int
    max_rel_error: float
    passed: bool
    seconds: float


def run_case(
    name: str,
    instances: int = 100,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOLERANCE,
) -> CaseResult:
    factory = _CASES[name]
    start = time.perf_counter()
    worst = 0.0
    for i in range(instances):
        loss_fn, inputs = factory(np.random.default_rng([seed, i]))
        report = grad_check(loss_fn, inputs, step=step, tol=tol)
        worst = max(worst, report.max_rel_error)
    result = CaseResult(name, instances, worst, worst <= tol, time.perf_counter() - start)
    _logger.info("%s: max relative error %.3e over %d instances", name, worst, instances)
    return result


def run_all(
    instances: int = 100,
    seed: int = 0,
    names: Optional[Sequence[str]] = None,
    tol: float = DEFAULT_TOLERANCE,
) -> list[CaseResult]:
    """Check every registered case (or the named subset)."""
    return [run_case(n, instances, seed, tol=tol) for n in (names or registered_cases())]
