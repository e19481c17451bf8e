"""Composition of cross-entropy and distillation terms per method."""

from __future__ import annotations

from typing import Mapping, Optional

try:
    from pydantic.v1 import Field, validator
except ImportError:
    from pydantic import Field, validator  # type: ignore[no-redef]

from catsd.const import Method
from catsd.exceptions import MethodConfigError
from catsd.model import CatsdBaseModel
from catsd.tensor import Tensor
from catsd.tensor import ops


class LossWeights(CatsdBaseModel):
    """Weights of the distillation terms. Unit defaults throughout."""

    alpha: float = 1.0
    beta: float = 1.0
    lam: float = Field(1.0, alias="lambda")
    cat_weight: float = 1.0
    sd_weight: float = 1.0

    class Config:  # noqa: D106
        allow_population_by_field_name = True
        extra = "forbid"

    @validator("*")
    def _non_negative(cls, v: float) -> float:  # noqa: N805
        if v < 0:
            raise ValueError("loss weights must not be negative")
        return v


# Distillation parts each method needs, keyed as in ``parts`` of total_loss
REQUIRED_PARTS: Mapping[Method, tuple[str, ...]] = {
    Method.FT: (),
    Method.LWF: ("kd",),
    Method.TKD: ("tkd",),
    Method.ILT: ("kd", "feature_l2"),
    Method.LOCALPOD: ("local_pod",),
    Method.POD: ("pod",),
    Method.CATSD: ("cat", "sd"),
}


def total_loss(
    method: Method | str,
    ce: Tensor,
    parts: Optional[Mapping[str, Tensor]] = None,
    weights: Optional[LossWeights] = None,
) -> Tensor:
    """Add the method's weighted distillation terms to the cross-entropy ``ce``."""
    try:
        method = Method(method)
    except ValueError as err:
        raise MethodConfigError(f"Unknown method {method!r}") from err
    parts = parts or {}
    w = weights or LossWeights()
    missing = [p for p in REQUIRED_PARTS[method] if p not in parts]
    if missing:
        raise MethodConfigError(f"Method {method} needs loss parts {missing}")

    if method == Method.FT:
        return ce
    if method == Method.LWF:
        return ops.add(ce, ops.scalar_mul(parts["kd"], w.alpha))
    if method == Method.TKD:
        return ops.add(ce, ops.scalar_mul(parts["tkd"], w.alpha))
    if method == Method.ILT:
        inner = ops.add(parts["kd"], ops.scalar_mul(parts["feature_l2"], w.beta))
        return ops.add(ce, ops.scalar_mul(inner, w.alpha))
    if method == Method.LOCALPOD:
        return ops.add(ce, ops.scalar_mul(parts["local_pod"], w.lam))
    if method == Method.POD:
        return ops.add(ce, ops.scalar_mul(parts["pod"], w.lam))
    return ops.add(
        ops.add(ce, ops.scalar_mul(parts["cat"], w.cat_weight)),
        ops.scalar_mul(parts["sd"], w.sd_weight),
    )
