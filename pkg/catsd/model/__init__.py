"""Data model."""

from __future__ import annotations

try:
    from pydantic.v1 import BaseModel
except ImportError:
    from pydantic import BaseModel  # type: ignore[assignment]


class CatsdBaseModel(BaseModel):
    """Structured format for all documents the lab reads and writes."""

    class Config:  # noqa: D106
        allow_mutation = False
        frozen = True
        use_enum_values = True
