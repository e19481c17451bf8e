"""Distillation losses and the per-method training objective."""

from catsd.distill.losses import cat_loss, feature_l2_loss, kd_logits_loss, temperature_kd_loss
from catsd.distill.objective import REQUIRED_PARTS, LossWeights, total_loss
from catsd.distill.pod import (
    PodEmbedding,
    ShiftSpec,
    embedding_length,
    local_pod_loss,
    msshift_embedding,
    multiscale_embedding,
    pod_embedding,
    pod_loss,
    sd_loss,
    shift_specs,
    shifted_embedding,
)
from catsd.distill.temperature import TemperatureVector, cat_vector
from catsd.model.taxonomy import ClassTaxonomy

__all__ = [
    "REQUIRED_PARTS",
    "ClassTaxonomy",
    "LossWeights",
    "PodEmbedding",
    "ShiftSpec",
    "TemperatureVector",
    "cat_loss",
    "cat_vector",
    "embedding_length",
    "feature_l2_loss",
    "kd_logits_loss",
    "local_pod_loss",
    "msshift_embedding",
    "multiscale_embedding",
    "pod_embedding",
    "pod_loss",
    "sd_loss",
    "shift_specs",
    "shifted_embedding",
    "temperature_kd_loss",
    "total_loss",
]
