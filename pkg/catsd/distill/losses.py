"""Logit and feature distillation losses.

Logit tensors are ``(k, h, w)`` or ``(n, k, h, w)``: the class axis is -3.
Every loss averages over all pixels of the batch, background included.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from catsd.distill.temperature import TemperatureVector
from catsd.exceptions import DomainError, ShapeError
from catsd.tensor import Tensor, as_tensor
from catsd.tensor import ops

CLASS_AXIS = -3


def _check_logits(teacher: Tensor, student: Tensor, k: int) -> None:
    if teacher.ndim not in (3, 4) or teacher.ndim != student.ndim:
        raise ShapeError(f"Logits must share rank 3 or 4, got {teacher.shape} and {student.shape}")
    if teacher.shape[:-3] != student.shape[:-3] or teacher.shape[-2:] != student.shape[-2:]:
        raise ShapeError(f"Spatial shapes differ: {teacher.shape} vs {student.shape}")
    if teacher.shape[CLASS_AXIS] != k:
        raise ShapeError(f"Teacher has {teacher.shape[CLASS_AXIS]} classes, expected {k}")
    if k > student.shape[CLASS_AXIS]:
        raise ShapeError(f"Student has fewer than {k} classes: {student.shape}")


def _softened_cross_entropy(
    teacher_logits: Union[Tensor, np.ndarray],
    student_logits: Union[Tensor, np.ndarray],
    temperature: Union[None, float, np.ndarray],
    k: Optional[int],
) -> Tensor:
    teacher, student = as_tensor(teacher_logits), as_tensor(student_logits)
    k = teacher.shape[CLASS_AXIS] if k is None else k
    _check_logits(teacher, student, k)
    if student.shape[CLASS_AXIS] != k:
        # new classes are masked out of the distillation term
        student = ops.getitem(student, (Ellipsis, slice(0, k), slice(None), slice(None)))
    p = ops.softmax(teacher, temperature, axis=CLASS_AXIS)
    log_q = ops.log_softmax(student, temperature, axis=CLASS_AXIS)
    pixels = p.size // k
    return ops.scalar_mul(ops.sum_(ops.mul(p, log_q)), -1.0 / pixels)


def kd_logits_loss(
    teacher_logits: Union[Tensor, np.ndarray],
    student_logits: Union[Tensor, np.ndarray],
    k: Optional[int] = None,
) -> Tensor:
    """Cross-entropy of the student's first ``k`` channels against the teacher's softmax."""
    return _softened_cross_entropy(teacher_logits, student_logits, None, k)


def temperature_kd_loss(
    teacher_logits: Union[Tensor, np.ndarray],
    student_logits: Union[Tensor, np.ndarray],
    temperature: float,
    k: Optional[int] = None,
) -> Tensor:
    """:func:`kd_logits_loss` with both distributions softened by one scalar temperature."""
    if not temperature > 0:
        raise DomainError(f"Temperature must be strictly positive, got {temperature}")
    return _softened_cross_entropy(teacher_logits, student_logits, float(temperature), k)


def cat_loss(
    teacher_logits: Union[Tensor, np.ndarray],
    student_logits: Union[Tensor, np.ndarray],
    tvec: TemperatureVector,
    class_list: Optional[Sequence[int]] = None,
) -> Tensor:
    """Class-aware temperature distillation.

    Each teacher class ``c`` is softened by ``tvec`` on both sides before the
    cross-entropy. ``class_list`` (the teacher's class ids) is checked against
    the vector when given.
    """
    teacher = as_tensor(teacher_logits)
    k = teacher.shape[CLASS_AXIS] if teacher.ndim >= 3 else 0
    tvec.check_covers(class_list, k)
    return _softened_cross_entropy(teacher, student_logits, tvec.as_array(), k)


def feature_l2_loss(f_old: Union[Tensor, np.ndarray], f_new: Union[Tensor, np.ndarray]) -> Tensor:
    """Euclidean norm of the feature difference divided by its element count."""
    a, b = as_tensor(f_old), as_tensor(f_new)
    if a.shape != b.shape:
        raise ShapeError(f"Feature shapes differ: {a.shape} vs {b.shape}")
    return ops.scalar_mul(ops.l2_norm(ops.sub(a, b)), 1.0 / a.size)
