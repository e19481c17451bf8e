"""Dense float64 tensors and the gradient tape that differentiates them."""

from __future__ import annotations

from contextvars import ContextVar
from dataclasses import dataclass
import logging
from typing import Any, Callable, Optional, Sequence

import numpy as np

from catsd.exceptions import GradientError, NonFiniteError

_logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: ContextVar[Optional["GradTape"]] = ContextVar("active_tape", default=None)


class Tensor:
    """Dense N-dimensional array of 64-bit floats.

    The data buffer is read-only once constructed; only ``grad`` changes, and only
    when a tape replays its records backward. Operators delegate to
    :mod:`catsd.tensor.ops`, so ``a * b + c`` is recorded like any other op.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    data: np.ndarray
    requires_grad: bool
    grad: Optional[np.ndarray]
    name: Optional[str]

    def __init__(
        self, data: Any, requires_grad: bool = False, name: Optional[str] = None
    ) -> None:
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("Tensor data must be finite")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @classmethod
    def _from_result(cls, arr: np.ndarray, requires_grad: bool, op: str) -> "Tensor":
        """Wrap an op result without copying, refusing NaN/inf production."""
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{op} produced non-finite values from finite inputs")
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        out.data = arr
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        """Return the value of a one-element tensor."""
        if self.size != 1:
            raise GradientError(f"item() needs exactly one element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return the (read-only) underlying array."""
        return self.data

    def detach(self) -> "Tensor":
        """Return an untracked tensor sharing this tensor's data."""
        return Tensor._from_result(self.data, False, "detach")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operators -- imported lazily since ops depends on this module

    def __add__(self, other: Any) -> "Tensor":
        from catsd.tensor import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        from catsd.tensor import ops

        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from catsd.tensor import ops

        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from catsd.tensor import ops

        if isinstance(other, (int, float)):
            return ops.scalar_mul(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from catsd.tensor import ops

        return ops.scalar_mul(self, -1.0)

    def __getitem__(self, index: Any) -> "Tensor":
        from catsd.tensor import ops

        return ops.getitem(self, index)


@dataclass
class _Record:
    """A single executed differentiable operation."""

    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class GradTape:
    """Ordered record of differentiable operations executed while the tape is active.

    Usage::

        with GradTape() as tape:
            loss = ops.sum_(x * x)
        tape.backward(loss)

    Replaying visits records in exact reverse execution order. Gradients for
    leaves (tensors with ``requires_grad`` that no record produced) are summed
    internally and written to ``leaf.grad`` once per backward pass.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._token: Any = None

    def __enter__(self) -> "GradTape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._records)

    @property
    def ops(self) -> list[str]:
        """Names of the recorded operations, in execution order."""
        return [r.op for r in self._records]

    def record(
        self, op: str, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn
    ) -> None:
        """Append an executed operation."""
        self._records.append(_Record(op, output, tuple(inputs), backward))

    def backward(self, root: Tensor) -> None:
        """Populate ``grad`` on every leaf that ``root`` depends on."""
        if root.size != 1:
            raise GradientError(
                f"backward needs a scalar root, got shape {root.shape}"
            )
        produced = {id(r.output) for r in self._records}
        if id(root) not in produced and not root.requires_grad:
            raise GradientError("Root was not computed on this tape")

        grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
        leaves: dict[int, Tensor] = {}
        if id(root) not in produced:
            leaves[id(root)] = root

        for record in reversed(self._records):
            g = grads.pop(id(record.output), None)
            if g is None:
                continue
            for tensor, input_grad in zip(record.inputs, record.backward(g)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if input_grad.shape != tensor.shape:
                    raise GradientError(
                        f"{record.op} returned gradient of shape {input_grad.shape} "
                        f"for an input of shape {tensor.shape}"
                    )
                key = id(tensor)
                grads[key] = grads[key] + input_grad if key in grads else input_grad
                if key not in produced:
                    leaves[key] = tensor

        _logger.debug(
            "Backward over %d records reached %d leaves", len(self._records), len(leaves)
        )
        for key, leaf in leaves.items():
            g = np.array(grads[key], dtype=np.float64)
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def active_tape() -> Optional[GradTape]:
    """Return the innermost active tape, if any."""
    return _ACTIVE_TAPE.get()


def custom_op(
    op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn
) -> Tensor:
    """Create the output of a differentiable primitive and record it.

    ``backward`` maps the output gradient to one gradient (or ``None``) per input.
    Nothing is recorded unless a tape is active and some input requires grad.
    """
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor._from_result(data, requires_grad, op)
    tape = _ACTIVE_TAPE.get()
    if requires_grad and tape is not None:
        tape.record(op, out, inputs, backward)
    return out


def backward(scalar: Tensor, tape: GradTape) -> None:
    """Differentiate ``scalar`` with respect to every leaf recorded on ``tape``."""
    tape.backward(scalar)


def as_tensor(value: Any) -> Tensor:
    """Coerce arrays and numbers to untracked tensors, passing tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)
