"""Dense float64 tensors and a reverse-mode tape.

A Tensor is an immutable row-major float64 array plus a requires_grad flag.
Operations run eagerly; while a Tape is active (``with Tape() as tape:``)
every op whose inputs require gradients appends a node holding its backward
rule. ``tape.backward(loss)`` then walks the nodes in reverse order.

The active tape lives in a ContextVar, so each thread builds its own graph.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from contextvars import ContextVar, Token
from dataclasses import dataclass
from types import TracebackType

import numpy as np
import numpy.typing as npt

from gocnn_lab.errors import NumericError, ShapeError

FloatArray = npt.NDArray[np.float64]
BackwardRule = Callable[[FloatArray], Sequence[FloatArray | None]]

_active_tape: ContextVar[Tape | None] = ContextVar("gocnn_active_tape", default=None)


class Tensor:
    """Immutable dense float64 array.

    Tensors hash by identity, which lets gradient maps use them as keys.
    Parameters are the only tensors whose payload is ever replaced, and only
    through ``assign`` between training steps.

    Args:
        data: Array-like payload; always copied.
        requires_grad: Whether gradients should be tracked for this leaf.
        name: Optional parameter name.
    """

    __slots__ = ("_data", "_from_op", "name", "requires_grad")

    def __init__(self, data: npt.ArrayLike, *, requires_grad: bool = False, name: str | None = None) -> None:
        array = np.array(data, dtype=np.float64, order="C", copy=True)
        _check_finite(array, name or "tensor")
        array.flags.writeable = False
        self._data: FloatArray = array
        self.requires_grad = requires_grad
        self.name = name
        self._from_op = False

    @classmethod
    def _wrap(cls, array: FloatArray, *, requires_grad: bool, op: str) -> Tensor:
        out = cls.__new__(cls)
        array = np.require(array, dtype=np.float64, requirements="C")
        _check_finite(array, op)
        array.flags.writeable = False
        out._data = array
        out.requires_grad = requires_grad
        out.name = None
        out._from_op = True
        return out

    @property
    def data(self) -> FloatArray:
        """Read-only view of the payload."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(d) for d in self._data.shape)

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def ndim(self) -> int:
        return int(self._data.ndim)

    @property
    def is_leaf(self) -> bool:
        return not self._from_op

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        if self.size != 1:
            raise ShapeError("item", "tensor is not a scalar", [self.shape])
        return float(self._data.reshape(-1)[0])

    def numpy(self) -> FloatArray:
        """Return a writable copy of the payload."""
        return np.array(self._data, copy=True)

    def assign(self, data: npt.ArrayLike) -> None:
        """Replace the payload of a leaf tensor in place of identity.

        Args:
            data: New payload with exactly the current shape.

        Raises:
            ShapeError: If the shape differs.
            NumericError: If the payload is not finite.
        """
        array = np.array(data, dtype=np.float64, order="C", copy=True)
        if array.shape != self._data.shape:
            raise ShapeError("assign", "shape must be preserved", [self.shape, tuple(array.shape)])
        _check_finite(array, self.name or "assign")
        array.flags.writeable = False
        self._data = array

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


@dataclass(frozen=True)
class Node:
    """One recorded operation on the tape."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is topologically
    ordered: each node's inputs were produced before it.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._token: Token[Tape | None] | None = None

    def __enter__(self) -> Tape:
        self._token = _active_tape.set(self)
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    def record(self, op: str, output: Tensor, inputs: Sequence[Tensor], backward: BackwardRule) -> None:
        self.nodes.append(Node(op=op, inputs=tuple(inputs), output=output, backward=backward))

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, FloatArray]:
        """Compute d(loss)/d(leaf) for every tracked leaf.

        Args:
            loss: Single-element tensor produced on this tape.
            wrt: Leaves to report. Leaves not reached by the loss receive a
                zero gradient. When omitted, every reached leaf is reported.

        Returns:
            Mapping from leaf tensor to a gradient array of the same shape.

        Raises:
            ShapeError: If the loss is not a scalar.
        """
        if loss.size != 1:
            raise ShapeError("backward", "loss must be a scalar", [loss.shape])

        grads: dict[int, FloatArray] = {id(loss): np.ones(loss.shape, dtype=np.float64)}
        leaves: dict[int, Tensor] = {}
        if loss.is_leaf and loss.requires_grad:
            leaves[id(loss)] = loss

        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = node.backward(upstream)
            for tensor, grad in zip(node.inputs, input_grads, strict=True):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor._data.shape:
                    raise ShapeError(node.op, "backward rule returned a gradient of the wrong shape",
                                     [tensor.shape, tuple(grad.shape)])
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if tensor.is_leaf:
                    leaves[key] = tensor

        if wrt is None:
            return {tensor: grads[key] for key, tensor in leaves.items()}
        return {
            tensor: grads.get(id(tensor), np.zeros(tensor.shape, dtype=np.float64))
            for tensor in wrt
        }


def current_tape() -> Tape | None:
    """Return the tape active in this context, if any."""
    return _active_tape.get()


def record_op(op: str, data: FloatArray, inputs: Sequence[Tensor], backward: BackwardRule) -> Tensor:
    """Wrap an op result and record it on the active tape.

    Args:
        op: Operation name, used in error messages.
        data: Forward result.
        inputs: Tensor inputs, in the order ``backward`` returns gradients.
        backward: Maps the upstream gradient to one gradient (or None) per input.

    Returns:
        The output tensor.

    Raises:
        NumericError: If the forward result is not finite.
    """
    requires_grad = any(tensor.requires_grad for tensor in inputs)
    output = Tensor._wrap(data, requires_grad=requires_grad, op=op)
    tape = _active_tape.get()
    if requires_grad and tape is not None:
        tape.record(op, output, inputs, backward)
    return output


def stop_gradient(tensor: Tensor) -> Tensor:
    """Return the same values with no gradient path back to ``tensor``."""
    return Tensor._wrap(tensor.data, requires_grad=False, op="stop_gradient")


def constant(data: npt.ArrayLike) -> Tensor:
    """Build a tensor that never requires gradients."""
    return Tensor(data, requires_grad=False)


def parameter(data: npt.ArrayLike, name: str) -> Tensor:
    """Build a named trainable leaf."""
    return Tensor(data, requires_grad=True, name=name)


def _check_finite(array: FloatArray, where: str) -> None:
    if not np.isfinite(array).all():
        raise NumericError(f"{where}: produced non-finite values")
