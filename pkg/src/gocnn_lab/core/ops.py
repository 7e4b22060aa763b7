"""Differentiable layer vocabulary for small CNNs.

Convolution is cross-correlation (no kernel flip) with zero padding. The
forward pass gathers windows with ``sliding_window_view`` and contracts them
with ``tensordot``; the input gradient scatters back one kernel tap at a time.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from gocnn_lab.core.tensor import FloatArray, Tensor, record_op
from gocnn_lab.errors import ShapeError, ValidationError


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation.

    Args:
        x: Input of shape [B, Cin, H, W].
        weight: Filters of shape [Cout, Cin, kh, kw].
        bias: Bias of shape [Cout].
        stride: Step between windows, at least 1.
        pad: Zero padding added on every spatial border.

    Returns:
        Output of shape [B, Cout, H', W'] with H' = (H + 2·pad − kh) // stride + 1.

    Raises:
        ShapeError: On rank, channel or kernel-size mismatches.
        ValidationError: On stride < 1 or pad < 0.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d", "expected 4-D input and weight", [x.shape, weight.shape])
    if stride < 1 or pad < 0:
        raise ValidationError(f"conv2d: stride must be >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    batch, in_channels, height, width = x.shape
    out_channels, weight_in, kernel_h, kernel_w = weight.shape
    if weight_in != in_channels:
        raise ShapeError("conv2d", f"input has {in_channels} channels, weight expects {weight_in}",
                         [x.shape, weight.shape])
    if bias.shape != (out_channels,):
        raise ShapeError("conv2d", f"bias must have shape ({out_channels},)", [bias.shape])
    padded_h, padded_w = height + 2 * pad, width + 2 * pad
    if kernel_h > padded_h or kernel_w > padded_w:
        raise ShapeError("conv2d", "kernel larger than padded input", [x.shape, weight.shape])

    out_h = (padded_h - kernel_h) // stride + 1
    out_w = (padded_w - kernel_w) // stride + 1
    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = sliding_window_view(padded, (kernel_h, kernel_w), axis=(2, 3))[:, :, ::stride, ::stride]
    # windows: [B, Cin, H', W', kh, kw]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + bias.data[None, :, None, None]

    w = weight.data

    def backward(grad: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        grad_bias = grad.sum(axis=(0, 2, 3))
        grad_weight = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_padded = np.zeros((batch, in_channels, padded_h, padded_w), dtype=np.float64)
        for i in range(kernel_h):
            for j in range(kernel_w):
                contribution = np.tensordot(grad, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                grad_padded[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += contribution
        grad_x = grad_padded[:, :, pad : pad + height, pad : pad + width]
        return grad_x, grad_weight, grad_bias

    return record_op("conv2d", out, (x, weight, bias), backward)


def avg_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping average pooling; trailing rows/columns that do not fill a window are dropped.

    Raises:
        ShapeError: If the input is not 4-D or smaller than one window.
    """
    if x.ndim != 4:
        raise ShapeError("avg_pool2d", "expected [B, C, H, W]", [x.shape])
    if kernel < 1:
        raise ShapeError("avg_pool2d", f"kernel must be positive, got {kernel}", [x.shape])
    batch, channels, height, width = x.shape
    out_h, out_w = height // kernel, width // kernel
    if out_h < 1 or out_w < 1:
        raise ShapeError("avg_pool2d", f"kernel {kernel} does not fit the input", [x.shape])
    cropped = x.data[:, :, : out_h * kernel, : out_w * kernel]
    out = cropped.reshape(batch, channels, out_h, kernel, out_w, kernel).mean(axis=(3, 5))

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        spread = np.repeat(np.repeat(grad, kernel, axis=2), kernel, axis=3) / (kernel * kernel)
        grad_x = np.zeros((batch, channels, height, width), dtype=np.float64)
        grad_x[:, :, : out_h * kernel, : out_w * kernel] = spread
        return (grad_x,)

    return record_op("avg_pool2d", out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all spatial positions: [B, C, H, W] → [B, C]."""
    if x.ndim != 4:
        raise ShapeError("global_avg_pool", "expected [B, C, H, W]", [x.shape])
    height, width = x.shape[2], x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (np.broadcast_to(grad[:, :, None, None] / (height * width), x.shape).copy(),)

    return record_op("global_avg_pool", out, (x,), backward)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight.T + bias``: [B, D] → [B, K].

    Raises:
        ShapeError: If inner dimensions disagree.
    """
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError("fully_connected", "expected 2-D input and weight", [x.shape, weight.shape])
    if x.shape[1] != weight.shape[1]:
        raise ShapeError("fully_connected", f"input width {x.shape[1]} != weight width {weight.shape[1]}",
                         [x.shape, weight.shape])
    if bias.shape != (weight.shape[0],):
        raise ShapeError("fully_connected", f"bias must have shape ({weight.shape[0]},)", [bias.shape])
    out = x.data @ weight.data.T + bias.data
    x_data, w_data = x.data, weight.data

    def backward(grad: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        return grad @ w_data, grad.T @ x_data, grad.sum(axis=0)

    return record_op("fully_connected", out, (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    active = x.data > 0.0
    out = np.where(active, x.data, 0.0)

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (grad * active,)

    return record_op("relu", out, (x,), backward)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Select channels ``start:stop`` along axis 1."""
    if x.ndim < 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError("channel_slice", f"invalid channel range [{start}, {stop})", [x.shape])
    out = x.data[:, start:stop]

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        grad_x = np.zeros(x.shape, dtype=np.float64)
        grad_x[:, start:stop] = grad
        return (grad_x,)

    return record_op("channel_slice", out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``."""
    if not tensors:
        raise ValidationError("concat: at least one tensor is required")
    try:
        out = np.concatenate([tensor.data for tensor in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc), [tensor.shape for tensor in tensors]) from exc
    boundaries = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def backward(grad: FloatArray) -> list[FloatArray]:
        return [np.ascontiguousarray(part) for part in np.split(grad, boundaries, axis=axis)]

    return record_op("concat", out, tuple(tensors), backward)


def multiply_constant(x: Tensor, gate: FloatArray) -> Tensor:
    """Elementwise product with a constant array broadcast to ``x``'s shape; no gradient reaches the gate."""
    try:
        broadcast_gate = np.broadcast_to(gate, x.shape)
    except ValueError as exc:
        raise ShapeError("multiply_constant", "gate does not broadcast to the input",
                         [x.shape, tuple(np.shape(gate))]) from exc
    out = x.data * broadcast_gate

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (grad * broadcast_gate,)

    return record_op("multiply_constant", out, (x,), backward)


def sum_of_squares(x: Tensor, scale: float = 1.0) -> Tensor:
    """``scale · Σ x²`` as a scalar tensor."""
    out = np.asarray(scale * np.sum(x.data * x.data))
    x_data = x.data

    def backward(grad: FloatArray) -> tuple[FloatArray]:
        return (2.0 * scale * grad.item() * x_data,)

    return record_op("sum_of_squares", out, (x,), backward)


def weighted_sum(terms: Sequence[tuple[float, Tensor]]) -> Tensor:
    """Linear combination of scalar tensors, ``Σ wᵢ·tᵢ``.

    Terms with weight 0 still appear in the value (as +0.0) but pass no gradient.
    """
    if not terms:
        raise ValidationError("weighted_sum: at least one term is required")
    for _, term in terms:
        if term.size != 1:
            raise ShapeError("weighted_sum", "terms must be scalars", [term.shape])
    total = 0.0
    for weight, term in terms:
        total += weight * term.item()
    weights = [weight for weight, _ in terms]

    def backward(grad: FloatArray) -> list[FloatArray | None]:
        upstream = grad.item()
        return [
            np.full(term.shape, weight * upstream, dtype=np.float64) if weight != 0.0 else None
            for weight, (_, term) in zip(weights, terms, strict=True)
        ]

    return record_op("weighted_sum", np.asarray(total), tuple(term for _, term in terms), backward)
