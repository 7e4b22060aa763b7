"""SGD with momentum and L2 weight decay, plus a validation-plateau LR schedule.

Update rule, per parameter:
    v ← momentum·v + grad + weight_decay·param
    param ← param − lr·v
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from gocnn_lab.core.tensor import FloatArray, Tensor
from gocnn_lab.errors import NumericError, ShapeError, ValidationError
from gocnn_lab.observability import get_logger

logger = get_logger(__name__)


def sgd_step(
    params: Mapping[str, FloatArray],
    grads: Mapping[str, FloatArray],
    velocities: Mapping[str, FloatArray],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> tuple[dict[str, FloatArray], dict[str, FloatArray]]:
    """Apply one momentum-SGD update without mutating the inputs.

    Args:
        params: Current parameter values by name.
        grads: Gradients by name; every parameter needs one.
        velocities: Momentum buffers by name; missing entries start at zero.
        lr: Learning rate. Must be positive; 0 is accepted as a frozen step.
        momentum: Momentum coefficient in [0, 1).
        weight_decay: L2 coefficient, at least 0.

    Returns:
        Tuple of (new params, new velocities).

    Raises:
        ValidationError: On out-of-range hyperparameters or a missing gradient.
        ShapeError: If a gradient's shape differs from its parameter.
        NumericError: If the update produces non-finite values.
    """
    if lr < 0.0 or not 0.0 <= momentum < 1.0 or weight_decay < 0.0:
        raise ValidationError(
            f"sgd_step: need lr >= 0, momentum in [0, 1), weight_decay >= 0; "
            f"got lr={lr}, momentum={momentum}, weight_decay={weight_decay}"
        )
    new_params: dict[str, FloatArray] = {}
    new_velocities: dict[str, FloatArray] = {}
    for name, value in params.items():
        if name not in grads:
            raise ValidationError(f"sgd_step: no gradient for parameter {name!r}")
        grad = grads[name]
        if grad.shape != value.shape:
            raise ShapeError("sgd_step", f"gradient shape mismatch for {name!r}", [value.shape, grad.shape])
        previous = velocities.get(name)
        velocity = grad + weight_decay * value if previous is None else momentum * previous + grad + weight_decay * value
        updated = value - lr * velocity
        if not (np.isfinite(updated).all() and np.isfinite(velocity).all()):
            raise NumericError(f"sgd_step: non-finite update for {name!r}")
        new_params[name] = updated
        new_velocities[name] = velocity
    return new_params, new_velocities


class SGD:
    """Stateful momentum SGD over named parameter tensors.

    The optimizer replaces each parameter's payload in place of identity, so
    every model view holding the tensor sees the update.

    Args:
        params: Parameters to update, in a fixed order.
        lr: Initial learning rate.
        momentum: Momentum coefficient.
        weight_decay: L2 coefficient.
    """

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 1e-4) -> None:
        names = [param.name for param in params]
        if any(name is None for name in names) or len(set(names)) != len(names):
            raise ValidationError("SGD: parameters must carry unique names")
        self._params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocities: dict[str, FloatArray] = {}

    @property
    def params(self) -> list[Tensor]:
        return list(self._params)

    def step(self, grads: Mapping[Tensor, FloatArray]) -> None:
        """Apply one update from a gradient map keyed by parameter tensor."""
        values = {str(param.name): param.data for param in self._params}
        named_grads = {
            str(param.name): grads.get(param, np.zeros(param.shape, dtype=np.float64)) for param in self._params
        }
        new_values, self._velocities = sgd_step(
            values, named_grads, self._velocities, self.lr, self.momentum, self.weight_decay
        )
        for param in self._params:
            param.assign(new_values[str(param.name)])


@dataclass
class PlateauScheduler:
    """Divide the learning rate when validation accuracy stops improving.

    After ``patience`` consecutive epochs in which top-1 fails to beat the best
    value by at least ``min_delta``, the LR is multiplied by ``factor`` and the
    wait counter restarts.
    """

    optimizer: SGD
    patience: int = 5
    min_delta: float = 0.002
    factor: float = 0.1
    best: float = field(default=-np.inf, init=False)
    wait: int = field(default=0, init=False)
    reductions: int = field(default=0, init=False)

    def observe(self, accuracy: float, epoch: int) -> bool:
        """Record one epoch's validation accuracy.

        Returns:
            True if the learning rate was reduced.
        """
        if accuracy > self.best + self.min_delta:
            self.best = accuracy
            self.wait = 0
            return False
        self.wait += 1
        if self.wait < self.patience:
            return False
        previous = self.optimizer.lr
        self.optimizer.lr = previous * self.factor
        self.wait = 0
        self.reductions += 1
        logger.info("learning_rate_reduced", epoch=epoch, previous_lr=previous, lr=self.optimizer.lr)
        return True
