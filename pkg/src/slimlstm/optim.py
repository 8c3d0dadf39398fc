"""RMSprop, the loss-driven dynamic learning rate, and early stopping.

The learning rate is recomputed per mini-batch from that batch's mean
training loss C as eta = eta0 * exp(C): large loss means large steps, and
the rate decays toward eta0 as the loss approaches zero.

Early stopping watches test accuracy: strict improvement resets the
counter, and training halts once ``patience`` consecutive non-improving
epochs accumulate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError

__all__ = ["RmsState", "LrSchedule", "EarlyStop", "lr_from_loss", "rmsprop_step"]

RHO_DEFAULT = 0.9
EPS_DEFAULT = 1e-8


@dataclass
class RmsState:
    """Running mean of squared gradients, one accumulator per tensor."""
    acc: dict[str, np.ndarray]
    rho: float = RHO_DEFAULT
    eps: float = EPS_DEFAULT

    @classmethod
    def zeros(cls, tensors: dict[str, np.ndarray],
              rho: float = RHO_DEFAULT, eps: float = EPS_DEFAULT) -> "RmsState":
        return cls(acc={k: np.zeros_like(v) for k, v in tensors.items()}, rho=rho, eps=eps)

    def copy(self) -> "RmsState":
        return RmsState(acc={k: v.copy() for k, v in self.acc.items()},
                        rho=self.rho, eps=self.eps)


@dataclass(frozen=True)
class LrSchedule:
    eta0: float

    def __post_init__(self):
        if not (self.eta0 > 0.0):
            raise DivergenceError(f"eta0 must be positive, got {self.eta0}")


def lr_from_loss(schedule: LrSchedule, loss: float) -> float:
    """eta = eta0 * exp(C) for the current training loss C."""
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {loss!r}; aborting run")
    return schedule.eta0 * math.exp(loss)


def rmsprop_step(tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: RmsState, eta: float) -> None:
    """In-place update: acc <- rho acc + (1-rho) g^2; theta <- theta - eta g / (sqrt(acc) + eps).

    All three containers must be shape-congruent; iteration follows the
    tensors' insertion order so updates are deterministic.
    """
    for name, theta in tensors.items():
        g = grads[name]
        acc = state.acc[name]
        if g.shape != theta.shape or acc.shape != theta.shape:
            raise DimensionError(
                f"rmsprop_step: {name} shapes differ "
                f"(param {theta.shape}, grad {g.shape}, acc {acc.shape})"
            )
        acc *= state.rho
        acc += (1.0 - state.rho) * g * g
        theta -= eta * g / (np.sqrt(acc) + state.eps)


@dataclass
class EarlyStop:
    """Stop after ``patience`` consecutive epochs without strict improvement."""
    patience: int
    best_metric: float = -math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    stopped: bool = field(default=False)

    def observe(self, metric: float, epoch: int) -> bool:
        """Record one epoch's metric; returns True when training should stop."""
        if metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
            if self.epochs_since_improvement >= self.patience:
                self.stopped = True
        return self.stopped
