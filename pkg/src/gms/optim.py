"""AdamW with decoupled weight decay and a per-epoch cosine annealing schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError

if TYPE_CHECKING:
    from collections.abc import Mapping

    from .tensor import Tensor

_MOMENT_PREFIXES = ("adamw.m.", "adamw.v.")


@dataclass
class AdamWState:
    """Hyper-parameters, step count and per-parameter moments (keyed by parameter name)."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def hyperparameters(self) -> dict[str, Any]:
        """Return the scalar part of the state."""
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "t": self.t,
        }

    def tensors(self) -> dict[str, np.ndarray]:
        """Return the moments as archive entries."""
        out = {f"adamw.m.{name}": value for name, value in self.m.items()}
        out.update({f"adamw.v.{name}": value for name, value in self.v.items()})
        return out

    @classmethod
    def from_archive(cls, hyperparameters: Mapping[str, Any], tensors: Mapping[str, np.ndarray]) -> AdamWState:
        """Rebuild a state from :meth:`hyperparameters` and :meth:`tensors` output."""
        state = cls(**hyperparameters)
        for key, value in tensors.items():
            if key.startswith(_MOMENT_PREFIXES[0]):
                state.m[key[len(_MOMENT_PREFIXES[0]) :]] = np.array(value)
            elif key.startswith(_MOMENT_PREFIXES[1]):
                state.v[key[len(_MOMENT_PREFIXES[1]) :]] = np.array(value)
        return state


def adamw_step(params: Mapping[str, Tensor], grads: Mapping[int, Tensor], state: AdamWState, lr: float) -> None:
    """Apply one AdamW update in place.

    ``m <- b1 m + (1-b1) g``, ``v <- b2 v + (1-b2) g^2`` and, with the
    bias-corrected moments, ``theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)``.
    Parameters with ``requires_grad=False`` are never touched.

    Args:
        params: Trainable parameters keyed by name.
        grads: Gradients keyed by :attr:`Tensor.uid`, as returned by :func:`gms.tensor.backward`.
        state: Optimizer state, updated in place.
        lr: Learning rate of this step.
    """
    trainable = {name: p for name, p in params.items() if p.requires_grad}
    missing = [name for name, p in trainable.items() if p.uid not in grads]
    if missing:
        msg = f"No gradient for trainable parameter(s) {missing}."
        raise UsageError(msg)
    for name, param in trainable.items():
        if grads[param.uid].shape != param.shape:
            msg = f"Gradient for {name!r} has shape {grads[param.uid].shape}, the parameter has {param.shape}."
            raise DimensionError(msg)

    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for name, param in trainable.items():
        g = grads[param.uid].data.astype(param.dtype, copy=False)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        update = lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * param.data)
        param.data -= update.astype(param.dtype)


class AdamW:
    """Stateful wrapper around :func:`adamw_step` for a fixed set of named parameters."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 2e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ) -> None:
        """Register the parameters the optimizer may update."""
        self.params = dict(params)
        self.lr = lr
        self.state = AdamWState(beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def step(self, grads: Mapping[int, Tensor], lr: float | None = None) -> None:
        """Update every registered trainable parameter."""
        adamw_step(self.params, grads, self.state, self.lr if lr is None else lr)


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine annealing from ``lr_init`` at epoch 0 to ``eta_min`` at epoch ``total_epochs``."""

    total_epochs: int
    lr_init: float = 2e-3
    eta_min: float = 0.0

    def __post_init__(self) -> None:
        """Validate the schedule."""
        if self.total_epochs < 1:
            msg = f"total_epochs must be at least 1, got {self.total_epochs}."
            raise ConfigurationError(msg)

    def lr(self, t: float) -> float:
        """Return the learning rate of epoch ``t``."""
        return cosine_lr(self, t)


def cosine_lr(sched: CosineSchedule, t: float) -> float:
    """Return ``eta_min + (lr_init - eta_min) (1 + cos(pi t / T)) / 2``.

    Raises:
        UsageError: If ``t`` lies outside ``[0, T]``.
    """
    if not 0 <= t <= sched.total_epochs:
        msg = f"Epoch {t} is outside the schedule range [0, {sched.total_epochs}]."
        raise UsageError(msg)
    return sched.eta_min + 0.5 * (sched.lr_init - sched.eta_min) * (1.0 + math.cos(math.pi * t / sched.total_epochs))
