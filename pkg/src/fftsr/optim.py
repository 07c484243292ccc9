"""Optimization: AdamW with decoupled weight decay, the cosine
annealing schedule with decaying warm restarts, and the discriminator
restart policy.

Schedule shape: within cycle k at phase phi in [0, 1],
``lr = peak_k * (floor + (1 - floor) * (1 + cos(pi * phi)) / 2)`` with
``peak_k = lr0 * peak_decay**k``. Defaults reproduce a 5% lower peak per
cycle and a decay to half the peak before each reset.

The restart policy watches a rolling window of discriminator accuracy.
When the discriminator is stuck (low accuracy) or has collapsed the
adversarial signal (near-perfect accuracy for the whole window), it
boosts the discriminator learning rate and scales down the generator's
adversarial weight until accuracy returns to a healthy band; a second
trigger within the cooldown additionally requests a hard weight
reinitialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizerError
from .tensor import Tensor

__all__ = [
    "AdamW",
    "CosineRestartSchedule",
    "RestartPolicy",
    "PolicyAction",
]


class AdamW:
    """AdamW over a fixed list of named parameters.

    Update: m and v are the usual Adam moments; after bias correction the
    step is ``theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)``,
    so the decay term never passes through the adaptive scaling. With
    weight_decay = 0 this is exactly Adam.
    """

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None):
        """Apply one update from the gradients currently on the params."""
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient for parameter {self.names[i]!r}")
            m = b1 * self.m[i] + (1.0 - b1) * g
            v = b2 * self.v[i] + (1.0 - b2) * (g * g)
            self.m[i] = m
            self.v[i] = v
            m_hat = m / bc1
            v_hat = v / bc2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay != 0.0:
                update = update + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass(frozen=True)
class CosineRestartSchedule:
    """Deterministic warm-restart schedule; ``lr_at`` is a pure function."""

    base_lr: float
    cycle_steps: int = 2000
    peak_decay: float = 0.95
    floor_fraction: float = 0.5

    def peak(self, cycle: int) -> float:
        return self.base_lr * self.peak_decay**cycle

    def lr_at_phase(self, cycle: int, phase: float) -> float:
        """Learning rate at a continuous phase in [0, 1] of a cycle."""
        shape = self.floor_fraction + (1.0 - self.floor_fraction) * (
            1.0 + math.cos(math.pi * phase)
        ) / 2.0
        return self.peak(cycle) * shape

    def lr_at(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be >= 0")
        cycle, within = divmod(step, self.cycle_steps)
        return self.lr_at_phase(cycle, within / self.cycle_steps)


@dataclass(frozen=True)
class PolicyAction:
    kind: str  # none | enter_boost | exit_boost
    reinit_discriminator: bool = False


@dataclass
class RestartPolicy:
    """Finite state machine over the discriminator accuracy window."""

    window: int = 200
    acc_low: float = 0.5
    acc_high: float = 0.95
    lr_boost: float = 5.0
    adv_scale: float = 0.1
    cooldown: int = 1000
    exit_band: tuple[float, float] = (0.55, 0.8)
    restart_every: int = 0  # > 0: also trigger periodically at this step interval

    mode: str = "normal"
    disc_lr_multiplier: float = 1.0
    adv_multiplier: float = 1.0
    last_trigger_step: int = -(10**9)
    _acc: list[float] = field(default_factory=list)

    def observe(self, accuracy: float, step: int) -> PolicyAction:
        """Record one step's discriminator accuracy and transition.

        The window keeps rolling across mode changes, so the exit test
        sees genuinely fresh accuracies rather than a reset history.
        """
        self._acc.append(float(accuracy))
        if len(self._acc) > self.window:
            self._acc.pop(0)
        full = len(self._acc) == self.window
        mean_acc = sum(self._acc) / len(self._acc)

        if self.mode == "normal":
            periodic = self.restart_every > 0 and step > 0 and step % self.restart_every == 0
            stuck = full and mean_acc < self.acc_low
            collapsed = full and mean_acc > self.acc_high
            if periodic or stuck or collapsed:
                reinit = step - self.last_trigger_step <= self.cooldown
                self.last_trigger_step = step
                self.mode = "disc-boost"
                self.disc_lr_multiplier = self.lr_boost
                self.adv_multiplier = self.adv_scale
                return PolicyAction("enter_boost", reinit_discriminator=reinit)
            return PolicyAction("none")

        if self.exit_band[0] <= mean_acc <= self.exit_band[1]:
            self.mode = "normal"
            self.disc_lr_multiplier = 1.0
            self.adv_multiplier = 1.0
            return PolicyAction("exit_boost")
        return PolicyAction("none")
