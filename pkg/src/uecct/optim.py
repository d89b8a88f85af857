"""Learning-rate schedule, gradient clipping and the Adam optimizer."""

from __future__ import annotations

import math

import numpy as np

from uecct.errors import DataError, NumericalError
from uecct.tensor import Tensor

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def cosine_lr(step: int, total: int, lr_init: float, lr_final: float) -> float:
    """Cosine decay from lr_init at step 0 to lr_final at step ``total``, no warmup."""
    if total < 0 or not 0 <= step <= max(total, 0):
        raise DataError(f"cosine_lr: step {step} outside [0, {total}]")
    if total == 0:
        return lr_init
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * step / total))


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    return math.sqrt(total)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_grad_norm(params)
    if math.isfinite(norm) and norm > max_norm > 0:
        factor = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad = t.grad * factor
    return norm


class Adam:
    """Adam with bias correction; parameters without a gradient count as zero-gradient."""

    def __init__(
        self,
        params: dict[str, Tensor],
        betas: tuple[float, float] = ADAM_BETAS,
        eps: float = ADAM_EPS,
    ):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float) -> None:
        bad = [
            name for name, p in self.params.items()
            if p.grad is not None and not np.all(np.isfinite(p.grad))
        ]
        if bad:
            raise NumericalError(f"Non-finite gradient in {', '.join(sorted(bad))}; step aborted")

        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
