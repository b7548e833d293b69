"""Adam optimizer, warmup/cosine schedule, init, and a gradient checker."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import GradientTape, Tensor, backward

__all__ = ["Adam", "lr_at", "uniform_fan_in", "finite_diff_check"]


class Adam:
    """Adam with bias correction over a fixed list of parameter tensors.

    One instance owns one parameter group; training code that needs
    different learning rates per task keeps one instance per group. The
    learning rate may be replaced between steps (schedules call
    ``set_lr``), which leaves moment state untouched.
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        for p in self.params:
            if not p.requires_grad:
                raise ValueError("Adam got a parameter with requires_grad=False")
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def set_lr(self, lr: float) -> None:
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """One update; parameters whose grad is None are skipped."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def lr_at(epoch: int, base_lr: float, warmup_epochs: int, total_epochs: int) -> float:
    """Learning rate at integer ``epoch``: linear warmup then cosine decay.

    Warmup rises linearly from 0 at epoch 0 to ``base_lr`` at
    ``warmup_epochs`` (the two segments agree there), and the cosine tail
    reaches exactly 0 at ``total_epochs``.
    """
    if total_epochs <= warmup_epochs:
        raise ValueError("total_epochs must exceed warmup_epochs")
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch < warmup_epochs:
        return base_lr * epoch / warmup_epochs
    if epoch >= total_epochs:
        return 0.0
    frac = (epoch - warmup_epochs) / (total_epochs - warmup_epochs)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int | None = None) -> np.ndarray:
    """Uniform init on (-sqrt(1/fan_in), +sqrt(1/fan_in)).

    ``fan_in`` defaults to the first dimension, matching (in, out) weight
    layout; pass it explicitly for bias vectors so they share the scale of
    the weight they accompany.
    """
    if fan_in is None:
        fan_in = shape[0]
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def finite_diff_check(build_loss, params: list[Tensor], rel_tol: float = 1e-4,
                      eps: float = 1e-6, max_entries: int = 40,
                      rng: np.random.Generator | None = None,
                      atol: float = 1e-9) -> float:
    """Compare tape gradients against central finite differences.

    ``build_loss`` is a zero-argument callable returning a scalar Tensor;
    it must read the current values of ``params`` each call. For each
    parameter a subset of entries (all, or ``max_entries`` sampled ones) is
    perturbed by +-eps. Returns the worst relative error and raises
    AssertionError if it exceeds ``rel_tol``.

    Differences within ``atol`` count as agreement: the numeric side
    carries roundoff noise of about ulp(loss) / (2 * eps), so entries
    whose true gradient sits below that floor would otherwise report
    spurious mismatches that shrink as eps grows, the signature of
    measurement noise rather than a wrong derivative.
    """
    with GradientTape() as tape:
        loss = build_loss()
    backward(tape, loss, leaves=params)
    analytic = [p.grad.copy() for p in params]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if flat.size > max_entries:
            idxs = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + eps
            up = build_loss().item()
            flat[i] = keep - eps
            down = build_loss().item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * eps)
            a = g.reshape(-1)[i]
            if abs(a - numeric) <= atol:
                continue
            denom = max(abs(a), abs(numeric), 1e-8)
            rel = abs(a - numeric) / denom
            worst = max(worst, rel)
    if worst > rel_tol:
        raise AssertionError(f"gradient check failed: rel err {worst:.3e} > {rel_tol:.1e}")
    return worst
