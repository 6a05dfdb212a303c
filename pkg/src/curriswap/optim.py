"""Adam with bias correction, global-norm clipping and the lr descend schedule."""
from dataclasses import dataclass, field

import numpy as np

LR_FLOOR = 1e-6


@dataclass
class OptimizerState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    best_dev: float = float("inf")


def adam_step(opt, params, grads=None):
    """In-place Adam update of ``params`` (name -> Tensor).

    ``grads`` defaults to each tensor's ``.grad``. A parameter without a
    gradient raises; pass an explicit zero array to step it with g = 0.
    """
    if grads is None:
        grads = {}
        for k, p in params.items():
            if p.grad is None:
                raise ValueError(f"parameter {k!r} has no gradient")
            grads[k] = p.grad
    missing = [k for k in params if k not in grads]
    if missing:
        raise ValueError(f"missing gradients for {missing}")
    opt.step += 1
    t = opt.step
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter {p.data.shape}")
        m = opt.m.get(k)
        if m is None:
            m = opt.m[k] = np.zeros_like(p.data)
            opt.v[k] = np.zeros_like(p.data)
        v = opt.v[k]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p.data -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def clip_grad_norm(params, max_norm):
    """Scale all grads so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [p.grad for p in params.values() if p.grad is not None]
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm and total > max_norm:
        s = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * s
    return total


def lr_schedule_update(opt, dev_losses, rate=1.8, mode="plateau", floor=LR_FLOOR):
    """Divide the lr by ``rate`` when the latest dev loss fails to beat the best before it.

    ``mode='epoch'`` divides every epoch instead. The lr never drops below ``floor``.
    """
    if not dev_losses:
        raise ValueError("lr schedule needs at least one completed epoch")
    latest = dev_losses[-1]
    if mode == "plateau":
        best_before = min(dev_losses[:-1], default=float("inf"))
        decay = not latest < best_before
    elif mode == "epoch":
        decay = True
    elif mode == "none":
        decay = False
    else:
        raise ValueError(f"unknown lr schedule mode {mode!r}")
    if decay:
        opt.lr = max(floor, opt.lr / rate)
    opt.best_dev = min(opt.best_dev, latest)
    return opt.lr
