"""Adam optimizer with bias correction and optional decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    """Per-parameter moment estimates plus shared hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam over a named parameter dict, with per-name learning-rate scales.

    Scales let one parameter group (e.g. the feature extractor) train at a
    multiple of the global rate without a second optimizer.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.state = AdamState(lr, beta1, beta2, eps, weight_decay)
        self.lr_scale: dict[str, float] = {}
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def set_lr(self, lr: float) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.state.lr = lr

    def set_scale(self, prefix: str, scale: float) -> None:
        """Apply a learning-rate multiplier to every name under ``prefix``."""
        for name in self.params:
            if name.startswith(prefix):
                self.lr_scale[name] = scale

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        s = self.state
        s.step_count += 1
        bc1 = 1.0 - s.beta1 ** s.step_count
        bc2 = 1.0 - s.beta2 ** s.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"adam: grad shape {g.shape} != param shape {p.data.shape} for {name}"
                )
            m = s.m[name]
            v = s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            lr = s.lr * self.lr_scale.get(name, 1.0)
            update = (m / bc1) / (np.sqrt(v / bc2) + s.eps)
            if s.weight_decay:
                update = update + s.weight_decay * p.data
            p.data -= lr * update

    def moments(self) -> dict[str, np.ndarray]:
        """Moment tensors under checkpoint-friendly names."""
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.state.m[name]
            out[f"adam.v.{name}"] = self.state.v[name]
        return out

    def load_moments(self, blobs: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            for kind, store in (("m", self.state.m), ("v", self.state.v)):
                key = f"adam.{kind}.{name}"
                if key in blobs:
                    if blobs[key].shape != store[name].shape:
                        raise ShapeError(f"adam: checkpoint moment {key} shape mismatch")
                    store[name] = blobs[key].copy()
        self.state.step_count = step_count
