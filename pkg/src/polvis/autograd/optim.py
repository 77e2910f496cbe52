"""Bias-corrected Adam.

Defaults follow the training recipe used throughout: lr 0.0002 and
beta1 0.5 (beta2 0.999, eps 1e-8 are the usual values, left unstated by
the recipe). State is per-parameter first/second moments plus the shared
step counter, all exposed for checkpointing.
"""

from __future__ import annotations

import numpy as np

from polvis.autograd.tensor import ShapeError, Tensor


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 2e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """Apply one update from the accumulated gradients; skips params with no grad."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    # -- checkpoint support ----------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"t": np.asarray([self.t], dtype=np.float64)}
        for idx, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{idx}"] = m
            out[f"v{idx}"] = v
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"][0])
        for idx in range(len(self.params)):
            self.m[idx][...] = state[f"m{idx}"]
            self.v[idx][...] = state[f"v{idx}"]
