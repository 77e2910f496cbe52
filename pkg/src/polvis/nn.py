"""Layers on top of the autograd engine.

Weights are drawn from an explicit `numpy.random.Generator`, so
construction order plus seed fully determines every parameter. Two init
schemes: "dcgan" (N(0, 0.02), for the normalized generator/discriminator
blocks) and "he" (N(0, sqrt(2/fan_in)), for the norm-free feature and
attribute networks whose activations would otherwise vanish with depth).
Biases start at zero. Layers that need noise (dropout) take the generator
at call time instead of owning one.
"""

from __future__ import annotations

import numpy as np

from polvis.autograd import Tensor, conv2d, transposed_conv2d

INIT_STD = 0.02


class Module:
    """Base with recursive parameter discovery over attribute order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{key}.{idx}."))
                    elif isinstance(item, Tensor):
                        out.append((f"{key}.{idx}", item))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    @property
    def frozen(self) -> bool:
        return all(not p.requires_grad for p in self.parameters())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values into parameters by name; shapes must match exactly."""
        for name, p in self.named_parameters():
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ValueError(f"parameter {name!r}: stored shape {src.shape} != model shape {p.data.shape}")
            p.data[...] = src.astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}


def _weight(rng: np.random.Generator, shape: tuple, fan_in: int, init: str, dtype) -> Tensor:
    if init == "dcgan":
        std = INIT_STD
    elif init == "he":
        std = float(np.sqrt(2.0 / fan_in))
    else:
        raise ValueError(f"unknown init scheme {init!r}")
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0,
                 bias: bool = True, rng: np.random.Generator = None, init: str = "dcgan", dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.weight = _weight(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel, init, dtype)
        self.bias = Tensor(np.zeros((1, out_ch, 1, 1), dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.weight, self.stride, self.padding)
        return out + self.bias if self.bias is not None else out


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0,
                 bias: bool = True, rng: np.random.Generator = None, init: str = "dcgan", dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.weight = _weight(rng, (in_ch, out_ch, kernel, kernel), in_ch * kernel * kernel, init, dtype)
        self.bias = Tensor(np.zeros((1, out_ch, 1, 1), dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = transposed_conv2d(x, self.weight, self.stride, self.padding)
        return out + self.bias if self.bias is not None else out


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, bias: bool = True,
                 rng: np.random.Generator = None, init: str = "dcgan", dtype=np.float32):
        self.weight = _weight(rng, (in_dim, out_dim), in_dim, init, dtype)
        self.bias = Tensor(np.zeros((out_dim,), dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class InstanceNorm2d(Module):
    """Per-sample, per-channel normalization over the spatial axes."""

    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        self.eps = eps
        self.gamma = Tensor(np.ones((1, channels, 1, 1), dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1), dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=(2, 3), keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=(2, 3), keepdims=True)
        normed = centered / (var + self.eps).sqrt()
        return normed * self.gamma + self.beta


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the caller owns the generator (train stream or a per-call seed)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return x * Tensor(mask)


def global_average_pool(x: Tensor) -> Tensor:
    """NCHW -> (N, C) mean over the spatial axes."""
    return x.mean(axis=(2, 3))
