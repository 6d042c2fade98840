"""Parameter-holding building blocks on top of the autodiff core."""
from __future__ import annotations

import math

import numpy as np

from .autodiff import ShapeError, Tensor, conv1d, layer_norm

__all__ = ["Module", "Linear", "Conv1d", "LayerNorm"]


class Module:
    """Base class giving submodule registration and dotted parameter names.

    Parameter names are stable across runs, which the checkpoint format
    relies on (tensors are stored sorted by name).
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def register(self, name: str, value) -> None:
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        else:
            raise TypeError(f"cannot register {type(value).__name__} as {name!r}")
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, mod in self._modules.items():
            out.update(mod.named_parameters(prefix + name + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Affine map y = x W + b with W of shape (in_features, out_features)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.register("weight", Tensor(_uniform(rng, in_features, (in_features, out_features)),
                                       requires_grad=True))
        if bias:
            self.register("bias", Tensor(np.zeros(out_features), requires_grad=True))
        else:
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"linear: input width {x.shape} does not match {self.in_features}")
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class Conv1d(Module):
    """Dilated temporal convolution over (T, C_in) sequences, length-preserving.

    Padding is symmetric "same" for odd kernel widths: (kw-1)*dilation/2 zeros
    on each side, so output length equals input length.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_width: int,
                 rng: np.random.Generator, dilation: int = 1, bias: bool = True):
        super().__init__()
        if kernel_width % 2 != 1:
            raise ShapeError(f"conv: same-padding requires odd kernel width, got {kernel_width}")
        self.dilation = dilation
        self.pad = (kernel_width - 1) * dilation // 2
        fan_in = kernel_width * in_channels
        self.register("weight", Tensor(
            _uniform(rng, fan_in, (kernel_width, in_channels, out_channels)),
            requires_grad=True))
        if bias:
            self.register("bias", Tensor(np.zeros(out_channels), requires_grad=True))
        else:
            self.bias = None

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, dilation=self.dilation,
                      pad_left=self.pad, pad_right=self.pad)


class LayerNorm(Module):
    """Row normalization over the last axis with learned scale and shift."""

    def __init__(self, width: int, eps: float = 1e-12):
        super().__init__()
        self.eps = eps
        self.register("gamma", Tensor(np.ones(width), requires_grad=True))
        self.register("beta", Tensor(np.zeros(width), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)
