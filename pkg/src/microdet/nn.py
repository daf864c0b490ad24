"""Parameter registry and the small layer zoo the detector is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .errors import ConfigError, StateError
from .tensor import Parameter, Tensor


class Module:
    """Base class tracking child modules and parameters by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        params = self.__dict__.get("_params")
        modules = self.__dict__.get("_modules")
        if params is None or modules is None:
            raise ConfigError(f"{type(self).__name__}.__init__ must call super().__init__() first")
        params.pop(name, None)
        modules.pop(name, None)
        if isinstance(value, Parameter):
            params[name] = value
        elif isinstance(value, Module):
            modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, param in self._params.items():
            full = f"{prefix}{name}"
            param.name = full
            yield full, param
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> Iterator[Parameter]:
        for _, param in self.named_parameters():
            yield param

    def registry(self) -> dict[str, Parameter]:
        """Name -> Parameter map; raises if any tensor is registered twice."""
        out: dict[str, Parameter] = {}
        seen: set[int] = set()
        for name, param in self.named_parameters():
            if name in out or id(param) in seen:
                raise ConfigError(f"duplicate parameter registration: {name}")
            out[name] = param
            seen.add(id(param))
        return out

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    """Sequence container whose children participate in the registry."""

    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, index):
        return self._items[index]

    def __len__(self):
        return len(self._items)


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, *, stride: int = 1,
                 padding: int = 0, bias: bool = True, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(he_normal(rng, (out_ch, in_ch, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    """Per-channel batch normalization with momentum-tracked running stats.

    Train mode normalizes by batch statistics and updates the running
    estimates (unbiased variance, torch convention); eval mode requires at
    least one train batch to have populated them.
    """

    def __init__(self, channels: int, *, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = Parameter(np.zeros(channels), trainable=False)
        self.running_var = Parameter(np.ones(channels), trainable=False)
        self.batches_seen = Parameter(np.zeros(1), trainable=False)

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            out, mean, var = ops.batchnorm2d_train(x, self.gamma, self.beta, self.eps)
            n, _, h, w = x.shape
            m = n * h * w
            unbiased = var * (m / (m - 1))
            mom = self.momentum
            self.running_mean.data *= 1.0 - mom
            self.running_mean.data += mom * mean
            self.running_var.data *= 1.0 - mom
            self.running_var.data += mom * unbiased
            self.batches_seen.data += 1.0
            return out
        if self.batches_seen.data[0] == 0:
            raise StateError("batchnorm eval requested before any train batch populated stats")
        return ops.batchnorm2d_eval(
            x, self.gamma, self.beta, self.running_mean.data, self.running_var.data, self.eps
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, *, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(he_normal(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)


class ConvBlock(Module):
    """conv -> batchnorm -> activation, the detector's basic unit.

    The convolution is bias-free (the norm's shift absorbs it); the
    activation defaults to swish.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, *, stride: int = 1,
                 act: str = "swish", rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, kernel, stride=stride,
                           padding=kernel // 2, bias=False, rng=rng)
        self.norm = BatchNorm2d(out_ch)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        out = self.norm(self.conv(x))
        if self.act == "none":
            return out
        return ops.activation(out, self.act)
