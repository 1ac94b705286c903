"""A small module tree: parameters are leaf tensors, buffers are numpy arrays."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..autodiff import Tensor, get_default_dtype
from ..autodiff import ops


class Module:
    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        setattr(self, name, module)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in (*params, *buffers) if k not in state]
        unexpected = [k for k in state if k not in params and k not in buffers]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in params.items():
            if name in state:
                src = np.asarray(state[name])
                if src.shape != p.shape:
                    raise ValueError(f"{name}: shape {src.shape} does not match {p.shape}")
                p.data[...] = src
        for name, b in buffers.items():
            if name in state:
                b[...] = state[name]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Sequential(Module):
    def __init__(self, *modules: Module) -> None:
        super().__init__()
        for i, m in enumerate(modules):
            self.add_module(str(i), m)

    def __len__(self) -> int:
        return len(self._children)

    def __iter__(self):
        return iter(self._children.values())

    def __getitem__(self, i: int) -> Module:
        return list(self._children.values())[i]

    def forward(self, x):
        for m in self._children.values():
            x = m(x)
        return x


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data.astype(get_default_dtype()), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel_size: int, stride: int = 1, padding: int = 0,
                 groups: int = 1, bias: bool = True, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        if cin % groups or cout % groups:
            raise ValueError(f"channels {cin}->{cout} not divisible by groups={groups}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cin, self.cout, self.k = cin, cout, kernel_size
        self.stride, self.padding, self.groups = stride, padding, groups
        fan_in = cin // groups * kernel_size * kernel_size
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = _param(rng.uniform(-bound, bound, (cout, cin // groups, kernel_size, kernel_size)))
        self.bias = _param(rng.uniform(-bound, bound, cout)) if bias else None

    def zero_(self) -> None:
        self.weight.data[...] = 0.0
        if self.bias is not None:
            self.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class LayerNorm2d(Module):
    """Channel-wise layer norm at every pixel with a per-channel affine."""

    def __init__(self, c: int, eps: float = 1e-6, axes=(1,)) -> None:
        super().__init__()
        self.eps = eps
        self.axes = tuple(axes)
        self.weight = _param(np.ones((1, c, 1, 1)))
        self.bias = _param(np.zeros((1, c, 1, 1)))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps, self.axes)


class BatchNorm2d(Module):
    def __init__(self, c: int, eps: float = 1e-5, momentum: float = 0.9) -> None:
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = _param(np.ones(c))
        self.bias = _param(np.zeros(c))
        self.register_buffer("running_mean", np.zeros(c, dtype=get_default_dtype()))
        self.register_buffer("running_var", np.ones(c, dtype=get_default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            return ops.batch_norm_train(x, self.weight, self.bias, self.running_mean, self.running_var,
                                        self.eps, self.momentum)
        return ops.batch_norm_infer(x, self.running_mean, self.running_var, self.weight, self.bias, self.eps)
