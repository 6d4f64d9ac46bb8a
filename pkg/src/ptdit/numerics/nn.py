"""Parameters, modules and the basic layers the model is assembled from."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor, layer_norm, matmul


@dataclass(frozen=True)
class Init:
    """Initialization scheme: ``normal`` (truncated at 2 std), ``zeros`` or ``ones``."""

    kind: str = "normal"
    std: float = 0.02

    def sample(self, shape: tuple, rng: np.random.Generator, dtype) -> np.ndarray:
        if self.kind == "zeros":
            return np.zeros(shape, dtype=dtype)
        if self.kind == "ones":
            return np.ones(shape, dtype=dtype)
        if self.kind == "normal":
            x = rng.standard_normal(shape)
            bad = np.abs(x) > 2.0
            while bad.any():
                x[bad] = rng.standard_normal(int(bad.sum()))
                bad = np.abs(x) > 2.0
            return (x * self.std).astype(dtype)
        raise ValueError(f"unknown init scheme {self.kind!r}")


ZEROS = Init("zeros")
ONES = Init("ones")


class Parameter(Tensor):
    """A trainable leaf. Storage is allocated on :meth:`materialize`.

    Until then only the shape is known, which lets billion-parameter presets be
    constructed and counted without touching memory.
    """

    def __init__(self, shape, init: Init = Init()):
        self._shape = tuple(int(s) for s in shape)
        self.init = init
        self.name = ""
        super().__init__(np.empty(0), requires_grad=True)
        self._data = None

    @property
    def data(self) -> np.ndarray:
        if self._data is None:
            raise RuntimeError(f"parameter {self.name or '<unnamed>'} is not materialized")
        return self._data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        value = np.asarray(value)
        if value.shape != self._shape:
            raise ValueError(f"{self.name}: expected shape {self._shape}, got {value.shape}")
        self._data = value

    @property
    def shape(self) -> tuple:
        return self._shape

    @property
    def size(self) -> int:
        return int(np.prod(self._shape, dtype=np.int64))

    @property
    def materialized(self) -> bool:
        return self._data is not None

    def materialize(self, rng: np.random.Generator, dtype=np.float64) -> None:
        self._data = self.init.sample(self._shape, rng, dtype)


class Module:
    """Container that discovers parameters and submodules from attributes."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            else:
                yield from value.named_parameters(prefix=name + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, Module]]:
        yield prefix.rstrip("."), self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(prefix=f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def init_params(self, seed: int = 0, dtype=np.float64) -> Module:
        """Materialize every parameter.

        Each tensor draws from its own generator keyed on (seed, name), so the
        result does not depend on construction order.
        """
        for name, p in self.named_parameters():
            p.name = name
            key = zlib.crc32(name.encode())
            p.materialize(np.random.default_rng([seed, key]), dtype)
        return self

    def name_parameters(self) -> Module:
        for name, p in self.named_parameters():
            p.name = name
        return self

    def astype(self, dtype) -> Module:
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            p.name = name
            p.data = np.array(state[name], copy=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, init: Init = Init(), kind: str = "proj"):
        self.weight = Parameter((d_in, d_out), init)
        self.bias = Parameter((d_out,), ZEROS) if bias else None
        self.kind = kind

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight, kind=self.kind)
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, affine: bool = True, eps: float = 1e-6):
        self.eps = eps
        self.gain = Parameter((dim,), ONES) if affine else None
        self.bias = Parameter((dim,), ZEROS) if affine else None

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, count: int, dim: int, init: Init = Init()):
        self.table = Parameter((count, dim), init)

    def forward(self, ids) -> Tensor:
        return self.table[np.asarray(ids, dtype=np.int64)]


class MLP(Module):
    """Two-layer feed-forward network with a GELU in between."""

    def __init__(self, dim: int, hidden: int, d_out: int | None = None, act: str = "gelu", out_init: Init = Init()):
        self.fc1 = Linear(dim, hidden, kind="mlp")
        self.fc2 = Linear(hidden, d_out or dim, init=out_init, kind="mlp")
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        h = h.gelu() if self.act == "gelu" else h.silu()
        return self.fc2(h)
