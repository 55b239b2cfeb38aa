"""Parameter containers for the model components."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class Module:
    """Walks attributes to find parameters, sub-modules and running buffers.

    Buffers are plain numpy arrays registered through ``register_buffer``;
    they are persisted with the parameters but never receive gradients.
    """

    training: bool = True

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self.__dict__.setdefault("_buffers", [])
        if name not in self._buffers:
            self._buffers.append(name)
        setattr(self, name, np.asarray(value, dtype=np.float64))

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Tensor, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            else:
                yield from value.named_parameters(name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", []):
            yield f"{prefix}{name}", getattr(self, name)
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def set_buffer(self, dotted: str, value: np.ndarray) -> None:
        *path, leaf = dotted.split(".")
        obj = self
        i = 0
        while i < len(path):
            part = path[i]
            nxt = getattr(obj, part)
            if isinstance(nxt, (list, tuple)):
                nxt = nxt[int(path[i + 1])]
                i += 1
            obj = nxt
            i += 1
        obj.register_buffer(leaf, value)

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def param(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def conv_weight(rng: np.random.Generator, out_ch: int, in_ch: int, k: int, gain: float = 2.0) -> Tensor:
    fan_in = in_ch * k * k
    return param(rng.standard_normal((out_ch, in_ch, k, k)) * np.sqrt(gain / fan_in))
