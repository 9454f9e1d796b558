from __future__ import annotations

from typing import Iterator

import numpy as np

from .numeric import Parameter


class Module:
    """Owns Parameters and child Modules; names are fixed at construction."""

    def __init__(self, prefix: str):
        self.prefix = prefix

    def param(self, name: str, values: np.ndarray) -> Parameter:
        full = f"{self.prefix}.{name}" if self.prefix else name
        return Parameter(values, name=full)

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        for value in vars(self).values():
            yield from _walk(value)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def he_normal(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _walk(value) -> Iterator[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield value.name, value
    elif isinstance(value, Module):
        yield from value.named_parameters()
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _walk(item)
