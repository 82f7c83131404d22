"""Named parameter tensors with paired gradients."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)


class ParamStore:
    """Ordered map name -> (value, grad). Single precision by default.

    Layers call ensure() at construction time: with an init function the
    parameter is created (deterministically, from the caller's rng), without
    one it must already exist, which is how checkpoint-loaded stores are
    rebound to fresh network objects.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._items: dict[str, Param] = {}

    def ensure(self, name: str, shape: tuple[int, ...], init=None) -> Param:
        if name in self._items:
            p = self._items[name]
            if p.value.shape != tuple(shape):
                raise ShapeError(
                    f"parameter {name!r} has shape {p.value.shape}, expected {shape}"
                )
            return p
        if init is None:
            raise KeyError(f"parameter {name!r} missing from store")
        value = np.ascontiguousarray(init(tuple(shape)), dtype=self.dtype)
        if value.shape != tuple(shape):
            raise ShapeError(f"init for {name!r} produced shape {value.shape}")
        p = Param(value)
        self._items[name] = p
        return p

    def zero_grads(self):
        for p in self._items.values():
            p.grad[...] = 0.0

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.value for k, p in self._items.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self._items.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore(self.dtype)
        for k, p in self._items.items():
            q = Param(p.value.copy())
            q.grad[...] = p.grad
            out._items[k] = q
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for k, p in self._items.items():
            out._items[k] = Param(p.value.astype(dtype))
        return out

    def load_values(self, values: dict[str, np.ndarray]):
        """Replace parameter contents in place; names and shapes must match."""
        missing = set(self._items) - set(values)
        extra = set(values) - set(self._items)
        if missing or extra:
            raise KeyError(f"store mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, p in self._items.items():
            if values[k].shape != p.value.shape:
                raise ShapeError(f"parameter {k!r}: shape {values[k].shape} != {p.value.shape}")
            p.value[...] = values[k]

    def allclose(self, other: "ParamStore", rtol=0.0, atol=0.0) -> bool:
        if self.names() != other.names():
            return False
        return all(
            np.allclose(self[k].value, other[k].value, rtol=rtol, atol=atol)
            for k in self.names()
        )

    def names(self) -> list[str]:
        return list(self._items.keys())

    def items(self):
        return self._items.items()

    def __getitem__(self, name: str) -> Param:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)


def kaiming_uniform(rng: np.random.Generator):
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in = prod of all but the last dim."""

    def init(shape):
        fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return init


def zeros_init(shape):
    return np.zeros(shape)


def ones_init(shape):
    return np.ones(shape)
