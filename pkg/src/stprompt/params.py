"""Named parameter tensors with owner tags and frozen flags."""

from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

OWNERS = ("prompt", "downstream", "dataset")


class Parameter(Tensor):
    """A leaf tensor registered in a :class:`ParameterStore`.

    ``owner`` is one of ``prompt``, ``downstream`` or ``dataset`` (dataset
    specific, trainable during prompt tuning). ``reinit`` marks dataset
    specific tensors that must be drawn afresh for every new target dataset,
    such as per-region embeddings.
    """

    __slots__ = ("name", "owner", "reinit", "init")

    def __init__(self, name: str, data: np.ndarray, owner: str, init: str = "zeros", reinit: bool = False):
        super().__init__(data, requires_grad=True)
        if owner not in OWNERS:
            raise ContractError(f"unknown owner tag {owner!r} for {name!r}; expected one of {OWNERS}")
        self.name = name
        self.owner = owner
        self.init = init
        self.reinit = reinit

    @property
    def frozen(self) -> bool:
        return not self.requires_grad

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self.requires_grad = not value

    def __repr__(self) -> str:
        state = "frozen" if self.frozen else "trainable"
        return f"Parameter({self.name!r}, shape={self.shape}, owner={self.owner}, {state})"


def init_array(rng: np.random.Generator, shape, scheme: str, dtype) -> np.ndarray:
    """``uniform``: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = shape[0]; ``zeros``."""
    if scheme == "zeros":
        return np.zeros(shape, dtype=dtype)
    if scheme == "uniform":
        fan_in = shape[0] if len(shape) > 1 else 1
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)
    raise ContractError(f"unknown init scheme {scheme!r}")


class ParameterStore:
    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray, owner: str, *, init: str = "zeros", reinit: bool = False) -> Parameter:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data, owner, init=init, reinit=reinit)
        self._params[name] = p
        return p

    def create(self, name: str, shape, owner: str, rng: np.random.Generator, init: str = "uniform",
               dtype=None, reinit: bool = False) -> Parameter:
        from .autodiff import get_default_dtype

        data = init_array(rng, tuple(shape), init, dtype or get_default_dtype())
        return self.add(name, data, owner, init=init, reinit=reinit)

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self, owner: str | None = None) -> list[str]:
        return [n for n, p in self._params.items() if owner is None or p.owner == owner]

    def replace(self, name: str, data: np.ndarray) -> None:
        """Swap in new values for ``name`` (shape may change, e.g. re-initialisation)."""
        p = self._params[name]
        p.data = np.array(data, dtype=p.data.dtype)
        p.grad = None

    # -- freezing ----------------------------------------------------------
    def set_trainable(self, owners) -> None:
        """Freeze every parameter whose owner is not in ``owners``."""
        owners = set(owners)
        for p in self._params.values():
            p.frozen = p.owner not in owners

    def unfreeze_all(self) -> None:
        self.set_trainable(OWNERS)

    def trainable(self) -> list[str]:
        return [n for n, p in self._params.items() if not p.frozen]

    def frozen_names(self) -> list[str]:
        return [n for n, p in self._params.items() if p.frozen]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    # -- bookkeeping -------------------------------------------------------
    def count(self, owner: str | None = None) -> int:
        return sum(p.size for p in self._params.values() if owner is None or p.owner == owner)

    def digest(self, name: str) -> str:
        p = self._params[name]
        h = hashlib.sha256()
        h.update(str(p.data.dtype).encode())
        h.update(str(p.shape).encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def digests(self, names=None) -> dict[str, str]:
        return {n: self.digest(n) for n in (self._params if names is None else names)}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for n, v in values.items():
            self._params[n].data[...] = v

    def astype(self, dtype) -> None:
        for p in self._params.values():
            p.data = p.data.astype(dtype)
            p.grad = None
