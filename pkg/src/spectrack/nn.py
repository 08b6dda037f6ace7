"""Parameter containers and initialisers shared by the network modules.

Containers are plain dataclasses holding Tensors; `named_parameters` walks
any nesting of dataclasses, lists and dicts and yields dotted names, which
is also how checkpoints get their keys.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError


def trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
    """Normal(0, std) clipped to two standard deviations."""
    vals = rng.normal(0.0, std, size=shape)
    return np.clip(vals, -2.0 * std, 2.0 * std)


def param(values, requires_grad: bool = True) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=requires_grad)


@dataclass
class AffineParams:
    """Weight [d_in, d_out] and bias [d_out] for x @ w + b."""

    w: Tensor
    b: Tensor

    @staticmethod
    def init(rng: np.random.Generator, d_in: int, d_out: int, std: float = 0.02) -> "AffineParams":
        return AffineParams(w=param(trunc_normal(rng, (d_in, d_out), std)), b=param(np.zeros(d_out)))

    @staticmethod
    def identity(d: int) -> "AffineParams":
        return AffineParams(w=param(np.eye(d)), b=param(np.zeros(d)))

    @staticmethod
    def zeros(d_in: int, d_out: int) -> "AffineParams":
        return AffineParams(w=param(np.zeros((d_in, d_out))), b=param(np.zeros(d_out)))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.affine(x, self.w, self.b)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @staticmethod
    def init(d: int) -> "LayerNormParams":
        return LayerNormParams(gamma=param(np.ones(d)), beta=param(np.zeros(d)))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


@dataclass
class MlpParams:
    """Two affine maps around a GELU."""

    fc1: AffineParams
    fc2: AffineParams

    @staticmethod
    def init(rng: np.random.Generator, d: int, hidden: int) -> "MlpParams":
        return MlpParams(fc1=AffineParams.init(rng, d, hidden), fc2=AffineParams.init(rng, hidden, d))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))


@dataclass
class RouterParams:
    """Pooled-context MLP producing softmax mixing weights over a filter set."""

    fc1: AffineParams
    fc2: AffineParams

    @property
    def n_filters(self) -> int:
        return self.b_out.shape[0]

    @property
    def b_out(self) -> Tensor:
        return self.fc2.b

    @staticmethod
    def init(rng: np.random.Generator, d: int, hidden: int, n_filters: int) -> "RouterParams":
        return RouterParams(
            fc1=AffineParams.init(rng, d, hidden),
            fc2=AffineParams.init(rng, hidden, n_filters),
        )

    @staticmethod
    def uniform(d: int, hidden: int, n_filters: int) -> "RouterParams":
        """Zero weights: every input routes to the uniform mixture."""
        return RouterParams(fc1=AffineParams.zeros(d, hidden), fc2=AffineParams.zeros(hidden, n_filters))

    def __call__(self, pooled: Tensor) -> Tensor:
        if pooled.ndim != 2 or pooled.shape[0] != 1:
            raise DimensionError(f"router expects pooled context [1, d], got {pooled.shape}")
        logits = self.fc2(ad.gelu(self.fc1(pooled)))
        return ad.reshape(ad.softmax(logits), (logits.shape[1],))


@dataclass
class AttentionParams:
    to_q: AffineParams
    to_k: AffineParams
    to_v: AffineParams
    out: AffineParams
    heads: int

    @staticmethod
    def init(rng: np.random.Generator, d: int, heads: int) -> "AttentionParams":
        return AttentionParams(
            to_q=AffineParams.init(rng, d, d),
            to_k=AffineParams.init(rng, d, d),
            to_v=AffineParams.init(rng, d, d),
            out=AffineParams.init(rng, d, d),
            heads=heads,
        )

    def __call__(self, x: Tensor) -> Tensor:
        mixed = ad.attention(self.to_q(x), self.to_k(x), self.to_v(x), self.heads)
        return self.out(mixed)


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield (dotted_name, tensor) for every Tensor nested in obj."""
    if isinstance(obj, Tensor):
        yield prefix or "param", obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for field in dataclasses.fields(obj):
            child = getattr(obj, field.name)
            name = f"{prefix}.{field.name}" if prefix else field.name
            yield from named_parameters(child, name)
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            name = f"{prefix}.{i}" if prefix else str(i)
            yield from named_parameters(child, name)
    elif isinstance(obj, dict):
        for key, child in obj.items():
            name = f"{prefix}.{key}" if prefix else str(key)
            yield from named_parameters(child, name)
    # ints, floats, strings, None and ndarray constants carry no parameters


def parameter_list(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj) if t.requires_grad]


def parameter_sites(obj, prefix: str = ""):
    """Yield (name, tensor, setter) so a tensor can be swapped in place.

    The setter rebinds the container slot the tensor lives in, which lets
    finite-difference checks substitute probe tensors without rebuilding
    the unit. Only requires_grad tensors are yielded.
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for field in dataclasses.fields(obj):
            child = getattr(obj, field.name)
            name = f"{prefix}.{field.name}" if prefix else field.name
            if isinstance(child, Tensor):
                if child.requires_grad:
                    yield name, child, (lambda v, o=obj, a=field.name: setattr(o, a, v))
            else:
                yield from parameter_sites(child, name)
    elif isinstance(obj, list):
        for i, child in enumerate(obj):
            name = f"{prefix}.{i}" if prefix else str(i)
            if isinstance(child, Tensor):
                if child.requires_grad:
                    yield name, child, (lambda v, o=obj, k=i: o.__setitem__(k, v))
            else:
                yield from parameter_sites(child, name)
    elif isinstance(obj, dict):
        for key, child in obj.items():
            name = f"{prefix}.{key}" if prefix else str(key)
            if isinstance(child, Tensor):
                if child.requires_grad:
                    yield name, child, (lambda v, o=obj, k=key: o.__setitem__(k, v))
            else:
                yield from parameter_sites(child, name)
