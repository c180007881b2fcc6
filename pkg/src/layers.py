"""
Parameterised layers built on the tensor kernels.
"""
from typing import Dict, List, Optional

import numpy as np

from . import gradkernels as gk
from .gradkernels import Rng, Tensor


class Module:
    """Base class collecting named parameters from attributes."""

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for name in sorted(vars(self)):
            value = getattr(self, name)
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                params[key] = value
            elif isinstance(value, Module):
                params.update(value.parameters(prefix=f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.parameters(prefix=f"{key}.{i}."))
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise ValueError(f"Missing parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise gk.ShapeMismatch(f"{name}: {value.shape} vs {p.shape}")
            p.data = value.copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


def _param(values: np.ndarray) -> Tensor:
    return Tensor(values, requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: Rng, bias: bool = True,
                 scale: Optional[float] = None):
        scale = 1.0 / np.sqrt(in_dim) if scale is None else scale
        self.weight = _param(rng.normal((in_dim, out_dim), scale=scale))
        self.bias = _param(np.zeros(out_dim)) if bias else None
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x) -> Tensor:
        x = gk.as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise gk.ShapeMismatch(f"Linear expects {self.in_dim} features, got {x.shape}")
        if x.ndim == 1:
            out = gk.reshape(gk.matmul(gk.reshape(x, (1, self.in_dim)), self.weight), (self.out_dim,))
        else:
            out = gk.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


_ACTIVATIONS = {"gelu": gk.gelu, "relu": gk.relu, "tanh": gk.tanh}


class MLP(Module):
    """Stack of Linear layers with an activation between them."""

    def __init__(self, dims: List[int], rng: Rng, activation: str = "gelu",
                 bias: bool = True):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"Unknown activation: {activation}")
        self.layers = [
            Linear(a, b, rng.child(f"layer{i}"), bias=bias)
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        ]
        self.activation = activation

    def __call__(self, x, return_hidden: bool = False):
        act = _ACTIVATIONS[self.activation]
        hidden = []
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = act(x)
                hidden.append(x)
        return (x, hidden) if return_hidden else x


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = _param(np.ones(dim))
        self.shift = _param(np.zeros(dim))

    def __call__(self, x) -> Tensor:
        return gk.layer_norm(x) * self.gain + self.shift


class FiLM(Module):
    """Projects a condition vector to per-channel scale and shift."""

    def __init__(self, cond_dim: int, dim: int, rng: Rng, init_scale: float = 0.0):
        self.weight = _param(rng.normal((cond_dim, 2 * dim), scale=init_scale)
                             if init_scale > 0 else np.zeros((cond_dim, 2 * dim)))
        self.bias = _param(np.concatenate([np.ones(dim), np.zeros(dim)]))

    def __call__(self, x, cond) -> Tensor:
        return gk.film(x, cond, self.weight, self.bias)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: Rng, context_dim: Optional[int] = None,
                 bias: bool = True):
        context_dim = dim if context_dim is None else context_dim
        self.q = Linear(dim, dim, rng.child("q"), bias=bias)
        self.k = Linear(context_dim, dim, rng.child("k"), bias=bias)
        self.v = Linear(context_dim, dim, rng.child("v"), bias=bias)
        self.o = Linear(dim, dim, rng.child("o"), bias=bias)
        self.heads = heads

    def __call__(self, x, context=None) -> Tensor:
        context = x if context is None else context
        return self.o(gk.attention(self.q(x), self.k(context), self.v(context), self.heads))


class AttentionalFeatureFusion(Module):
    """Gate alpha in [0, 1] from local (per-frame) and global (pooled) context."""

    def __init__(self, channels: int, hidden: int, rng: Rng):
        self.local_mlp = MLP([channels, hidden, channels], rng.child("local"), activation="relu")
        self.global_mlp = MLP([channels, hidden, channels], rng.child("global"), activation="relu")

    def gate(self, global_view, local_view) -> Tensor:
        mixed = gk.as_tensor(global_view) + gk.as_tensor(local_view)
        pooled = gk.mean(mixed, axis=-2, keepdims=True)
        return gk.sigmoid(self.local_mlp(mixed) + self.global_mlp(pooled))


class StrideMerge(Module):
    """A 1x3 convolution with stride 3 along time over interleaved blocks."""

    def __init__(self, blocks: int = 3):
        self.kernel = _param(np.full(blocks, 1.0 / blocks))
        self.bias = _param(np.zeros(1))
        self.blocks = blocks

    def __call__(self, interleaved) -> Tensor:
        x = gk.as_tensor(interleaved)
        *lead, length, bands = x.shape
        if length % self.blocks:
            raise gk.ShapeMismatch(f"time length {length} not divisible by {self.blocks}")
        lead = tuple(lead)
        windows = gk.reshape(x, lead + (length // self.blocks, self.blocks, bands))
        weighted = windows * gk.reshape(self.kernel, (self.blocks, 1))
        return gk.tsum(weighted, axis=-2) + self.bias
