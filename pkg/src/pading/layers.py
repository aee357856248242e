"""Small parameter containers: linear layers and one-hidden-layer MLPs."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Param


class Module:
    """Anything owning Params. Subclasses list children in ``_children``."""

    _children: tuple = ()

    def named_params(self, prefix=""):
        out = {}
        for name in self._children:
            child = getattr(self, name)
            key = f"{prefix}{name}"
            if isinstance(child, Param):
                out[key] = child
            elif isinstance(child, Module):
                out.update(child.named_params(key + "."))
            else:  # list of modules/params
                for i, item in enumerate(child):
                    if isinstance(item, Param):
                        out[f"{key}.{i}"] = item
                    else:
                        out.update(item.named_params(f"{key}.{i}."))
        return out

    def params(self):
        return list(self.named_params().values())

    def load_arrays(self, arrays: dict, prefix=""):
        for name, p in self.named_params(prefix).items():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing {name}")
            if arrays[name].shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arrays[name].shape} != {p.data.shape}")
            p.data[...] = arrays[name]


def scaled_gaussian(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.standard_normal(shape) / np.sqrt(fan_in)


class Linear(Module):
    _children = ("weight", "bias")

    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = Param(scaled_gaussian(rng, d_in, (d_in, d_out)))
        self.bias = Param(np.zeros((1, d_out))) if bias else None
        if not bias:
            self._children = ("weight",)

    def __call__(self, x):
        out = nx.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out

    @property
    def d_in(self):
        return self.weight.shape[0]

    @property
    def d_out(self):
        return self.weight.shape[1]


class MLP(Module):
    """Linear -> LeakyReLU -> dropout -> Linear."""

    _children = ("hidden", "out")

    def __init__(self, d_in, d_hidden, d_out, rng, slope=0.2, dropout=0.0):
        self.hidden = Linear(d_in, d_hidden, rng)
        self.out = Linear(d_hidden, d_out, rng)
        self.slope = slope
        self.dropout = dropout

    def __call__(self, x, rng=None, train=False):
        h = nx.leaky_relu(self.hidden(x), self.slope)
        h = nx.dropout(h, self.dropout, rng, train)
        return self.out(h)
