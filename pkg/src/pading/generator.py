"""Primitive cross-modal generator and the multi-bandwidth MMD objective.

A bank of learnable primitives is refined by one self-attention pass. Semantic
embeddings then query the bank through ``layer_count`` cross-attention blocks:

    h_l = W1_l( softmax(Q_l K_l^T / sqrt(d_k)) V_l + s + z )

where ``s`` is the semantic embedding projected to ``d_k``, ``z`` is Gaussian
noise, ``Q_1 = s`` and ``Q_l`` projects ``h_{l-1}`` for later blocks. The last
``W1`` maps to the feature dimension.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimensionError, ParameterError
from .layers import MLP, Linear, Module
from .numerics import Param

DEFAULT_BANDWIDTHS = (2.0, 5.0, 10.0, 20.0, 40.0, 60.0)


@dataclass(frozen=True)
class MmdConfig:
    bandwidths: tuple = DEFAULT_BANDWIDTHS

    def __post_init__(self):
        if not self.bandwidths:
            raise ParameterError("at least one bandwidth is required")
        if any(s <= 0 for s in self.bandwidths):
            raise ParameterError(f"bandwidths must be positive: {self.bandwidths}")


class PrimitiveBank(Module):
    _children = ("primitives",)

    def __init__(self, n_primitives, d_k, rng):
        self.primitives = Param(rng.standard_normal((n_primitives, d_k)))

    @property
    def shape(self):
        return self.primitives.shape


class SelfAttention(Module):
    _children = ("query", "key", "value")

    def __init__(self, d_k, rng):
        self.query = Linear(d_k, d_k, rng, bias=False)
        self.key = Linear(d_k, d_k, rng, bias=False)
        self.value = Linear(d_k, d_k, rng, bias=False)


class CrossBlock(Module):
    _children = ("query", "key", "value", "out")

    def __init__(self, d_q, d_k, d_out, rng):
        # the first block has no query projection; its query is the projected semantics
        self.query = Linear(d_q, d_k, rng) if d_q else None
        self.key = Linear(d_k, d_k, rng, bias=False)
        self.value = Linear(d_k, d_k, rng, bias=False)
        self.out = Linear(d_k, d_out, rng)
        if not d_q:
            self._children = ("key", "value", "out")


class GeneratorModel(Module):
    _children = ("bank", "self_attn", "semantic", "blocks")

    def __init__(self, d_a, d_k, d_x, n_primitives=400, layer_count=3, seed=0):
        for name, v in (("d_a", d_a), ("d_k", d_k), ("d_x", d_x), ("n_primitives", n_primitives),
                        ("layer_count", layer_count)):
            if int(v) < 1:
                raise ParameterError(f"{name} must be >= 1, got {v}")
        rng = np.random.default_rng(seed)
        self.d_a, self.d_k, self.d_x = d_a, d_k, d_x
        self.layer_count = layer_count
        self.bank = PrimitiveBank(n_primitives, d_k, rng)
        self.self_attn = SelfAttention(d_k, rng)
        self.semantic = Linear(d_a, d_k, rng)
        self.blocks = [CrossBlock(0 if i == 0 else d_k, d_k, d_x if i == layer_count - 1 else d_k, rng)
                       for i in range(layer_count)]

    @property
    def noise_dim(self):
        return self.d_k

    @property
    def n_primitives(self):
        return self.bank.shape[0]

    def sample_noise(self, m, rng):
        return rng.standard_normal((m, self.d_k))

    def __call__(self, semantic, noise):
        return generate(self, semantic, noise)


def init_generator(d_a, d_k, d_x, n_primitives=400, layer_count=3, seed=0) -> GeneratorModel:
    return GeneratorModel(d_a, d_k, d_x, n_primitives, layer_count, seed)


def attention_weights(query, key):
    d_k = key.shape[1]
    return nx.softmax_rows(nx.matmul(query, nx.transpose(key)) / np.sqrt(d_k))


def primitive_self_attention(model: GeneratorModel, return_weights=False):
    p = model.bank.primitives
    sa = model.self_attn
    weights = attention_weights(sa.query(p), sa.key(p))
    refined = p + nx.matmul(weights, sa.value(p))
    return (refined, weights) if return_weights else refined


def generate(model: GeneratorModel, semantic, noise):
    """Synthesize features for semantic rows ``semantic`` (m x d_a) with noise ``noise`` (m x d_k)."""
    semantic, noise = nx.lift(semantic), nx.lift(noise)
    m = semantic.shape[0]
    if semantic.shape[1] != model.d_a:
        raise DimensionError(f"semantic batch has dim {semantic.shape[1]}, model expects {model.d_a}")
    if noise.shape != (m, model.d_k):
        raise DimensionError(f"noise shape {noise.shape} does not match ({m}, {model.d_k})")
    bank = primitive_self_attention(model)
    s = model.semantic(semantic)
    residual = s + noise
    h = s
    for i, block in enumerate(model.blocks):
        q = h if block.query is None else block.query(h)
        attended = nx.matmul(attention_weights(q, block.key(bank)), block.value(bank))
        h = block.out(attended + residual)
    return h


class GmmnBaselineModel(Module):
    """Noise-concatenated MLP generator ``[a ; z] -> hidden -> d_x``."""

    _children = ("mlp",)

    def __init__(self, d_a, d_z, d_x, hidden=None, seed=0):
        rng = np.random.default_rng(seed)
        self.d_a, self.d_z, self.d_x = d_a, d_z, d_x
        self.mlp = MLP(d_a + d_z, hidden or 2 * d_x, d_x, rng)

    @property
    def noise_dim(self):
        return self.d_z

    def sample_noise(self, m, rng):
        return rng.standard_normal((m, self.d_z))

    def __call__(self, semantic, noise):
        semantic, noise = nx.lift(semantic), nx.lift(noise)
        if semantic.shape[1] != self.d_a or noise.shape != (semantic.shape[0], self.d_z):
            raise DimensionError(f"bad shapes {semantic.shape} / {noise.shape}")
        return self.mlp(nx.concat_cols([semantic, noise]))


# ----------------------------------------------------------------------- MMD

def gaussian_kernel(f, f_prime, sigma) -> float:
    if sigma <= 0:
        raise ParameterError(f"bandwidth must be positive, got {sigma}")
    f, f_prime = np.asarray(f, dtype=float), np.asarray(f_prime, dtype=float)
    if f.shape != f_prime.shape:
        raise DimensionError(f"kernel inputs differ in shape: {f.shape} vs {f_prime.shape}")
    return float(np.exp(-np.sum((f - f_prime) ** 2) / (2.0 * sigma ** 2)))


def _kernel_mean(dist, bandwidths):
    total = None
    for sigma in bandwidths:
        term = nx.mean(nx.exp(dist * (-1.0 / (2.0 * sigma ** 2))))
        total = term if total is None else total + term
    return total


def mmd_loss(x_real, x_syn, cfg: MmdConfig = MmdConfig()):
    """Biased MMD^2 between two sample sets, summed over bandwidths (a 1x1 Tensor)."""
    x_real, x_syn = nx.lift(x_real), nx.lift(x_syn)
    if x_real.shape[0] == 0 or x_syn.shape[0] == 0:
        raise ParameterError("mmd_loss needs non-empty sample sets")
    if x_real.shape[1] != x_syn.shape[1]:
        raise DimensionError(f"mmd_loss: feature dims differ {x_real.shape} vs {x_syn.shape}")
    rr = _kernel_mean(nx.sqdist(x_real, x_real), cfg.bandwidths)
    ss = _kernel_mean(nx.sqdist(x_syn, x_syn), cfg.bandwidths)
    rs = _kernel_mean(nx.sqdist(x_real, x_syn), cfg.bandwidths)
    return rr + ss - 2.0 * rs
