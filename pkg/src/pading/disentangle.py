"""Split features into semantic-related and semantic-unrelated parts.

``RelatedEncoder`` maps a feature to the semantic space and is trained as a
classifier against every semantic row. ``UnrelatedEncoder`` emits a diagonal
Gaussian pulled toward N(0, I). ``Decoder`` rebuilds the feature from the
concatenation of both parts. All losses are batch means.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimensionError, ParameterError
from .layers import MLP, Module

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass(frozen=True)
class DisentangleConfig:
    tau: float = 0.1
    related_hidden: int | None = None  # default 2 * d_x
    unrelated_hidden: int | None = None
    decoder_hidden: int | None = None
    d_u: int | None = None  # default d_a
    dropout: float = 0.1
    slope: float = 0.2

    def __post_init__(self):
        if self.tau <= 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must lie in [0, 1)")


class RelatedEncoder(MLP):
    pass


class UnrelatedEncoder(MLP):
    @property
    def d_u(self):
        return self.out.d_out // 2


class Decoder(MLP):
    pass


class Disentangler(Module):
    _children = ("related", "unrelated", "decoder")

    def __init__(self, d_x, d_a, cfg: DisentangleConfig = DisentangleConfig(), seed=0):
        rng = np.random.default_rng(seed)
        d_u = cfg.d_u or d_a
        self.d_x, self.d_a, self.d_u = d_x, d_a, d_u
        self.cfg = cfg
        self.related = RelatedEncoder(d_x, cfg.related_hidden or 2 * d_x, d_a, rng, cfg.slope, cfg.dropout)
        self.unrelated = UnrelatedEncoder(d_x, cfg.unrelated_hidden or 2 * d_x, 2 * d_u, rng,
                                          cfg.slope, cfg.dropout)
        self.decoder = Decoder(d_a + d_u, cfg.decoder_hidden or 2 * d_x, d_x, rng, cfg.slope, cfg.dropout)


def _check_input(enc, x):
    x = nx.lift(x)
    if x.shape[1] != enc.hidden.d_in:
        raise DimensionError(f"encoder expects {enc.hidden.d_in} features, got shape {x.shape}")
    return x


def encode_related(enc: RelatedEncoder, x, train_mode=False, rng=None):
    return enc(_check_input(enc, x), rng=rng, train=train_mode)


def related_loss(x_hat, labels, semantic, tau=0.1):
    """Cross-entropy of ``softmax(x_hat . a_k / tau)`` over all semantic rows."""
    semantic = getattr(semantic, "embeddings", semantic)
    logits = nx.matmul(x_hat, nx.Tensor(semantic).T)
    return nx.cross_entropy(logits, labels, temperature=tau)


def encode_unrelated(enc: UnrelatedEncoder, x, seed=None, train_mode=False, rng=None):
    """Return ``(mu, logvar, sample)``; the sample is ``mu`` in eval mode."""
    x = _check_input(enc, x)
    if rng is None and train_mode:
        rng = np.random.default_rng(seed)
    raw = enc(x, rng=rng, train=train_mode)
    d_u = enc.d_u
    mu, logvar = nx.split_cols(raw, d_u)
    logvar = nx.clip(logvar, LOGVAR_MIN, LOGVAR_MAX)
    if not train_mode:
        return mu, logvar, mu
    eps = rng.standard_normal(mu.shape)
    return mu, logvar, mu + nx.exp(logvar * 0.5) * eps


def unrelated_kl(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)): summed over dims, averaged over rows."""
    mu, logvar = nx.lift(mu), nx.lift(logvar)
    if mu.shape != logvar.shape:
        raise DimensionError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    n = mu.shape[0]
    per = nx.square(mu) + nx.exp(logvar) - logvar - 1.0
    return nx.sum_(per) * (0.5 / n)


def decode(dec: Decoder, x_hat, x_ddot, train_mode=False, rng=None):
    return dec(nx.concat_cols([x_hat, x_ddot]), rng=rng, train=train_mode)


def l1_mean(x, recon):
    x, recon = nx.lift(x), nx.lift(recon)
    if x.shape != recon.shape:
        raise DimensionError(f"reconstruction shape {recon.shape} != input {x.shape}")
    return nx.mean(nx.abs_(x - recon))


def reconstruct_loss(dec: Decoder, x, x_hat, x_ddot, train_mode=False, rng=None):
    return l1_mean(x, decode(dec, x_hat, x_ddot, train_mode, rng))


def disentangle_loss(l_related, l_unrelated, l_recon):
    return l_related + l_unrelated + l_recon


@dataclass
class DisentangleOutput:
    x_hat: nx.Tensor
    mu: nx.Tensor
    logvar: nx.Tensor
    l_related: nx.Tensor
    l_unrelated: nx.Tensor
    l_recon: nx.Tensor

    @property
    def total(self):
        return disentangle_loss(self.l_related, self.l_unrelated, self.l_recon)


def disentangle_pass(model: Disentangler, x, labels, semantic, train_mode=False, rng=None):
    """Encode, sample, decode and compute all three losses on one batch."""
    x = nx.lift(x)
    x_hat = encode_related(model.related, x, train_mode, rng)
    mu, logvar, x_ddot = encode_unrelated(model.unrelated, x, train_mode=train_mode, rng=rng)
    return DisentangleOutput(
        x_hat, mu, logvar,
        related_loss(x_hat, labels, semantic, model.cfg.tau),
        unrelated_kl(mu, logvar),
        reconstruct_loss(model.decoder, x, x_hat, x_ddot, train_mode, rng),
    )
