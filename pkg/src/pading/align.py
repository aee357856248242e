"""Relational alignment between semantic-related features and semantic embeddings.

For every anchor row the cosine similarities to its eligible partners are
turned into a distribution with a temperature softmax, once in feature space
and once in semantic space, and the two are compared with KL(feature || semantic).
Intra-group pairs share an origin (real-seen, synthetic-seen, synthetic-unseen);
inter-group pairs do not.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DegenerateInputError, DimensionError, ParameterError

REAL_SEEN, SYN_SEEN, SYN_UNSEEN = "real-seen", "synthetic-seen", "synthetic-unseen"
ORIGINS = (REAL_SEEN, SYN_SEEN, SYN_UNSEEN)


@dataclass(frozen=True)
class AlignConfig:
    tau: float = 0.1
    include_intra: bool = True
    include_inter: bool = True
    epsilon_norm: float = 1e-12

    def __post_init__(self):
        if self.tau <= 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not (self.include_intra or self.include_inter):
            raise ParameterError("enable at least one of intra/inter alignment")


@dataclass
class AlignBatch:
    features: object  # Tensor or array, (n, d)
    labels: np.ndarray
    origins: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        self.origins = np.asarray(self.origins, dtype=object)
        n = nx.lift(self.features).shape[0]
        if len(self.labels) != n or len(self.origins) != n:
            raise DimensionError(f"{n} feature rows, {len(self.labels)} labels, {len(self.origins)} origins")
        unknown = set(self.origins.tolist()) - set(ORIGINS)
        if unknown:
            raise ParameterError(f"unknown origins {sorted(unknown)}")


def cosine_matrix(m, epsilon_norm=1e-12):
    m = nx.lift(m)
    norms = np.sqrt((m.data ** 2).sum(axis=1))
    low = np.flatnonzero(norms < epsilon_norm)
    if low.size:
        raise DegenerateInputError(f"row {int(low[0])} has norm {norms[low[0]]:.3g} < {epsilon_norm}")
    unit = m / nx.sqrt(nx.sum_(nx.square(m), axis=1))
    return nx.matmul(unit, nx.transpose(unit))


def pair_mask(origins, labels=None, cfg: AlignConfig = AlignConfig()) -> np.ndarray:
    _, codes = np.unique(np.asarray(origins, dtype=str), return_inverse=True)
    same = codes[:, None] == codes[None, :]
    mask = np.zeros(same.shape, dtype=bool)
    if cfg.include_intra:
        mask |= same
    if cfg.include_inter:
        mask |= ~same
    np.fill_diagonal(mask, False)
    return mask


def alignment_loss(batch: AlignBatch, semantic, cfg: AlignConfig = AlignConfig()):
    semantic = getattr(semantic, "embeddings", semantic)
    x = nx.lift(batch.features)
    n = x.shape[0]
    if n < 2:
        raise DegenerateInputError("alignment needs at least two rows")
    if batch.labels.min() < 0 or batch.labels.max() >= len(semantic):
        raise IndexError("alignment label out of range")
    mask = pair_mask(batch.origins, batch.labels, cfg)
    anchors = mask.any(axis=1)
    if not anchors.any():
        raise DegenerateInputError("no anchor has an eligible partner under the pair mask")

    sem = semantic[batch.labels]
    sem_cos = cosine_matrix(sem, cfg.epsilon_norm).data
    log_q = nx.masked_log_softmax_rows(sem_cos, mask, cfg.tau).data

    log_p = nx.masked_log_softmax_rows(cosine_matrix(x, cfg.epsilon_norm), mask, cfg.tau)
    p = nx.exp(log_p) * mask
    kl_terms = p * (log_p - log_q)
    return nx.sum_(kl_terms) * (1.0 / anchors.sum())
