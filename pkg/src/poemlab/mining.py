"""Outlier selection: Thompson-sampled boundary scores plus greedy and random baselines."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyPool
from .posterior import sample_weights


class SamplerKind(str, Enum):
    THOMPSON = "thompson"
    GREEDY_MEAN = "greedy_mean"
    RANDOM = "random"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"greedy": cls.GREEDY_MEAN, "poem": cls.THOMPSON}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown sampler {value!r}; expected one of "
                             f"{', '.join(k.value for k in cls)}") from None


@dataclass
class MinedSet:
    indices: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.indices)

    def summary(self):
        if len(self.scores) == 0:
            return {"mean": None, "min": None, "max": None}
        return {"mean": float(np.mean(self.scores)), "min": float(np.min(self.scores)),
                "max": float(np.max(self.scores))}


def boundary_score_est(w, phi):
    """-|w^T phi|; phi may be a single vector or an (n, m) matrix of rows."""
    return -np.abs(np.asarray(phi, dtype=np.float64) @ np.asarray(w, dtype=np.float64))


def _rank_by_score(scores):
    # stable sort on -score: largest score first, ties by ascending index
    return np.argsort(-scores, kind="stable")


def select_top_n(pool_features, w, n):
    """Indices of the n largest estimated boundary scores, ties to the lower index."""
    if n < 1:
        raise ValueError("N must be >= 1")
    feats = np.asarray(pool_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise EmptyPool("outlier pool is empty")
    scores = boundary_score_est(w, feats)
    order = _rank_by_score(scores)[:n]
    return MinedSet(indices=order, scores=scores[order])


def mine(pool, encoder, sampler, posterior, n, rng):
    """Pick n outliers from `pool` (rows of raw inputs).

    `encoder` maps a (S, d) array to (S, m) features matching the posterior
    dimension. Random selection reports scores under the posterior mean so
    logs stay comparable across samplers; it draws no weights.
    """
    sampler = SamplerKind.parse(sampler)
    pool = np.asarray(pool)
    if pool.shape[0] == 0:
        raise EmptyPool("outlier pool is empty")
    if sampler is SamplerKind.RANDOM:
        k = min(n, pool.shape[0])
        idx = rng.choice(pool.shape[0], size=k, replace=False)
        scores = boundary_score_est(posterior.mean, encoder(pool[idx]))
        order = _rank_by_score(scores)
        return MinedSet(indices=idx[order], scores=scores[order])
    if sampler is SamplerKind.THOMPSON:
        w = sample_weights(posterior, rng)
    else:
        w = posterior.mean
    return select_top_n(encoder(pool), w, n)

