"""User profiling via greedy coreset selection over preference-weighted cosine similarity.

The selection rule: approximate the mean similarity of every record to
the whole history with a random size-k subset, then repeatedly take the
record with the highest remaining score, folding its similarity row into
a running elementwise minimum. Preference intensities scale similarity
rows uniformly, so rated histories bias selection toward strongly-rated
prompts without changing the argmax order under global rescaling.

``oracle_coreset`` is a deliberately naive second implementation of the
same contract, kept free of shared helpers for differential testing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingCorpus
from .errors import DegenerateInputError, ValidationError


@dataclass(frozen=True)
class CoresetConfig:
    """Sampler settings: profile size n, approximation size k, subset seed."""

    n: int
    k: int
    seed: int = 0
    use_preferences: bool = True

    def validate(self, n_records: int) -> None:
        if not 1 <= self.n <= n_records:
            raise ValidationError(f"sample size n={self.n} outside [1, {n_records}]")
        if not 1 <= self.k <= n_records:
            raise ValidationError(f"approx size k={self.k} outside [1, {n_records}]")


@dataclass(frozen=True)
class UserProfile:
    """Selected coreset: record indices in selection order plus their ids."""

    indices: tuple[int, ...]
    source_ids: tuple[str, ...]


def sim_clip(e: np.ndarray, r: np.ndarray, p: float) -> float:
    """Preference-weighted cosine similarity, in [-p, p]."""
    e = np.asarray(e, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if e.shape != r.shape:
        raise ValidationError(f"embedding shapes differ: {e.shape} vs {r.shape}")
    if p < 0:
        raise ValidationError("preference must be nonnegative")
    ne, nr = np.linalg.norm(e), np.linalg.norm(r)
    if ne == 0.0 or nr == 0.0:
        raise DegenerateInputError("cosine undefined for zero-norm embedding")
    return float(e @ r / (ne * nr) * p)


def _subset_indices(n_records: int, k: int, seed: int) -> np.ndarray:
    """First k entries of a Philox-seeded permutation of all indices."""
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.permutation(n_records)[:k]


def coreset_sample(corpus: EmbeddingCorpus, cfg: CoresetConfig) -> UserProfile:
    return coreset_sample_subset(corpus, cfg, list(range(len(corpus))))


def coreset_sample_subset(corpus: EmbeddingCorpus, cfg: CoresetConfig,
                          pool: list[int]) -> UserProfile:
    """Run the sampler over ``pool`` (record indices into the corpus).

    Returned indices are positions in the corpus, not in the pool.
    Vectorized; ties at the argmax go to the lowest pool position.
    """
    N = len(pool)
    cfg.validate(N)
    E = np.stack([np.asarray(corpus.records[i].sim_embedding, dtype=np.float64)
                  for i in pool])
    norms = np.linalg.norm(E, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("zero-norm sim_embedding in corpus")
    X = E / norms[:, None]
    if cfg.use_preferences:
        p = np.array([corpus.records[i].preference for i in pool], dtype=np.float64)
    else:
        p = np.ones(N)

    # Sim(e_j, E)_i = cos(e_j, e_i) * p_i; row j of the weighted Gram matrix.
    sim = (X @ X.T) * p[None, :]
    subset = _subset_indices(N, cfg.k, cfg.seed)
    D = sim[subset].sum(axis=0) / cfg.k

    selected = []
    for _ in range(cfg.n):
        s = int(np.argmax(D))  # np.argmax returns the lowest tied index
        selected.append(s)
        D = np.minimum(D, sim[s])
        D[s] = -np.inf
    indices = tuple(pool[s] for s in selected)
    return UserProfile(indices=indices,
                       source_ids=tuple(corpus.records[i].id for i in indices))


def oracle_coreset(corpus: EmbeddingCorpus, cfg: CoresetConfig) -> UserProfile:
    """Naive-loop re-implementation of coreset_sample for differential tests."""
    N = len(corpus)
    cfg.validate(N)

    def cosine(a, b):
        num = sum(float(x) * float(y) for x, y in zip(a, b))
        na = math.sqrt(sum(float(x) ** 2 for x in a))
        nb = math.sqrt(sum(float(x) ** 2 for x in b))
        if na == 0.0 or nb == 0.0:
            raise DegenerateInputError("cosine undefined for zero-norm embedding")
        return num / (na * nb)

    embs = [list(map(float, corpus.records[i].sim_embedding)) for i in range(N)]
    prefs = [float(corpus.records[i].preference) if cfg.use_preferences else 1.0
             for i in range(N)]

    def sim_row(j):
        return [cosine(embs[j], embs[i]) * prefs[i] for i in range(N)]

    rng = np.random.Generator(np.random.Philox(cfg.seed))
    subset = [int(v) for v in rng.permutation(N)[:cfg.k]]

    D = [0.0] * N
    for j in subset:
        row = sim_row(j)
        for i in range(N):
            D[i] += row[i]
    D = [v / cfg.k for v in D]

    selected = []
    for _ in range(cfg.n):
        best, best_val = 0, -math.inf
        for i in range(N):
            if D[i] > best_val:
                best, best_val = i, D[i]
        selected.append(best)
        row = sim_row(best)
        for i in range(N):
            if row[i] < D[i]:
                D[i] = row[i]
        D[best] = -math.inf
    return UserProfile(indices=tuple(selected),
                       source_ids=tuple(corpus.records[i].id for i in selected))
