"""k-NN next-token distribution and its interpolation with a model distribution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyHits, SizeMismatch
from .ivfpq import DEFAULT_NPROBE, IvfPqIndex, QueryResult, search
from .store import VectorStore


@dataclass
class InterpConfig:
    k: int = 8
    temperature: float = 100.0
    lam: float = 0.3
    nprobe: int = DEFAULT_NPROBE
    exact_distances: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


def knn_distribution(hits: QueryResult, temperature: float, vocab_size: int) -> np.ndarray:
    """Distance-weighted label votes: ``p(y) ~ sum_{j: y_j = y} exp(-d_j / T)``.

    ``d_j`` is the stored squared distance. The smallest distance is
    subtracted before exponentiation, which leaves the normalized result
    unchanged.
    """
    if len(hits) == 0:
        raise EmptyHits("no neighbours to vote")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    labels = np.asarray(hits.labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= vocab_size:
        raise ValueError(f"labels outside vocabulary of size {vocab_size}")
    d = np.asarray(hits.distances, dtype=np.float64)
    w = np.exp(-(d - d.min()) / temperature)
    p = np.bincount(labels, weights=w, minlength=vocab_size)
    return p / p.sum()


def interpolate(p_model, p_knn, lam: float) -> np.ndarray:
    p_model = np.asarray(p_model, dtype=np.float64)
    p_knn = np.asarray(p_knn, dtype=np.float64)
    if p_model.shape != p_knn.shape:
        raise SizeMismatch(f"{p_model.shape} vs {p_knn.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return (1.0 - lam) * p_model + lam * p_knn


def step_predict(index: IvfPqIndex, store: VectorStore | None, h, p_model, cfg: InterpConfig) -> np.ndarray:
    """Retrieve, vote and interpolate for one decoder state ``h``.

    With ``cfg.exact_distances`` the retrieved hits are re-scored against the
    raw keys in ``store`` before voting.
    """
    p_model = np.asarray(p_model, dtype=np.float64)
    hits = search(index, h, cfg.k, cfg.nprobe)
    if cfg.exact_distances:
        if store is None:
            raise ValueError("exact distances need the store")
        d = np.sum((store.keys[hits.ids] - np.asarray(h, dtype=np.float64)) ** 2, axis=1)
        hits = QueryResult(hits.ids, d, hits.labels)
    return interpolate(p_model, knn_distribution(hits, cfg.temperature, p_model.size), cfg.lam)
