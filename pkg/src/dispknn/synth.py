"""Synthetic datastores drawn from mixtures of power spherical distributions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .store import VectorStore


@dataclass(frozen=True)
class PowerSphericalParams:
    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if abs(np.linalg.norm(self.mu) - 1.0) > 1e-10:
            raise ValueError("mu must be a unit vector")


@dataclass(frozen=True)
class SynthSpec:
    dim: int = 128
    count: int = 10_000
    components: int = 5
    kappa: float = 10.0
    norm_range: tuple[float, float] = (1.0, 100.0)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.norm_range
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.components < 1:
            raise ValueError("components must be >= 1")
        if not 0 < lo <= hi:
            raise ValueError("norm_range must satisfy 0 < lo <= hi")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")


def uniform_directions(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sample_power_spherical(params: PowerSphericalParams, n: int, dim: int, rng: np.random.Generator):
    """Exact sampler for the power spherical distribution.

    The cosine to the mean direction is ``2z - 1`` with
    ``z ~ Beta((d-1)/2 + kappa, (d-1)/2)``; the remaining component is uniform
    on the orthogonal sphere. A Householder reflection maps ``e1`` onto ``mu``.
    """
    mu = np.asarray(params.mu, dtype=np.float64)
    if mu.shape != (dim,):
        raise ValueError(f"mu has shape {mu.shape}, expected ({dim},)")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if n == 0:
        return np.zeros((0, dim))
    a = (dim - 1) / 2.0
    z = rng.beta(a + params.kappa, a, size=n)
    t = 2.0 * z - 1.0
    v = uniform_directions(n, dim - 1, rng)
    y = np.empty((n, dim))
    y[:, 0] = t
    y[:, 1:] = np.sqrt(np.clip(1.0 - t * t, 0.0, None))[:, None] * v

    u = -mu.copy()
    u[0] += 1.0
    un = np.linalg.norm(u)
    if un < 1e-12:
        return y
    u /= un
    return y - 2.0 * np.outer(y @ u, u)


def make_synthetic_store(spec: SynthSpec, rng: np.random.Generator | None = None) -> VectorStore:
    """Keys from a uniform mixture of power spherical components.

    Component means are independent uniform draws on the sphere. Each key gets
    a uniformly chosen component, a direction from that component with the
    shared ``kappa``, and a length uniform on ``norm_range``. Labels are the
    component ids.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    means = uniform_directions(spec.components, spec.dim, rng)
    comp = rng.integers(0, spec.components, size=spec.count)
    lengths = rng.uniform(spec.norm_range[0], spec.norm_range[1], size=spec.count)
    keys = np.empty((spec.count, spec.dim))
    for c in range(spec.components):
        idx = np.flatnonzero(comp == c)
        params = PowerSphericalParams(means[c], spec.kappa)
        keys[idx] = sample_power_spherical(params, idx.size, spec.dim, rng)
    keys *= lengths[:, None]
    return VectorStore(keys, comp)


SWEEP_KAPPAS = (1.0, 10.0, 50.0, 100.0, 1000.0)
