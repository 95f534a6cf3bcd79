"""Directions on the sphere: norm/direction split, dispersion measures and
great-circle slicing.

Note on spherical variance: it is computed as ``1 - ||mean(S)||``. Under this
definition a fully concentrated set scores 0 and a centrally symmetric one
(e.g. ``(x, x, -x, -x)``) scores 1. Some prose describes the scale the other
way round ("close to 1 indicates concentration"); the formula is what is
implemented here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDraw, EmptySet, TooFewPoints, ZeroVector

ZERO_NORM = 1e-12
DEGENERATE_PROJECTION = 1e-8


@dataclass(frozen=True)
class GreatCircle:
    """A great circle spanned by two orthonormal directions ``p`` and ``q``."""

    p: np.ndarray
    q: np.ndarray


def split_direction_norm(v):
    """Return ``(v / ||v||, ||v||)``.

    Raises ZeroVector when ``||v|| <= 1e-12``.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not norm > ZERO_NORM:
        raise ZeroVector(f"cannot split a vector of norm {norm:g}")
    return v / norm, norm


def split_rows(X):
    """Row-wise :func:`split_direction_norm` for an ``(n, d)`` array."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    bad = np.flatnonzero(~(norms > ZERO_NORM))
    if bad.size:
        raise ZeroVector(f"row {bad[0]} has norm {norms[bad[0]]:g}")
    return X / norms[:, None], norms


def normalize_rows(X):
    return split_rows(X)[0]


def _exact_dot(a, b) -> float:
    return math.fsum(a * b)


def min_pairwise_angle(S) -> float:
    """Smallest angle in radians between any two (unordered) members of ``S``.

    Candidate pairs come from the Gram matrix; the winning cosines are then
    recomputed with correctly rounded dot products, so the result does not
    depend on the BLAS summation order.
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if n < 2:
        raise TooFewPoints("need at least two directions")
    G = S @ S.T
    iu, ju = np.triu_indices(n, k=1)
    cos = G[iu, ju]
    # the smallest angle belongs to the largest cosine
    cand = np.flatnonzero(cos >= cos.max() - 1e-12)
    best = max(_exact_dot(S[iu[c]], S[ju[c]]) for c in cand)
    return math.acos(max(-1.0, min(1.0, best)))


def spherical_variance(S) -> float:
    """``1 - ||(1/|S|) sum(S)||``; 0 for a concentrated set."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] == 0:
        raise EmptySet("spherical variance of an empty set")
    return float(1.0 - np.linalg.norm(S.mean(axis=0)))


def sample_great_circle(d: int, rng: np.random.Generator) -> GreatCircle:
    """Draw a uniformly distributed great circle of the unit sphere in R^d."""
    if d < 2:
        raise ValueError("great circles need d >= 2")
    p = rng.standard_normal(d)
    p /= np.linalg.norm(p)
    for _ in range(100):
        try:
            q = _orthonormal_partner(p, rng.standard_normal(d))
        except DegenerateDraw:
            continue
        return GreatCircle(p, q)
    raise DegenerateDraw("could not draw an orthogonal direction")


def _orthonormal_partner(p, q):
    q = q - (q @ p) * p
    n = np.linalg.norm(q)
    if n < DEGENERATE_PROJECTION:
        raise DegenerateDraw(f"residual norm {n:g} after Gram-Schmidt")
    q = q / n
    # second pass keeps |<p, q>| at rounding level
    q = q - (q @ p) * p
    return q / np.linalg.norm(q)


def sample_great_circles(d: int, count: int, rng: np.random.Generator) -> list[GreatCircle]:
    return [sample_great_circle(d, rng) for _ in range(count)]


def project_to_circle(S, circle: GreatCircle):
    """Polar angles in ``[0, 2*pi)`` of the projections of ``S`` onto ``circle``.

    Returns ``(angles, kept)`` where ``kept`` holds the row indices of ``S``
    whose planar projection has norm at least 1e-8; other rows are dropped.
    """
    S = np.asarray(S, dtype=np.float64)
    x = S @ circle.p
    y = S @ circle.q
    kept = np.flatnonzero(np.hypot(x, y) >= DEGENERATE_PROJECTION)
    angles = np.mod(np.arctan2(y[kept], x[kept]), 2 * np.pi)
    # mod can return exactly 2*pi for tiny negative inputs
    angles[angles >= 2 * np.pi] = 0.0
    return angles, kept
