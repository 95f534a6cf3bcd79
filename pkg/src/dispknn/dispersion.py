"""Angular dispersion objectives and a norm-preserving optimizer.

Two regularizers act on unit directions:

* MHE, the mean pairwise kernel energy ``exp(<s, s'>/sigma)``.
* Sliced dispersion, the Monte-Carlo average over random great circles of
  the distance between the projected angles and the closest equidistant
  configuration on that circle.

:func:`disperse` moves only the directions of a set of keys. Every key keeps
its original Euclidean norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AllPointsDegenerate, NonFiniteGradient, TooFewPoints, ZeroVector
from .geometry import (
    GreatCircle,
    project_to_circle,
    sample_great_circles,
    spherical_variance,
    split_rows,
)
from .store import VectorStore

TWO_PI = 2.0 * np.pi

MHE = "mhe"
SLICED = "sliced"


def _wrap(a):
    """Map angles to ``[-pi, pi)``."""
    return np.mod(a + np.pi, TWO_PI) - np.pi


# --------------------------------------------------------------------------
# MHE


def mhe_energy(S, sigma: float = 1.0) -> float:
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if n < 2:
        raise TooFewPoints("MHE needs at least two directions")
    K = np.exp((S @ S.T) / sigma)
    return float((K.sum() - np.trace(K)) / (n * (n - 1)))


def mhe_grad(S, sigma: float = 1.0):
    """Energy and its gradient with respect to the coordinates of ``S``."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if n < 2:
        raise TooFewPoints("MHE needs at least two directions")
    K = np.exp((S @ S.T) / sigma)
    np.fill_diagonal(K, 0.0)
    scale = 1.0 / (n * (n - 1))
    # each unordered pair appears twice in the ordered sum
    grad = (2.0 * scale / sigma) * (K @ S)
    return float(K.sum() * scale), grad


# --------------------------------------------------------------------------
# sliced dispersion


def _fit_equidistant(angles, squared: bool = True):
    """Match angles to the nearest equidistant configuration.

    Returns ``(delta, deviations)`` with deviations in input order, where
    ``deviation_i`` is the signed circular difference between angle i and its
    matched target.
    """
    angles = np.asarray(angles, dtype=np.float64)
    n = angles.size
    if n == 0:
        return 0.0, np.zeros(0)
    order = np.argsort(angles, kind="stable")
    resid = angles[order] - TWO_PI * np.arange(n) / n
    offset = _best_offset(resid, squared)
    dev_sorted = _wrap(resid - offset)
    dev = np.empty(n)
    dev[order] = dev_sorted
    delta = float(np.sum(dev**2)) if squared else float(np.sum(np.abs(dev)))
    return delta, dev


def _best_offset(resid, squared: bool) -> float:
    """Offset of the equidistant targets that minimizes the circular cost.

    A cyclic shift of the assignment only moves the offset by a multiple of
    2*pi/n, so optimizing the offset over the whole circle covers all shifts.
    For the squared cost the global optimum is the mean of one of the n
    linear unwrappings of the residuals, which are all scanned with prefix
    sums. The absolute cost is minimized at one of the residuals.
    """
    n = resid.size
    u = np.sort(np.mod(resid, TWO_PI))
    if not squared:
        costs = np.abs(_wrap(u[None, :] - u[:, None])).sum(axis=1)
        return float(u[int(np.argmin(costs))])
    k = np.arange(n)
    lead = np.concatenate([[0.0], np.cumsum(u)[:-1]])
    sums = u.sum() + TWO_PI * k
    sq = np.sum(u * u) + 2 * TWO_PI * lead + TWO_PI**2 * k
    sse = sq - sums * sums / n
    return float(sums[int(np.argmin(sse))] / n)


def circle_delta(angles, squared: bool = True) -> float:
    """Distance from ``angles`` to the nearest equidistant configuration.

    The squared variant sums squared circular deviations. ``squared=False``
    sums absolute deviations instead.
    """
    return _fit_equidistant(angles, squared)[0]


def sliced_loss(S, circles, squared: bool = True) -> float:
    return _sliced(S, circles, squared, with_grad=False)[0]


def sliced_grad(S, circles, squared: bool = True):
    """Sliced loss and its gradient with respect to the coordinates of ``S``.

    The matched targets are locally constant and the offset is optimal, so
    only the angle of each point carries a derivative.
    """
    return _sliced(S, circles, squared, with_grad=True)


def _sliced(S, circles, squared, with_grad):
    S = np.asarray(S, dtype=np.float64)
    if isinstance(circles, GreatCircle):
        circles = [circles]
    if len(circles) < 1:
        raise ValueError("need at least one great circle")
    grad = np.zeros_like(S) if with_grad else None
    total = 0.0
    used = 0
    for c in circles:
        angles, kept = project_to_circle(S, c)
        if kept.size == 0:
            continue
        delta, dev = _fit_equidistant(angles, squared)
        total += delta
        used += 1
        if with_grad:
            Sk = S[kept]
            x = Sk @ c.p
            y = Sk @ c.q
            # d(atan2(y, x))/ds = (x q - y p) / (x^2 + y^2)
            coef = (2.0 * dev if squared else np.sign(dev)) / (x * x + y * y)
            grad[kept] += (coef * x)[:, None] * c.q[None, :] - (coef * y)[:, None] * c.p[None, :]
    if used == 0:
        raise AllPointsDegenerate("every point projects to zero on every circle")
    if with_grad:
        grad /= used
    return total / used, grad


# --------------------------------------------------------------------------
# optimizer


@dataclass
class DispersionConfig:
    regularizer: str = SLICED
    sigma: float = 1.0
    step_size: float = 0.05
    steps: int = 100
    circles_per_step: int = 1
    loss_weight: float = 1.0
    seed: int = 0
    batch_size: int = 4096
    squared: bool = True

    def __post_init__(self):
        self.regularizer = self.regularizer.lower()
        if self.regularizer not in (MHE, SLICED):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.circles_per_step < 1:
            raise ValueError("circles_per_step must be >= 1")
        if self.loss_weight < 0:
            raise ValueError("loss_weight must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


@dataclass
class DispersionTrace:
    """One record per optimizer state, the initial state included."""

    loss: list[float] = field(default_factory=list)
    spherical_variance: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def append(self, loss: float, svar: float) -> None:
        self.loss.append(float(loss))
        self.spherical_variance.append(float(svar))

    def first_crossing(self, threshold: float) -> int | None:
        """First record index whose spherical variance is >= ``threshold``."""
        for i, v in enumerate(self.spherical_variance):
            if v >= threshold:
                return i
        return None

    def to_csv_rows(self):
        return [(i, l, v) for i, (l, v) in enumerate(zip(self.loss, self.spherical_variance))]


def _objective(cfg: DispersionConfig, S, rng, with_grad: bool):
    if cfg.regularizer == MHE:
        if with_grad:
            return mhe_grad(S, cfg.sigma)
        return mhe_energy(S, cfg.sigma), None
    circles = sample_great_circles(S.shape[1], cfg.circles_per_step, rng)
    if with_grad:
        return sliced_grad(S, circles, cfg.squared)
    return sliced_loss(S, circles, cfg.squared), None


def _draw_batch(n: int, cfg: DispersionConfig, rng):
    if n <= cfg.batch_size:
        return None
    return np.sort(rng.choice(n, size=cfg.batch_size, replace=False))


def disperse(store: VectorStore, cfg: DispersionConfig):
    """Increase the angular dispersion of ``store`` while keeping key norms.

    Each step draws a batch (all keys when the store fits in one batch) and
    fresh great circles, takes the gradient of ``loss_weight * R`` with
    respect to the batch directions, projects it onto the tangent space of
    the sphere, steps along the negative tangent and retracts back onto the
    sphere. Keys are then rescaled by their original norms.

    Returns ``(new_store, trace)``; the input store is not modified.
    """
    if len(store) == 0:
        raise ValueError("cannot disperse an empty store")
    dirs, norms = split_rows(store.keys)
    n = dirs.shape[0]
    if cfg.regularizer == MHE and min(n, cfg.batch_size) < 2:
        raise TooFewPoints("MHE needs at least two keys")
    rng = np.random.default_rng(cfg.seed)
    trace = DispersionTrace()

    for step in range(cfg.steps + 1):
        batch = _draw_batch(n, cfg, rng)
        S = dirs if batch is None else dirs[batch]
        last = step == cfg.steps
        loss, grad = _objective(cfg, S, rng, with_grad=not last)
        trace.append(cfg.loss_weight * loss, spherical_variance(dirs))
        if last:
            break
        grad = cfg.loss_weight * grad
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(step)
        tangent = grad - np.sum(grad * S, axis=1, keepdims=True) * S
        moved = S - cfg.step_size * tangent
        moved /= np.linalg.norm(moved, axis=1, keepdims=True)
        if batch is None:
            dirs = moved
        else:
            dirs[batch] = moved

    out = VectorStore(dirs * norms[:, None], store.labels.copy())
    if cfg.steps == 0:
        out = store.copy()
    return out, trace


def compare_regularizers(store: VectorStore, cfg_mhe: DispersionConfig, cfg_sliced: DispersionConfig):
    """Run MHE and sliced dispersion from the same start; returns both traces."""
    if cfg_mhe.steps != cfg_sliced.steps or cfg_mhe.seed != cfg_sliced.seed:
        raise ValueError("configs must share steps and seed")
    cfg_mhe = replace(cfg_mhe, regularizer=MHE)
    cfg_sliced = replace(cfg_sliced, regularizer=SLICED)
    _, t_mhe = disperse(store, cfg_mhe)
    _, t_sliced = disperse(store, cfg_sliced)
    return t_mhe, t_sliced
