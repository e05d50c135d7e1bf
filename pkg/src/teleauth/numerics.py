"""Log-space probability primitives for diagonal Gaussian mixtures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidModelError, UsageError

LOG_2PI = float(np.log(2.0 * np.pi))

VARIANCE_FLOOR_ABS = 1e-6
VARIANCE_FLOOR_REL = 1e-3
WEIGHT_FLOOR = 1e-6
COLLAPSE_MASS = 1e-8
KMEANS_MAX_ITER = 50


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        var = np.array(self.variance, dtype=float).reshape(-1)
        if mean.shape != var.shape:
            raise UsageError(f"mean has dimension {mean.size}, variance {var.size}")
        mean.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class Mixture:
    components: tuple
    log_weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        lw = np.array(self.log_weights, dtype=float).reshape(-1)
        if not comps:
            raise UsageError("a mixture needs at least one component")
        if lw.size != len(comps):
            raise UsageError(f"{len(comps)} components but {lw.size} weights")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise UsageError(f"components disagree on dimension: {sorted(dims)}")
        lw.flags.writeable = False
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "log_weights", lw)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def variances(self) -> np.ndarray:
        return np.stack([c.variance for c in self.components])


def log_sum_exp(values: Sequence[float]) -> float:
    """Return ``log(sum(exp(values)))`` without overflow; ``-inf`` entries are absorbed."""
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise UsageError("log_sum_exp of an empty sequence")
    if arr.size == 1:
        return float(arr[0])
    return float(logsumexp(arr))


def gaussian_log_pdf(x, comp: GaussianComponent) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != comp.dim:
        raise UsageError(f"observation has dimension {x.size}, component {comp.dim}")
    var = comp.variance
    if not np.all(var > 0):
        raise InvalidModelError("component variance must be strictly positive")
    diff = x - comp.mean
    return float(-0.5 * (x.size * LOG_2PI + np.sum(np.log(var)) + np.sum(diff * diff / var)))


def mixture_log_pdf(x, mix: Mixture) -> float:
    """log b(x) for one mixture, i.e. log sum_m c_m N(x; mu_m, var_m)."""
    terms = [lw + gaussian_log_pdf(x, c) for lw, c in zip(mix.log_weights, mix.components)]
    return log_sum_exp(terms)


def component_log_probs(frames: np.ndarray, means: np.ndarray, variances: np.ndarray,
                        log_weights: np.ndarray) -> np.ndarray:
    """Weighted component log-densities for a batch of frames.

    frames: (T, d); means/variances: (..., M, d); log_weights: (..., M).
    Returns (T, ..., M) with ``log c_m + log N(x_t; mu_m, var_m)``.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2 or frames.shape[1] != means.shape[-1]:
        raise UsageError(
            f"observations of shape {frames.shape} do not match model dimension {means.shape[-1]}")
    if np.any(variances <= 0):
        raise InvalidModelError("component variance must be strictly positive")
    const = -0.5 * (means.shape[-1] * LOG_2PI + np.log(variances).sum(-1)) + log_weights
    extra = (1,) * (means.ndim - 1)
    diff = frames.reshape((frames.shape[0],) + extra + (frames.shape[1],)) - means
    return const - 0.5 * (diff * diff / variances).sum(-1)


def variance_floor(frames: np.ndarray) -> np.ndarray:
    """Per-dimension variance floor: max(1e-6, 1e-3 * global variance)."""
    frames = np.asarray(frames, dtype=float)
    return np.maximum(VARIANCE_FLOOR_ABS, VARIANCE_FLOOR_REL * frames.var(axis=0))


def floor_weights(weights: np.ndarray, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Renormalise ``weights`` so each entry is >= floor and they sum to one."""
    w = np.asarray(weights, dtype=float).copy()
    w = w / w.sum()
    pinned = np.zeros(w.shape, dtype=bool)
    while True:
        low = (w < floor) & ~pinned
        if not low.any():
            return w
        pinned |= low
        free = ~pinned
        w[pinned] = floor
        w[free] *= (1.0 - floor * pinned.sum()) / w[free].sum()


def kmeans_seed(points, k: int, seed: int) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations (at most 50).

    Deterministic for a fixed seed. When the data hold fewer than ``k``
    distinct points some returned means coincide.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if k < 1:
        raise UsageError(f"k must be positive, got {k}")
    if len(pts) < k:
        raise UsageError(f"kmeans needs at least k={k} points, got {len(pts)}")
    if k == 1:
        return pts.mean(axis=0, keepdims=True)

    rng = np.random.default_rng(seed)
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[rng.integers(len(pts))]
    d2 = ((pts - centers[0]) ** 2).sum(1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(len(pts), p=d2 / total)
        else:
            idx = rng.integers(len(pts))
        centers[c] = pts[idx]
        d2 = np.minimum(d2, ((pts - centers[c]) ** 2).sum(1))

    assign = None
    for _ in range(KMEANS_MAX_ITER):
        dist = ((pts[:, None, :] - centers[None]) ** 2).sum(-1)
        new_assign = dist.argmin(1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = pts[members].mean(0)
            else:
                # empty cluster: move it onto the worst-served point
                far = dist[np.arange(len(pts)), assign].argmax()
                centers[c] = pts[far]
                assign[far] = c
    return centers
