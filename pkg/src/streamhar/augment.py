"""SMOTE class balancing and the four time-series augmentations.

All functions take an explicit ``numpy.random.Generator`` (or a seed through a
config) and operate on single windows shaped ``[W, C]`` unless stated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BadKnots, EmptyInput, InputError, TooFewSamples

METHODS = ("jitter", "scale", "magnitude_warp", "time_warp")


@dataclass
class AugmentationConfig:
    sigma_jitter: float = 0.05
    sigma_scale: float = 0.1
    sigma_mwarp: float = 0.2
    sigma_twarp: float = 0.2
    n_knots: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_jitter", "sigma_scale", "sigma_mwarp", "sigma_twarp"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if self.n_knots < 2:
            raise InputError("n_knots must be >= 2")


@dataclass
class SmoteConfig:
    k_neighbors: int = 5
    target_per_class: Union[int, str] = "max-class"
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise InputError("k_neighbors must be >= 1")
        if not (self.target_per_class == "max-class" or int(self.target_per_class) >= 1):
            raise InputError("target_per_class must be a positive integer or 'max-class'")


# ---------------------------------------------------------------------------
# SMOTE


def smote_synthesize(X: np.ndarray, n_new: int, k: int, rng: np.random.Generator):
    """Make ``n_new`` synthetic samples from one class.

    Returns ``(synthetic, base_idx, neighbor_idx, deltas)`` so every synthetic
    row equals ``X[base] + delta * (X[neighbor] - X[base])``.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise TooFewSamples(f"SMOTE needs at least 2 samples in a class, got {n}")
    flat = X.reshape(n, -1)
    sq = np.sum(flat**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T
    np.fill_diagonal(d2, np.inf)
    k = min(k, n - 1)
    # stable sort so equal distances resolve to the lower index
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k]

    base_idx = rng.integers(0, n, size=n_new)
    neighbor_idx = neighbors[base_idx, rng.integers(0, k, size=n_new)]
    deltas = 1.0 - rng.random(n_new)  # uniform on (0, 1]
    shape = (n_new,) + (1,) * (X.ndim - 1)
    synthetic = X[base_idx] + deltas.reshape(shape) * (X[neighbor_idx] - X[base_idx])
    return synthetic, base_idx, neighbor_idx, deltas


def smote_oversample(windows_by_class: dict, cfg: SmoteConfig) -> dict:
    """Oversample every class up to the target count; originals stay first and untouched."""
    if not windows_by_class:
        raise EmptyInput("no classes given")
    counts = {c: len(v) for c, v in windows_by_class.items()}
    target = max(counts.values()) if cfg.target_per_class == "max-class" else int(cfg.target_per_class)
    rng = np.random.default_rng(cfg.seed)
    out = {}
    for c in sorted(windows_by_class):
        X = np.asarray(windows_by_class[c], dtype=np.float64)
        if len(X) >= target:
            out[c] = X
            continue
        syn, *_ = smote_synthesize(X, target - len(X), cfg.k_neighbors, rng)
        out[c] = np.concatenate([X, syn])
    return out


# ---------------------------------------------------------------------------
# spline


def cubic_spline_curve(u, v, t_grid) -> np.ndarray:
    """Natural cubic spline through ``(u, v)`` evaluated at ``t_grid``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t = np.asarray(t_grid, dtype=np.float64)
    if u.ndim != 1 or u.shape != v.shape or u.size < 2:
        raise BadKnots("need matching 1-D knot positions/values with at least 2 knots")
    h = np.diff(u)
    if not np.all(h > 0):
        raise BadKnots("knot positions must be strictly increasing")
    if t.size and (t.min() < u[0] or t.max() > u[-1]):
        raise BadKnots("evaluation grid leaves the knot range")

    n = u.size
    M = np.zeros(n)  # second derivatives; natural ends keep M[0] = M[-1] = 0
    if n > 2:
        slope = np.diff(v) / h
        rhs = 6.0 * np.diff(slope)
        diag = 2.0 * (h[:-1] + h[1:])
        off = h[1:-1].copy()
        # Thomas algorithm on the symmetric tridiagonal system
        m = n - 2
        cp = np.zeros(m)
        dp = np.zeros(m)
        cp[0] = off[0] / diag[0] if m > 1 else 0.0
        dp[0] = rhs[0] / diag[0]
        for i in range(1, m):
            denom = diag[i] - off[i - 1] * cp[i - 1]
            if i < m - 1:
                cp[i] = off[i] / denom
            dp[i] = (rhs[i] - off[i - 1] * dp[i - 1]) / denom
        inner = np.zeros(m)
        inner[-1] = dp[-1]
        for i in range(m - 2, -1, -1):
            inner[i] = dp[i] - cp[i] * inner[i + 1]
        M[1:-1] = inner

    j = np.clip(np.searchsorted(u, t, side="right") - 1, 0, n - 2)
    hj = h[j]
    a = u[j + 1] - t
    b = t - u[j]
    return (
        M[j] * a**3 / (6 * hj)
        + M[j + 1] * b**3 / (6 * hj)
        + (v[j] / hj - M[j] * hj / 6) * a
        + (v[j + 1] / hj - M[j + 1] * hj / 6) * b
    )


def knot_positions(length: int, n_knots: int) -> np.ndarray:
    return np.linspace(0.0, length - 1, n_knots)


# ---------------------------------------------------------------------------
# augmentations


def jitter(x, sigma, rng):
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=x.shape)


def scale(x, sigma, rng):
    """Multiply each channel by one factor drawn from N(1, sigma^2)."""
    x = np.asarray(x, dtype=np.float64)
    alpha = rng.normal(1.0, sigma, size=x.shape[-1]) if sigma > 0 else np.ones(x.shape[-1])
    return x * alpha


def magnitude_warp(x, sigma, n_knots, rng, return_knots=False):
    x = np.asarray(x, dtype=np.float64)
    W, C = x.shape
    u = knot_positions(W, n_knots)
    if sigma == 0:
        return (x.copy(), u, np.ones((C, n_knots))) if return_knots else x.copy()
    t = np.arange(W, dtype=np.float64)
    r = rng.normal(1.0, sigma, size=(C, n_knots))
    curves = np.stack([cubic_spline_curve(u, r[c], t) for c in range(C)], axis=1)
    out = x * curves
    if return_knots:
        return out, u, r
    return out


def time_warp(x, sigma, n_knots, rng, return_positions=False):
    """Resample every channel at spline-warped positions ``tau``.

    ``tau`` runs through knots ``(u, u * delta)`` and is clamped to
    ``[0, W - 1]``; it is not forced to be monotone.
    """
    x = np.asarray(x, dtype=np.float64)
    W, C = x.shape
    t = np.arange(W, dtype=np.float64)
    u = knot_positions(W, n_knots)
    delta = rng.normal(1.0, sigma, size=(C, n_knots)) if sigma > 0 else np.ones((C, n_knots))
    out = np.empty_like(x)
    taus = np.empty_like(x)
    for c in range(C):
        tau = np.clip(cubic_spline_curve(u, u * delta[c], t), 0.0, W - 1.0)
        out[:, c] = np.interp(tau, t, x[:, c])
        taus[:, c] = tau
    if return_positions:
        return out, taus
    return out


def augment_fourfold(X, y, cfg: AugmentationConfig):
    """Apply each of the four augmentations to every window.

    Output is method-major: rows ``m*N .. (m+1)*N - 1`` hold method ``METHODS[m]``
    applied to windows ``0 .. N-1``. Returns ``(X4 [4N, W, C], y4 [4N])``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 3 or len(X) == 0:
        raise EmptyInput("augment_fourfold needs a nonempty [N, W, C] array")
    rng = np.random.default_rng(cfg.seed)
    blocks = [
        [jitter(x, cfg.sigma_jitter, rng) for x in X],
        [scale(x, cfg.sigma_scale, rng) for x in X],
        [magnitude_warp(x, cfg.sigma_mwarp, cfg.n_knots, rng) for x in X],
        [time_warp(x, cfg.sigma_twarp, cfg.n_knots, rng) for x in X],
    ]
    X4 = np.concatenate([np.stack(b) for b in blocks])
    return X4, np.tile(y, 4)
