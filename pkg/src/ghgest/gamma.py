"""Gamma distribution in (shape, scale) form, vectorized over rows.

All functions broadcast over numpy arrays. The boosting head works in the
unconstrained coordinates ``(log shape, log mean)``; :func:`nll_grad_hess`
returns derivatives of the negative log density in those coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError

# shape bounds shared by the boosting link and the baselines
MIN_SHAPE = 1e-3
MAX_SHAPE = 1e6


@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution(s) with positive ``shape`` k and ``scale`` theta.

    ``shape`` and ``scale`` may be scalars or equal-length arrays, one entry
    per row. Methods evaluate row-wise.
    """

    shape: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.shape, dtype=float)
        s = np.asarray(self.scale, dtype=float)
        if not (np.all(k > 0) and np.all(s > 0)):
            raise DomainError("Gamma shape and scale must be positive")
        object.__setattr__(self, "shape", k)
        object.__setattr__(self, "scale", s)

    @classmethod
    def from_mean(cls, shape, mean) -> "GammaParams":
        shape = np.asarray(shape, dtype=float)
        return cls(shape, np.asarray(mean, dtype=float) / shape)

    @classmethod
    def from_log(cls, log_shape, log_mean) -> "GammaParams":
        return cls.from_mean(np.exp(log_shape), np.exp(log_mean))

    def __len__(self) -> int:
        return np.broadcast(self.shape, self.scale).shape[0]

    def __getitem__(self, idx) -> "GammaParams":
        k, s = np.broadcast_arrays(self.shape, self.scale)
        return GammaParams(k[idx], s[idx])

    def mean(self) -> np.ndarray:
        return self.shape * self.scale

    def variance(self) -> np.ndarray:
        return self.shape * self.scale ** 2

    def log_pdf(self, y) -> np.ndarray:
        return log_pdf(self, y)

    def cdf(self, y) -> np.ndarray:
        return cdf(self, y)

    def quantile(self, u) -> np.ndarray:
        return quantile(self, u)

    def to_dict(self) -> dict:
        return {"shape": np.atleast_1d(self.shape).tolist(),
                "scale": np.atleast_1d(self.scale).tolist()}


def log_pdf(p: GammaParams, y) -> np.ndarray:
    """(k-1) ln y - y/theta - k ln theta - ln Gamma(k)."""
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("Gamma log_pdf requires y > 0")
    k, theta = p.shape, p.scale
    return (k - 1.0) * np.log(y) - y / theta - k * np.log(theta) - special.gammaln(k)


def cdf(p: GammaParams, y) -> np.ndarray:
    """Regularized lower incomplete gamma P(k, y/theta)."""
    y = np.asarray(y, dtype=float)
    if np.any(~(y >= 0)):
        raise DomainError("Gamma cdf requires y >= 0")
    return special.gammainc(p.shape, y / p.scale)


def quantile(p: GammaParams, u) -> np.ndarray:
    """Inverse CDF; results that underflow are floored at the smallest normal float."""
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("quantile level must lie in (0, 1)")
    x = special.gammaincinv(p.shape, u)
    return np.maximum(x, np.finfo(float).tiny) * p.scale


def fit_moments(sample) -> GammaParams:
    """Moment-matched Gamma: k = mean^2/var, theta = var/mean."""
    sample = np.asarray(sample, dtype=float)
    if sample.size < 2:
        raise DomainError("moment matching needs at least two observations")
    if np.any(~(sample > 0)):
        raise DomainError("moment matching needs positive observations")
    m = sample.mean()
    v = sample.var(ddof=1)
    if not v > 0:
        raise DomainError("degenerate sample: zero variance")
    return GammaParams(m * m / v, v / m)


def _digamma_minus_log(k):
    """psi(k) - ln k, using the asymptotic series where it cancels badly."""
    big = k > 40
    kb = np.where(big, k, 41.0)
    inv2 = 1.0 / (kb * kb)
    series = -0.5 / kb - inv2 * (1 / 12 - inv2 * (1 / 120 - inv2 * (1 / 252 - inv2 / 240)))
    ks = np.where(big, 1.0, k)
    return np.where(big, series, special.digamma(ks) - np.log(ks))


def _shape_curvature(k):
    """psi(k) - ln k + k psi'(k) - 1, which is positive and ~ 1/(12 k^2)."""
    big = k > 40
    kb = np.where(big, k, 41.0)
    inv2 = 1.0 / (kb * kb)
    series = inv2 * (1 / 12 - inv2 * (1 / 40 - inv2 * (5 / 252 - inv2 * (7 / 240 - inv2 * 3 / 44))))
    ks = np.where(big, 1.0, k)
    exact = special.digamma(ks) - np.log(ks) + ks * special.polygamma(1, ks) - 1.0
    return np.where(big, series, exact)


def nll_grad_hess(log_shape, log_mean, y):
    """Derivatives of -log_pdf in (eta1 = ln k, eta2 = ln mu) coordinates.

    Returns ``(g1, g2, h1, h2)``: first derivatives and diagonal second
    derivatives. With r = y/mu,

        g1 = k (r - ln r - 1 + psi(k) - ln k)      g2 = k (1 - r)
        h1 = g1 + k (k psi'(k) - 1)                h2 = k r

    ``h1`` is positive because ``r - ln r - 1 >= 0`` and
    ``psi(k) - ln k + k psi'(k) - 1 > 0`` for every k > 0.
    """
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("Gamma derivatives require y > 0")
    k = np.exp(log_shape)
    r = np.exp(np.log(y) - log_mean)
    dev = np.maximum(r - np.log(r) - 1.0, 0.0)
    g1 = k * (dev + _digamma_minus_log(k))
    g2 = k * (1.0 - r)
    h1 = k * (dev + _shape_curvature(k))
    h2 = k * r
    return g1, g2, h1, h2


def fisher_information(log_shape):
    """Expected curvature of -log_pdf in (ln k, ln mu): ``(k (k psi'(k) - 1), k)``.

    The coordinates are orthogonal, so this diagonal is the full Fisher matrix.
    """
    k = np.exp(log_shape)
    return k * _shape_curvature(k) - k * _digamma_minus_log(k), k


def nll_log(log_shape, log_mean, y) -> np.ndarray:
    """-log_pdf expressed in (ln k, ln mu) coordinates."""
    k = np.exp(log_shape)
    logy = np.log(y)
    return -((k - 1.0) * logy - k * np.exp(logy - log_mean) - k * (log_mean - log_shape)
             - special.gammaln(k))
