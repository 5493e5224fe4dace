"""One-dimensional spline flow for likelihood recalibration.

The flow is a monotone rational-quadratic spline ``f`` mapping [0, 1] onto
itself. Pushing PIT values u = F(y|x) through ``f`` onto a uniform base
density gives the flow density ``f'(u)`` and flow CDF ``f(u)``; composing
them with the base Gamma yields a recalibrated distribution whose CDF is
``f(F(y|x))``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError
from .gamma import GammaParams

log = logging.getLogger(__name__)

PIT_EPS = 1e-6
MIN_BIN = 1e-3
MIN_DERIVATIVE = 1e-3
_SOFTPLUS_ONE = float(np.log(np.expm1(1.0 - MIN_DERIVATIVE)))


def _softmax(a):
    e = np.exp(a - a.max())
    return e / e.sum()


def _softplus(a):
    return np.logaddexp(0.0, a)


@dataclass(frozen=True)
class SplineFlow1D:
    """Monotone rational-quadratic spline on [0, 1].

    ``x_knots`` and ``y_knots`` hold K+1 increasing positions with fixed
    endpoints 0 and 1; ``derivatives`` holds the K+1 positive slopes at the
    knots.
    """

    x_knots: np.ndarray
    y_knots: np.ndarray
    derivatives: np.ndarray

    def __post_init__(self):
        x, y, d = (np.asarray(a, dtype=float) for a in (self.x_knots, self.y_knots, self.derivatives))
        if not (x.shape == y.shape == d.shape and x.ndim == 1 and x.size >= 2):
            raise DomainError("knot arrays must be 1-D with equal length >= 2")
        if x[0] != 0 or y[0] != 0 or x[-1] != 1 or y[-1] != 1:
            raise DomainError("spline must map 0 to 0 and 1 to 1")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0) or np.any(d <= 0):
            raise DomainError("knots must increase and derivatives must be positive")
        for name, arr in (("x_knots", x), ("y_knots", y), ("derivatives", d)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_bins(self) -> int:
        return self.x_knots.size - 1

    @classmethod
    def identity(cls, n_bins: int = 8) -> "SplineFlow1D":
        knots = np.linspace(0.0, 1.0, n_bins + 1)
        knots[-1] = 1.0
        return cls(knots, knots.copy(), np.ones(n_bins + 1))

    @classmethod
    def from_unconstrained(cls, widths, heights, derivs) -> "SplineFlow1D":
        return cls(*_constrain(widths, heights, derivs))

    def _bins(self, knots, u):
        return np.clip(np.searchsorted(knots, u, side="right") - 1, 0, self.n_bins - 1)

    def forward(self, u) -> np.ndarray:
        """f(u): the flow CDF on [0, 1]."""
        u = np.asarray(u, dtype=float)
        b = self._bins(self.x_knots, u)
        xk, w = self.x_knots[b], np.diff(self.x_knots)[b]
        yk, h = self.y_knots[b], np.diff(self.y_knots)[b]
        dk, dk1 = self.derivatives[b], self.derivatives[b + 1]
        s = h / w
        xi = np.clip((u - xk) / w, 0.0, 1.0)
        q = xi * (1 - xi)
        num = h * (s * xi * xi + dk * q)
        den = s + (dk1 + dk - 2 * s) * q
        return yk + num / den

    def inverse(self, v) -> np.ndarray:
        """f^{-1}(v), solving the bin's quadratic in closed form."""
        v = np.asarray(v, dtype=float)
        b = self._bins(self.y_knots, v)
        xk, w = self.x_knots[b], np.diff(self.x_knots)[b]
        yk, h = self.y_knots[b], np.diff(self.y_knots)[b]
        dk, dk1 = self.derivatives[b], self.derivatives[b + 1]
        s = h / w
        dy = v - yk
        c2 = dk1 + dk - 2 * s
        a = h * (s - dk) + dy * c2
        bb = h * dk - dy * c2
        c = -s * dy
        disc = np.maximum(bb * bb - 4 * a * c, 0.0)
        xi = (2 * c) / (-bb - np.sqrt(disc))
        xi = np.clip(np.nan_to_num(xi, nan=0.0), 0.0, 1.0)
        return xk + xi * w

    def log_derivative(self, u) -> np.ndarray:
        """log f'(u)."""
        u = np.asarray(u, dtype=float)
        b = self._bins(self.x_knots, u)
        w = np.diff(self.x_knots)[b]
        h = np.diff(self.y_knots)[b]
        dk, dk1 = self.derivatives[b], self.derivatives[b + 1]
        s = h / w
        xi = np.clip((u - self.x_knots[b]) / w, 0.0, 1.0)
        q = xi * (1 - xi)
        num = dk1 * xi * xi + 2 * s * q + dk * (1 - xi) ** 2
        den = s + (dk1 + dk - 2 * s) * q
        return 2 * np.log(s) + np.log(num) - 2 * np.log(den)

    def log_density(self, u) -> np.ndarray:
        return flow_log_density(self, u)

    def to_dict(self) -> dict:
        return {"n_bins": self.n_bins, "x_knots": self.x_knots.tolist(),
                "y_knots": self.y_knots.tolist(), "derivatives": self.derivatives.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SplineFlow1D":
        flow = cls(np.array(doc["x_knots"]), np.array(doc["y_knots"]), np.array(doc["derivatives"]))
        if "n_bins" in doc and doc["n_bins"] != flow.n_bins:
            raise DataError("flow document has inconsistent bin count")
        return flow

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "SplineFlow1D":
        return cls.from_dict(json.loads(Path(path).read_text()))


def flow_log_density(flow: SplineFlow1D, u) -> np.ndarray:
    """Log density on (0, 1): uniform base log-density (zero) plus log f'(u)."""
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("flow density is defined on (0, 1)")
    return flow.log_derivative(u)


# ------------------------------------------------------------------ fitting

def _constrain(widths, heights, derivs):
    k = widths.size
    w = MIN_BIN + (1 - MIN_BIN * k) * _softmax(widths)
    h = MIN_BIN + (1 - MIN_BIN * k) * _softmax(heights)
    x = np.concatenate([[0.0], np.cumsum(w)])
    y = np.concatenate([[0.0], np.cumsum(h)])
    x[-1] = y[-1] = 1.0
    d = MIN_DERIVATIVE + _softplus(derivs)
    return x, y, d


def _objective_and_grad(params, u, k):
    """Mean log f'(u) and its gradient w.r.t. the unconstrained parameters."""
    a_w, a_h, a_d = params[:k], params[k:2 * k], params[2 * k:]
    pw, ph = _softmax(a_w), _softmax(a_h)
    scale = 1 - MIN_BIN * k
    widths = MIN_BIN + scale * pw
    heights = MIN_BIN + scale * ph
    x = np.concatenate([[0.0], np.cumsum(widths)])
    d = MIN_DERIVATIVE + _softplus(a_d)

    b = np.clip(np.searchsorted(x, u, side="right") - 1, 0, k - 1)
    w, h = widths[b], heights[b]
    dk, dk1 = d[b], d[b + 1]
    s = h / w
    xi = np.clip((u - x[b]) / w, 0.0, 1.0)
    q = xi * (1 - xi)
    num = dk1 * xi * xi + 2 * s * q + dk * (1 - xi) ** 2
    c = dk1 + dk - 2 * s
    den = s + c * q
    value = np.mean(2 * np.log(s) + np.log(num) - 2 * np.log(den))

    # partials of log f' per sample
    d_s = 2 / s + 2 * q / num - 2 * (1 - 2 * q) / den
    d_xi = (2 * dk1 * xi + 2 * s * (1 - 2 * xi) - 2 * dk * (1 - xi)) / num - 2 * c * (1 - 2 * xi) / den
    d_dk = (1 - xi) ** 2 / num - 2 * q / den
    d_dk1 = xi * xi / num - 2 * q / den
    d_left = -d_xi / w                        # w.r.t. left knot position x_b
    d_w = -d_xi * xi / w - d_s * s / w        # w.r.t. bin width (knot fixed)
    d_h = d_s / w

    n = u.size
    g_width = np.bincount(b, weights=d_w, minlength=k) / n
    # x_b = sum of widths before bin b
    left_sum = np.bincount(b, weights=d_left, minlength=k) / n
    g_width += np.cumsum(left_sum[::-1])[::-1] - left_sum
    g_height = np.bincount(b, weights=d_h, minlength=k) / n
    g_deriv = (np.bincount(b, weights=d_dk, minlength=k + 1)
               + np.bincount(b + 1, weights=d_dk1, minlength=k + 1)) / n

    g_aw = scale * pw * (g_width - np.dot(pw, g_width))
    g_ah = scale * ph * (g_height - np.dot(ph, g_height))
    g_ad = g_deriv / (1 + np.exp(-a_d))
    return value, np.concatenate([g_aw, g_ah, g_ad])


def identity_parameters(n_bins: int) -> np.ndarray:
    return np.concatenate([np.zeros(2 * n_bins), np.full(n_bins + 1, _SOFTPLUS_ONE)])


def fit_flow(pit_values, n_bins: int = 8, seed: int = 0, max_iter: int = 2000,
             step: float = 1.0, tol: float = 1e-10) -> SplineFlow1D:
    """Maximum-likelihood spline flow for PIT values.

    Full-batch gradient ascent from the identity map; a step that does not
    increase the mean log density is halved and retried, an accepted step
    grows the step size by half. ``seed`` is recorded for interface symmetry:
    the procedure is deterministic.
    """
    u = np.clip(np.asarray(pit_values, dtype=float).ravel(), PIT_EPS, 1 - PIT_EPS)
    if u.size < 10 * n_bins:
        raise DataError(f"need at least {10 * n_bins} PIT values for {n_bins} bins, got {u.size}")
    params = identity_parameters(n_bins)
    value, grad = _objective_and_grad(params, u, n_bins)
    for it in range(max_iter):
        accepted = False
        while step > 1e-12:
            trial = params + step * grad
            tv, tg = _objective_and_grad(trial, u, n_bins)
            if np.isfinite(tv) and tv > value:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        gain = tv - value
        params, value, grad = trial, tv, tg
        step *= 1.5
        if gain < tol:
            break
    log.debug("flow fit: %d iterations, mean log density %.6f", it + 1, value)
    return SplineFlow1D.from_unconstrained(params[:n_bins], params[n_bins:2 * n_bins], params[2 * n_bins:])


def mean_log_density(flow: SplineFlow1D, pit_values) -> float:
    u = np.clip(np.asarray(pit_values, dtype=float), PIT_EPS, 1 - PIT_EPS)
    return float(np.mean(flow.log_derivative(u)))


# ------------------------------------------------------ recalibrated output

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(256)
_GL_U = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class RecalibratedDistribution:
    """Base Gamma rows composed with one recalibration flow.

    CDF(y) = f(F(y)), log pdf(y) = log f'(F(y)) + log p(y).
    """

    base: GammaParams
    flow: SplineFlow1D

    def __len__(self) -> int:
        return len(self.base)

    def __getitem__(self, idx) -> "RecalibratedDistribution":
        return RecalibratedDistribution(self.base[idx], self.flow)

    def cdf(self, y) -> np.ndarray:
        return self.flow.forward(self.base.cdf(y))

    def log_pdf(self, y) -> np.ndarray:
        return recalibrated_log_pdf(self, y)

    def quantile(self, u) -> np.ndarray:
        return recalibrated_quantile(self, u)

    def mean(self) -> np.ndarray:
        return recalibrated_mean(self)


def recalibrated_log_pdf(d: RecalibratedDistribution, y) -> np.ndarray:
    base_lp = d.base.log_pdf(y)
    u = np.clip(d.base.cdf(y), PIT_EPS, 1 - PIT_EPS)
    return d.flow.log_derivative(u) + base_lp


def recalibrated_quantile(d: RecalibratedDistribution, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("quantile level must lie in (0, 1)")
    v = np.clip(d.flow.inverse(u), np.finfo(float).tiny, 1 - np.finfo(float).eps / 2)
    return d.base.quantile(v)


def recalibrated_mean(d: RecalibratedDistribution) -> np.ndarray:
    """Mean by 256-node Gauss-Legendre quadrature of the quantile function."""
    v = d.flow.inverse(_GL_U)
    k = np.atleast_1d(d.base.shape)[:, None]
    theta = np.atleast_1d(d.base.scale)[:, None]
    q = GammaParams(k, theta).quantile(v[None, :])
    out = q @ _GL_W
    return out if np.ndim(d.base.shape) or np.ndim(d.base.scale) else out[0]
