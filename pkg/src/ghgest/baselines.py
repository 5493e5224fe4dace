"""Sector-bucketed comparison models.

``Simple``: a moment-matched Gamma per industry sector, taken from the
deepest level (4 down to 1) that holds at least ``min_bucket`` rows.

``Baseline``: a log-link Gamma GLM per sector bucket with greedy forward
feature selection stopped by BIC, over the numeric features plus the log of
every strictly positive feature.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .dataset import Dataset
from .errors import DataError, DomainError
from .gamma import MAX_SHAPE, MIN_SHAPE, GammaParams, fit_moments

MIN_BUCKET = 50


def _prefixes(path, levels):
    """Sector keys from deepest to level 1, skipping unknown levels."""
    keys = []
    for lvl in range(levels, 0, -1):
        prefix = tuple(path[:lvl])
        if prefix[-1] == "":
            continue
        keys.append(prefix)
    return keys


def _bucket_rows(data: Dataset, min_bucket: int) -> dict:
    """Rows of every sector prefix that qualifies as a bucket (level 1 always does)."""
    levels = data.sector_path.shape[1]
    rows: dict[tuple, list] = {}
    for i, path in enumerate(data.sector_path):
        for key in _prefixes(path, levels):
            rows.setdefault(key, []).append(i)
    return {k: np.array(v) for k, v in rows.items() if len(k) == 1 or len(v) >= min_bucket}


def _lookup(buckets: dict, path):
    if path[0] == "" or (path[0],) not in buckets:
        raise DataError(f"unknown level-1 sector {path[0]!r}")
    for key in _prefixes(path, len(path)):
        if key in buckets:
            return key
    return (path[0],)


# -------------------------------------------------------------------- Simple

@dataclass
class SectorTable:
    entries: dict                    # sector prefix -> (shape, scale, count)
    min_bucket: int = MIN_BUCKET

    def key_for(self, path) -> tuple:
        return _lookup(self.entries, tuple(path))

    def to_dict(self) -> dict:
        return {"min_bucket": self.min_bucket,
                "entries": [[list(k), *v] for k, v in sorted(self.entries.items())]}

    @classmethod
    def from_dict(cls, doc: dict) -> "SectorTable":
        return cls({tuple(e[0]): (float(e[1]), float(e[2]), int(e[3])) for e in doc["entries"]},
                   int(doc["min_bucket"]))


def _moment_gamma(y: np.ndarray, fallback_shape: float) -> tuple[float, float]:
    try:
        p = fit_moments(y)
        return float(p.shape), float(p.scale)
    except DomainError:
        m = float(np.mean(y))
        return fallback_shape, m / fallback_shape


def fit_simple(train: Dataset, min_bucket: int = MIN_BUCKET) -> SectorTable:
    if train.target is None or len(train) == 0:
        raise DataError("Simple model needs a nonempty labeled training set")
    y = np.asarray(train.target)
    pooled_shape = _moment_gamma(y, 1.0)[0]
    entries = {}
    for key, idx in _bucket_rows(train, min_bucket).items():
        k, s = _moment_gamma(y[idx], pooled_shape)
        entries[key] = (k, s, int(idx.size))
    return SectorTable(entries, min_bucket)


def predict_simple(table: SectorTable, sector_paths) -> GammaParams:
    """Deepest stored ancestor's Gamma for each sector path (rows of an N x L array)."""
    paths = np.atleast_2d(np.asarray(sector_paths, dtype=object))
    params = [table.entries[table.key_for(p)] for p in paths]
    return GammaParams(np.array([p[0] for p in params]), np.array([p[1] for p in params]))


# ----------------------------------------------------------------------- GLM

def gamma_glm_loglik(y, mu, shape) -> float:
    """Gamma log-likelihood with mean ``mu`` and common ``shape``."""
    return float(np.sum(shape * np.log(shape * y / mu) - shape * y / mu - np.log(y) - special.gammaln(shape)))


def pearson_shape(y, mu, n_params) -> float:
    dof = max(len(y) - n_params, 1)
    phi = float(np.sum(((y - mu) / mu) ** 2) / dof)
    return float(np.clip(1.0 / phi, MIN_SHAPE, MAX_SHAPE)) if phi > 0 else MAX_SHAPE


class IRLSDivergence(ArithmeticError):
    pass


def irls_gamma_log(x, y, max_iter: int = 100, tol: float = 1e-10, ridge: float = 1e-8):
    """Fit a log-link Gamma GLM by IRLS.

    With the log link the working weights are constant, so each iteration is
    an ordinary least-squares solve of the working response on ``x``. A ridge
    of ``ridge`` stabilizes near-collinear columns. Returns coefficients.
    """
    p = x.shape[1]
    beta = np.zeros(p)
    beta[0] = math.log(float(np.mean(y)))
    eta = x @ beta
    mu = np.exp(eta)
    dev = _deviance(y, mu)
    xtx = x.T @ x + ridge * np.eye(p)
    for _ in range(max_iter):
        zw = eta + (y - mu) / mu
        prev = beta
        beta = np.linalg.solve(xtx, x.T @ zw)
        eta = x @ beta
        if not np.all(np.isfinite(eta)) or eta.max() > 700:
            raise IRLSDivergence("linear predictor overflow")
        mu = np.exp(eta)
        new_dev = _deviance(y, mu)
        if not np.isfinite(new_dev):
            raise IRLSDivergence("non-finite deviance")
        # scoring converges linearly, so also wait for the coefficients to settle
        if (abs(new_dev - dev) <= tol * max(abs(new_dev), 1e-300)
                and np.max(np.abs(beta - prev)) <= 1e-12 * max(1.0, np.max(np.abs(beta)))):
            break
        dev = new_dev
    else:
        raise IRLSDivergence("no convergence")
    return beta


def _deviance(y, mu):
    return float(2.0 * np.sum((y - mu) / mu - np.log(y / mu)))


@dataclass
class CandidateSet:
    """Columns offered to the greedy search: raw numeric features and logs."""

    source: list          # feature index per candidate
    log: list             # True when the candidate is ln(feature)
    names: list

    def columns(self, data: Dataset) -> np.ndarray:
        """Candidate matrix with NaN where the underlying cell is MISSING or not positive."""
        raw = data.values[:, self.source]
        obs = data.mask[:, self.source]
        logged = np.array(self.log, dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(logged, np.log(np.where(raw > 0, raw, np.nan)), raw)
        return np.where(obs, out, np.nan)


def candidate_set(train: Dataset) -> CandidateSet:
    source, logs, names = [], [], []
    for j, (name, kind) in enumerate(train.schema.columns):
        if kind != "numeric":
            continue
        obs = train.values[train.mask[:, j], j]
        if obs.size == 0:
            continue
        source.append(j)
        logs.append(False)
        names.append(name)
        if np.all(obs > 0):
            source.append(j)
            logs.append(True)
            names.append(f"log_{name}")
    return CandidateSet(source, logs, names)


@dataclass
class GlmBucket:
    selected: list                    # candidate indices in order of entry
    coef: np.ndarray                  # on standardized columns, same order
    intercept: float
    shape: float                      # 1 / Pearson dispersion
    impute: np.ndarray                # bucket mean of each selected candidate
    center: np.ndarray
    scale: np.ndarray
    n_rows: int
    trace: list = field(default_factory=list)

    def mean(self, cols: np.ndarray) -> np.ndarray:
        if not self.selected:
            return np.full(len(cols), math.exp(self.intercept))
        x = cols[:, self.selected]
        x = np.where(np.isnan(x), self.impute, x)
        return np.exp(self.intercept + ((x - self.center) / self.scale) @ self.coef)

    def to_dict(self) -> dict:
        return {"selected": self.selected, "coef": self.coef.tolist(), "intercept": self.intercept,
                "shape": self.shape, "impute": self.impute.tolist(), "center": self.center.tolist(),
                "scale": self.scale.tolist(), "n_rows": self.n_rows, "trace": self.trace}

    @classmethod
    def from_dict(cls, doc: dict) -> "GlmBucket":
        return cls(list(doc["selected"]), np.array(doc["coef"], float), float(doc["intercept"]),
                   float(doc["shape"]), np.array(doc["impute"], float), np.array(doc["center"], float),
                   np.array(doc["scale"], float), int(doc["n_rows"]), doc.get("trace", []))


@dataclass
class GlmModel:
    buckets: dict
    candidates: CandidateSet
    min_bucket: int = MIN_BUCKET

    def key_for(self, path) -> tuple:
        return _lookup(self.buckets, tuple(path))

    def to_dict(self) -> dict:
        return {
            "min_bucket": self.min_bucket,
            "candidates": {"source": self.candidates.source, "log": self.candidates.log,
                           "names": self.candidates.names},
            "buckets": [[list(k), b.to_dict()] for k, b in sorted(self.buckets.items())],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GlmModel":
        c = doc["candidates"]
        return cls({tuple(k): GlmBucket.from_dict(b) for k, b in doc["buckets"]},
                   CandidateSet(list(c["source"]), list(c["log"]), list(c["names"])),
                   int(doc["min_bucket"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))


def _fit_design(cols, y, selected, impute, center, scale):
    n = len(y)
    x = np.ones((n, 1 + len(selected)))
    for c, j in enumerate(selected):
        col = np.where(np.isnan(cols[:, j]), impute[j], cols[:, j])
        x[:, c + 1] = (col - center[j]) / scale[j]
    beta = irls_gamma_log(x, y)
    mu = np.exp(x @ beta)
    shape = pearson_shape(y, mu, x.shape[1])
    return beta, mu, shape, gamma_glm_loglik(y, mu, shape)


def fit_glm_bucket(cols: np.ndarray, y: np.ndarray, names=None) -> GlmBucket:
    """Greedy forward selection on one bucket, stopping when BIC would increase."""
    n, p = cols.shape
    names = names or [str(j) for j in range(p)]
    impute = np.array([np.nanmean(cols[:, j]) if np.any(~np.isnan(cols[:, j])) else 0.0 for j in range(p)])
    filled = np.where(np.isnan(cols), impute, cols)
    center = filled.mean(axis=0)
    scale = filled.std(axis=0)
    usable = [j for j in range(p) if scale[j] > 0 and np.any(~np.isnan(cols[:, j]))]
    scale = np.where(scale > 0, scale, 1.0)

    selected: list[int] = []
    beta, mu, shape, ll = _fit_design(cols, y, selected, impute, center, scale)
    bic = -2 * ll + 1 * math.log(n)
    trace = [{"step": 0, "added": None, "loglik": ll, "bic": bic, "accepted": True}]
    while True:
        best = None
        for j in usable:
            if j in selected:
                continue
            try:
                res = _fit_design(cols, y, selected + [j], impute, center, scale)
            except (IRLSDivergence, np.linalg.LinAlgError):
                trace.append({"step": len(selected) + 1, "added": names[j], "skipped": "irls divergence"})
                continue
            if best is None or res[3] > best[1][3]:
                best = (j, res)
        if best is None:
            break
        j, res = best
        new_bic = -2 * res[3] + (len(selected) + 2) * math.log(n)
        accepted = new_bic <= bic
        trace.append({"step": len(selected) + 1, "added": names[j], "loglik": res[3], "bic": new_bic,
                      "accepted": accepted})
        if not accepted:
            break
        selected.append(j)
        beta, mu, shape, ll = res
        bic = new_bic
    sel = np.array(selected, dtype=int)
    return GlmBucket(selected, beta[1:].copy(), float(beta[0]), shape, impute[sel], center[sel],
                     scale[sel], n, trace)


def fit_glm(train: Dataset, min_bucket: int = MIN_BUCKET) -> GlmModel:
    if train.target is None or len(train) == 0:
        raise DataError("GLM baseline needs a nonempty labeled training set")
    y = np.asarray(train.target)
    if np.any(~(y > 0)):
        raise DomainError("GLM baseline needs positive targets")
    cands = candidate_set(train)
    cols = cands.columns(train)
    buckets = {}
    for key, idx in _bucket_rows(train, min_bucket).items():
        bucket = fit_glm_bucket(cols[idx], y[idx], cands.names)
        # selected candidates are stored by position in the full candidate list
        buckets[key] = bucket
    return GlmModel(buckets, cands, min_bucket)


def predict_glm(model: GlmModel, data: Dataset) -> GammaParams:
    """Per-row Gamma: bucket mean from the linear predictor, bucket Pearson shape."""
    cols = model.candidates.columns(data)
    mean = np.empty(len(data))
    shape = np.empty(len(data))
    keys = [model.key_for(p) for p in data.sector_path]
    for key in set(keys):
        rows = np.array([i for i, k in enumerate(keys) if k == key])
        b = model.buckets[key]
        mean[rows] = b.mean(cols[rows])
        shape[rows] = b.shape
    return GammaParams.from_mean(shape, mean)
