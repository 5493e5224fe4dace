"""Scoring: RMSE and error quantiles, CDF calibration, pulls, the heavy-emitter task,
and the grouped cross-validated benchmark that ties them together."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, masker
from .dataset import Dataset, grouped_kfold, split_train_valid_test
from .errors import DataError, DomainError, GHGError
from .pipeline import PipelineConfig, fit_pipeline

log = logging.getLogger(__name__)

DEFAULT_GRID = np.round(np.arange(1, 100) / 100.0, 2)
ERROR_QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
RMSE_MODELS = ("Simple", "Baseline", "Recalib")
DIST_MODELS = ("Simple", "Baseline", "Calib", "Recalib")
CONDITIONS = ("unmasked", "masked")


# ----------------------------------------------------------------- point error

def rmse(predicted, targets) -> float:
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise DomainError("predictions and targets differ in length")
    if p.size == 0:
        raise DomainError("RMSE of an empty set")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def error_quantiles(predicted, targets, levels=ERROR_QUANTILES) -> dict:
    """Quantiles of absolute and percentage error (linear interpolation)."""
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(targets, dtype=float)
    abs_err = np.abs(p - t)
    pct_err = 100.0 * abs_err / t
    return {"levels": list(levels),
            "absolute": np.percentile(abs_err, 100 * np.asarray(levels)).tolist(),
            "percentage": np.percentile(pct_err, 100 * np.asarray(levels)).tolist()}


# ----------------------------------------------------------------- calibration

@dataclass
class CalibrationReport:
    nominal: np.ndarray
    empirical: np.ndarray
    calibration_error: float

    def to_dict(self) -> dict:
        return {"nominal": self.nominal.tolist(), "empirical": self.empirical.tolist(),
                "calibration_error": self.calibration_error}


def calibration_from_pit(pit, grid=DEFAULT_GRID) -> CalibrationReport:
    pit = np.sort(np.asarray(pit, dtype=float))
    if pit.size == 0:
        raise DomainError("calibration of an empty set")
    grid = np.asarray(grid, dtype=float)
    empirical = np.searchsorted(pit, grid, side="right") / pit.size
    return CalibrationReport(grid, empirical, float(np.sum((empirical - grid) ** 2)))


def calibration_report(distributions, targets, grid=DEFAULT_GRID) -> CalibrationReport:
    """Empirical coverage ``p_j = #{CDF(y) <= p̂_j} / n`` and ``sum_j (p_j - p̂_j)^2``."""
    return calibration_from_pit(distributions.cdf(np.asarray(targets, dtype=float)), grid)


# ----------------------------------------------------------------------- pulls

@dataclass
class PullReport:
    edges: np.ndarray            # interior edges; the outer bins are open-ended
    predicted: np.ndarray        # mean predicted probability per bin
    observed: np.ndarray         # counts per bin
    pulls: np.ndarray
    infinite: np.ndarray         # bins with zero predicted mass but nonzero count
    chi2_over_ndf: float

    @property
    def n_bins(self) -> int:
        return len(self.predicted)

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "predicted": self.predicted.tolist(),
                "observed": self.observed.tolist(),
                "pulls": [None if not np.isfinite(x) else float(x) for x in self.pulls],
                "infinite": self.infinite.tolist(),
                "chi2_over_ndf": None if not np.isfinite(self.chi2_over_ndf) else self.chi2_over_ndf}


def log_spaced_edges(targets, bins: int) -> np.ndarray:
    """``bins - 1`` interior edges equally spaced in log between the extreme targets."""
    if bins < 2:
        raise DomainError("pull histogram needs at least 2 bins")
    t = np.asarray(targets, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("log-spaced bins need positive targets")
    return np.exp(np.linspace(np.log(t.min()), np.log(t.max()), bins + 1))[1:-1]


def bin_masses(distributions, edges) -> np.ndarray:
    """Per-row probability of each bin, shape (n, len(edges) + 1)."""
    n = len(distributions)
    cdf = np.column_stack([distributions.cdf(np.full(n, e)) for e in edges]) if len(edges) else np.empty((n, 0))
    cdf = np.column_stack([np.zeros(n), cdf, np.ones(n)])
    return np.maximum(np.diff(cdf, axis=1), 0.0)


def pull_from_masses(masses, targets, edges) -> PullReport:
    edges = np.asarray(edges, dtype=float)
    n, bins = masses.shape
    if bins < 2:
        raise DomainError("pull histogram needs at least 2 bins")
    if n < bins:
        raise DomainError(f"need at least {bins} rows for {bins} bins, got {n}")
    predicted = masses.mean(axis=0)
    observed = np.bincount(np.searchsorted(edges, np.asarray(targets, dtype=float), side="left"),
                           minlength=bins).astype(float)
    se = np.sqrt(n * predicted * (1.0 - predicted))
    diff = observed - n * predicted
    with np.errstate(divide="ignore", invalid="ignore"):
        pulls = np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf))
    infinite = ~np.isfinite(pulls)
    chi2 = float(np.sum(pulls ** 2) / (bins - 1))
    return PullReport(edges, predicted, observed, pulls, infinite, chi2)


def pull_report(distributions, targets, bins: int = 20, edges=None) -> PullReport:
    """Observed vs. predicted-mixture histogram, pulls standardized by binomial SE.

    Bins are ``(-inf, e_1], (e_1, e_2], ..., (e_{B-1}, inf)``; by default the
    interior edges are log-spaced between the smallest and largest target.
    ``chi2_over_ndf = sum(pull^2) / (bins - 1)``.
    """
    targets = np.asarray(targets, dtype=float)
    edges = log_spaced_edges(targets, bins) if edges is None else np.asarray(edges, dtype=float)
    return pull_from_masses(bin_masses(distributions, edges), targets, edges)


# ------------------------------------------------------------ heavy emitters

@dataclass
class EmitterTaskResult:
    thresholds: dict             # level-1 sector -> intensity threshold
    predicted_class: np.ndarray  # per scored row; -1 for excluded rows
    true_class: np.ndarray
    excluded: dict               # reason -> row count
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float | None:
        return None if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    def to_dict(self) -> dict:
        return {"thresholds": dict(sorted(self.thresholds.items())), "excluded": self.excluded,
                "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn, "precision": self.precision}


def intensity_thresholds(sectors, intensity, quantile: float = 0.9) -> dict:
    """Per level-1 sector, the linear-interpolation ``quantile`` of intensity."""
    sectors = np.asarray(sectors, dtype=object)
    intensity = np.asarray(intensity, dtype=float)
    out = {}
    for s in sorted(set(sectors.tolist())):
        vals = intensity[sectors == s]
        vals = vals[np.isfinite(vals)]
        if vals.size:
            out[s] = float(np.percentile(vals, 100 * quantile))
    return out


def _true_revenue(data: Dataset, column: str) -> np.ndarray:
    j = data.schema.index(column)
    return np.where(data.mask[:, j], data.values[:, j], np.nan)


def heavy_emitter_task(reference: Dataset, scored: Dataset, upper_quantile,
                       intensity_quantile: float = 0.9, revenue_column: str = "revenue") -> EmitterTaskResult:
    """Class-1 precision of flagging high-intensity emitters.

    Thresholds come from ``reference`` (labeled rows with targets); ``scored``
    supplies true targets and revenue for the rows whose predicted upper
    quantile (e.g. the 99th percentile) is ``upper_quantile``. A row is
    predicted Class 1 when ``upper_quantile / revenue`` exceeds its sector's
    threshold and truly Class 1 when ``target / revenue`` does.
    """
    if reference.target is None or scored.target is None:
        raise DataError("heavy-emitter task needs labeled reference and scored rows")
    upper = np.asarray(upper_quantile, dtype=float)
    if upper.shape != (len(scored),):
        raise DomainError("one predicted quantile per scored row is required")
    ref_rev = _true_revenue(reference, revenue_column)
    ok = ref_rev > 0
    thresholds = intensity_thresholds(reference.sector_path[ok, 0], reference.target[ok] / ref_rev[ok],
                                      intensity_quantile)
    rev = _true_revenue(scored, revenue_column)
    bad_rev = ~(rev > 0)
    sec = scored.sector_path[:, 0]
    thr = np.array([thresholds.get(s, np.nan) for s in sec])
    no_thr = ~bad_rev & np.isnan(thr)
    use = ~bad_rev & ~no_thr
    pred = np.full(len(scored), -1)
    true = np.full(len(scored), -1)
    with np.errstate(invalid="ignore", divide="ignore"):
        pred[use] = (upper[use] / rev[use] > thr[use]).astype(int)
        true[use] = (scored.target[use] / rev[use] > thr[use]).astype(int)
    p, t = pred[use], true[use]
    return EmitterTaskResult(
        thresholds, pred, true,
        {"missing_or_nonpositive_revenue": int(bad_rev.sum()), "sector_without_threshold": int(no_thr.sum())},
        int(np.sum((p == 1) & (t == 1))), int(np.sum((p == 1) & (t == 0))),
        int(np.sum((p == 0) & (t == 1))), int(np.sum((p == 0) & (t == 0))))


# ------------------------------------------------------------------ benchmark

@dataclass
class BenchmarkConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    folds: int = 10
    min_bucket: int = baselines.MIN_BUCKET
    grid_points: int = 99
    pull_bins: int = 20
    intensity_quantile: float = 0.9
    upper_quantile: float = 0.99
    revenue_column: str = "revenue"

    def __post_init__(self):
        if self.folds < 3:
            raise DomainError("cross-validation needs at least 3 folds (train, valid, test)")
        if self.grid_points < 1:
            raise DomainError("grid_points must be positive")
        if self.pull_bins < 2:
            raise DomainError("pull_bins must be at least 2")
        for name in ("intensity_quantile", "upper_quantile"):
            if not 0 < getattr(self, name) < 1:
                raise DomainError(f"{name} must lie in (0, 1)")

    @property
    def grid(self) -> np.ndarray:
        return np.arange(1, self.grid_points + 1) / (self.grid_points + 1)


@dataclass
class FoldResult:
    """Predictions of every model on one test fold under both conditions."""

    test: Dataset
    reference: Dataset
    distributions: dict          # (model, condition) -> distribution object
    means: dict                  # (model, condition) -> predicted means
    best_iteration: int
    seeds: dict


def heldout_mask_seed(seed: int, fold: int) -> int:
    """Seed for masking the test fold, disjoint from training-time mask seeds."""
    return 1_000_003 * (seed + 1) + fold


def run_fold(train: Dataset, valid: Dataset, test: Dataset, unlabeled: Dataset,
             config: BenchmarkConfig, seed: int, fold: int = 0, mask_model=None) -> FoldResult:
    """Fit all models on one split and predict the test rows unmasked and masked."""
    pcfg = config.pipeline
    seeds = {"pipeline": seed, "test_mask": heldout_mask_seed(seed, fold)}
    if mask_model is None:
        mask_model = masker.fit_masker(Dataset.concat([train, valid]), unlabeled,
                                       seed=seed, config=pcfg.masker)
    fitted = fit_pipeline(train, valid, unlabeled, pcfg, seed, mask_model=mask_model)
    simple = baselines.fit_simple(train, config.min_bucket)
    glm = baselines.fit_glm(train, config.min_bucket)
    masked = masker.apply_mask(mask_model, test, seeds["test_mask"])
    dists, means = {}, {}
    for cond, data in (("unmasked", test), ("masked", masked)):
        dists["Simple", cond] = baselines.predict_simple(simple, data.sector_path)
        dists["Baseline", cond] = baselines.predict_glm(glm, data)
        dists["Calib", cond] = fitted.base(data)
        dists["Recalib", cond] = fitted.distribution(data)
        for m in DIST_MODELS:
            means[m, cond] = np.asarray(dists[m, cond].mean())
    return FoldResult(test, Dataset.concat([train, valid]), dists, means, fitted.booster.best_iteration, seeds)


def _log_likelihood(dist, y) -> float:
    return float(np.mean(dist.log_pdf(y)))


def run_cv_benchmark(data: Dataset, unlabeled: Dataset, config: BenchmarkConfig | None = None,
                     seed: int = 0) -> dict:
    """Grouped K-fold benchmark of Simple, Baseline (GLM), Calib and Recalib.

    Each fold's test rows are scored as given and after masking by a masker
    fitted on that fold's training and validation rows. Returns a JSON-ready
    report; identical inputs and seed give an identical report.
    """
    config = config or BenchmarkConfig()
    if data.target is None:
        raise DataError("benchmark needs labeled data")
    folds = grouped_kfold(data, config.folds, seed)
    edges = log_spaced_edges(data.target, config.pull_bins)
    grid = config.grid
    per_fold = []
    pooled_pit = {key: [] for key in _keys(DIST_MODELS)}
    pooled_mass = {key: [] for key in _keys(DIST_MODELS)}
    pooled_conf = {key: np.zeros(4, dtype=int) for key in _keys(RMSE_MODELS)}
    pooled_targets = []
    for k in range(config.folds):
        train, valid, test = split_train_valid_test(data, folds, k)
        try:
            res = run_fold(train, valid, test, unlabeled, config, seed, k)
        except GHGError as exc:
            raise type(exc)(f"fold {k}: {exc}") from exc
        y = test.target
        pooled_targets.append(y)
        entry = {"fold": k, "n_train": len(train), "n_valid": len(valid), "n_test": len(test),
                 "best_iteration": res.best_iteration, "seeds": res.seeds, "models": {}}
        for model in DIST_MODELS:
            for cond in CONDITIONS:
                dist, mean = res.distributions[model, cond], res.means[model, cond]
                pit = np.asarray(dist.cdf(y), dtype=float)
                pooled_pit[model, cond].append(pit)
                pooled_mass[model, cond].append(bin_masses(dist, edges))
                cal = calibration_from_pit(pit, grid)
                m = {"rmse": rmse(mean, y), "errors": error_quantiles(mean, y),
                     "log_likelihood": _log_likelihood(dist, y),
                     "calibration_error": cal.calibration_error}
                if model in RMSE_MODELS:
                    task = heavy_emitter_task(res.reference, test, dist.quantile(config.upper_quantile),
                                              config.intensity_quantile, config.revenue_column)
                    m["emitter"] = task.to_dict()
                    pooled_conf[model, cond] += [task.tp, task.fp, task.fn, task.tn]
                entry["models"].setdefault(model, {})[cond] = m
        per_fold.append(entry)
        log.info("fold %d done", k)

    targets = np.concatenate(pooled_targets)
    summary = {}
    for model, cond in _keys(DIST_MODELS):
        pit = np.concatenate(pooled_pit[model, cond])
        pulls = pull_from_masses(np.vstack(pooled_mass[model, cond]), targets, edges)
        rmses = [f["models"][model][cond]["rmse"] for f in per_fold]
        s = {"rmse_mean": float(np.mean(rmses)), "rmse_sd": float(np.std(rmses, ddof=1)) if len(rmses) > 1 else 0.0,
             "calibration": calibration_from_pit(pit, grid).to_dict(), "pulls": pulls.to_dict()}
        if model in RMSE_MODELS:
            tp, fp, fn, tn = (int(v) for v in pooled_conf[model, cond])
            s["precision"] = None if tp + fp == 0 else tp / (tp + fp)
            s["confusion"] = {"tp": tp, "fp": fp, "fn": fn, "tn": tn}
        summary.setdefault(model, {})[cond] = s

    return {
        "metadata": {
            "percentile_convention": "linear interpolation between order statistics",
            "intensity_threshold_source": "training and validation rows of each fold "
                                          "(alternative: all labeled rows)",
            "intensity_revenue": "true revenue, also under the masked condition",
            "pull_standard_error": "binomial sqrt(n p (1 - p))",
            "pull_ndf": "bins - 1",
            "pull_bins": "open-ended outer bins, log-spaced interior edges over all labeled targets",
            "calibration_grid": grid.tolist(),
            "seed": seed,
            "folds": config.folds,
        },
        "config": _config_doc(config),
        "folds": per_fold,
        "summary": summary,
    }


def _keys(models):
    return [(m, c) for m in models for c in CONDITIONS]


def _config_doc(config: BenchmarkConfig) -> dict:
    doc = asdict(config)
    return json.loads(json.dumps(doc, default=list))


# -------------------------------------------------------------------- output

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def write_report(report: dict, out_dir) -> list[Path]:
    """Write report.json and the flat CSV tables; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    written[0].write_text(json.dumps(report, indent=1, sort_keys=True, allow_nan=True) + "\n")

    def table(name, header, rows):
        path = out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        written.append(path)

    folds, summary = report["folds"], report["summary"]
    table("rmse.csv", ["model", "condition", "fold", "rmse"],
          [(m, c, f["fold"], f["models"][m][c]["rmse"]) for m in RMSE_MODELS for c in CONDITIONS for f in folds])
    rows = []
    for m in RMSE_MODELS:
        for c in CONDITIONS:
            for f in folds:
                e = f["models"][m][c]["errors"]
                for q, a, p in zip(e["levels"], e["absolute"], e["percentage"]):
                    rows.append((m, c, f["fold"], q, a, p))
    table("errors.csv", ["model", "condition", "fold", "quantile", "absolute_error", "percentage_error"], rows)
    table("qq.csv", ["model", "condition", "nominal", "empirical"],
          [(m, c, p, e) for m in DIST_MODELS for c in CONDITIONS
           for p, e in zip(summary[m][c]["calibration"]["nominal"], summary[m][c]["calibration"]["empirical"])])
    rows = []
    for m in DIST_MODELS:
        for c in CONDITIONS:
            pr = summary[m][c]["pulls"]
            lo = [0.0] + pr["edges"]
            hi = pr["edges"] + [math.inf]
            for i in range(len(pr["predicted"])):
                rows.append((m, c, i, lo[i], hi[i], pr["predicted"][i], pr["observed"][i], pr["pulls"][i],
                             pr["chi2_over_ndf"]))
    table("pulls.csv", ["model", "condition", "bin", "lower", "upper", "predicted_mass", "observed_count",
                        "pull", "chi2_over_ndf"], rows)
    table("precision.csv", ["model", "condition", "precision", "tp", "fp", "fn", "tn"],
          [(m, c, summary[m][c]["precision"], *summary[m][c]["confusion"].values())
           for m in RMSE_MODELS for c in CONDITIONS])
    return written
