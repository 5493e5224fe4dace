"""Newton-boosted regression trees that map feature rows to Gamma distributions.

Each boosting round grows two trees: one for ``ln k`` (shape) and one for
``ln mu`` (mean), each a second-order step on the Gamma negative
log-likelihood. Trees split on histogram bins, route MISSING cells through a
learned default direction and split categorical features by sorting
categories on their gradient/curvature ratio.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import gamma
from .dataset import Dataset
from .errors import DataError, DomainError

log = logging.getLogger(__name__)

FORMAT = "ghgest.gbdt"
VERSION = 1

SHAPE_COORD, MEAN_COORD = 0, 1
LOG_SHAPE_LO = float(np.log(gamma.MIN_SHAPE))
LOG_SHAPE_HI = float(np.log(gamma.MAX_SHAPE))

_MIN_HESS = 1e-12
_MAX_HALVINGS = 40


@dataclass
class BoostConfig:
    max_depth: int = 6
    min_samples_leaf: int = 20
    learning_rate: float = 0.1
    max_rounds: int = 500
    early_stopping_patience: int = 20
    histogram_bins: int = 64
    # sector hierarchy levels offered to the trees as categorical columns;
    # deep levels have few rows per code and sorted category scans overfit them
    sector_levels: int = 1

    def __post_init__(self):
        for name in ("max_depth", "min_samples_leaf", "max_rounds",
                     "early_stopping_patience", "histogram_bins"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"BoostConfig.{name} must be >= 1")
        if not self.learning_rate > 0:
            raise DomainError("BoostConfig.learning_rate must be positive")
        if int(self.sector_levels) < 0:
            raise DomainError("BoostConfig.sector_levels must be >= 0")


# ------------------------------------------------------------------- binning

@dataclass
class Binner:
    """Per-feature histogram bins learned from training rows.

    Numeric bin of value v is the count of thresholds strictly below v, so
    ``bin <= j`` is equivalent to ``v <= thresholds[j]``. Categorical bins are
    the category codes. MISSING always maps to slot ``n_slots - 1``.
    """

    thresholds: list[np.ndarray]
    is_categorical: np.ndarray
    n_slots: int

    @classmethod
    def fit(cls, values, mask, is_categorical, n_bins: int) -> "Binner":
        thresholds = []
        widest = 1
        for f in range(values.shape[1]):
            obs = values[mask[:, f], f]
            if is_categorical[f]:
                thresholds.append(np.empty(0))
                if obs.size:
                    widest = max(widest, int(obs.max()) + 1)
                continue
            uniq = np.unique(obs)
            if uniq.size <= 1:
                t = np.empty(0)
            elif uniq.size <= n_bins:
                t = (uniq[:-1] + uniq[1:]) / 2.0
            else:
                qs = np.quantile(obs, np.arange(1, n_bins) / n_bins)
                t = np.unique(qs)
                t = t[t < uniq[-1]]
            thresholds.append(t)
            widest = max(widest, t.size + 1)
        return cls(thresholds, np.asarray(is_categorical, bool), widest + 1)

    def transform(self, values, mask) -> np.ndarray:
        n, d = values.shape
        codes = np.full((n, d), self.n_slots - 1, dtype=np.int64)
        for f in range(d):
            obs = mask[:, f]
            if self.is_categorical[f]:
                c = values[obs, f].astype(np.int64)
                # categories never seen in training behave as MISSING
                c[c >= self.n_slots - 1] = self.n_slots - 1
                codes[obs, f] = c
            else:
                codes[obs, f] = np.searchsorted(self.thresholds[f], values[obs, f], side="left")
        return codes


# --------------------------------------------------------------------- trees

@dataclass
class Tree:
    """Flat array representation; ``feature[i] < 0`` marks a leaf."""

    coordinate: int
    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cat_left: dict = field(default_factory=dict)
    cat_right: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, values, mask, is_categorical) -> np.ndarray:
        """Leaf index reached by every row."""
        n = len(values)
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        cat_table = self._category_table()
        for _ in range(len(self.feature)):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            r, nd, ff = rows[internal], node[internal], f[internal]
            observed = mask[r, ff]
            v = values[r, ff]
            go_left = np.where(observed, v <= self.threshold[nd], self.default_left[nd])
            cat = is_categorical[ff] & observed
            if cat.any():
                codes = v[cat].astype(np.int64)
                in_range = codes < cat_table.shape[1]
                side = np.full(codes.shape, -1)
                side[in_range] = cat_table[nd[cat][in_range], codes[in_range]]
                go_left[cat] = np.where(side < 0, self.default_left[nd[cat]], side == 1)
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def _category_table(self) -> np.ndarray:
        """Node x category lookup: 1 = left, 0 = right, -1 = unseen (default)."""
        if not self.cat_left:
            return np.full((len(self.feature), 0), -1, dtype=np.int8)
        width = 1 + max(max(list(s) + list(self.cat_right.get(n, [])), default=0)
                        for n, s in self.cat_left.items())
        table = np.full((len(self.feature), width), -1, dtype=np.int8)
        for n, cats in self.cat_left.items():
            table[n, list(cats)] = 1
            table[n, list(self.cat_right.get(n, []))] = 0
        return table

    def to_dict(self) -> dict:
        return {
            "coordinate": self.coordinate,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "default_left": self.default_left.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cat_left": {str(k): sorted(v) for k, v in sorted(self.cat_left.items())},
            "cat_right": {str(k): sorted(v) for k, v in sorted(self.cat_right.items())},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        return cls(
            int(doc["coordinate"]),
            np.array(doc["feature"], dtype=np.int64),
            np.array(doc["threshold"], dtype=float),
            np.array(doc["default_left"], dtype=bool),
            np.array(doc["left"], dtype=np.int64),
            np.array(doc["right"], dtype=np.int64),
            np.array(doc["value"], dtype=float),
            {int(k): list(v) for k, v in doc.get("cat_left", {}).items()},
            {int(k): list(v) for k, v in doc.get("cat_right", {}).items()},
        )


@dataclass
class Split:
    feature: int
    gain: float
    bin: int                 # numeric: last bin on the left; categorical: position in sorted order
    missing_left: bool
    left_categories: tuple = ()
    right_categories: tuple = ()
    n_left: int = 0
    n_right: int = 0


def _gain(gl, hl, gr, hr, g, h):
    with np.errstate(divide="ignore", invalid="ignore"):
        return 0.5 * (gl * gl / hl + gr * gr / hr - g * g / h)


def _scan_histograms(hg, hh, hc, binner: Binner, min_samples_leaf: int):
    """Gain of every candidate split for a batch of nodes.

    ``hg``, ``hh``, ``hc`` have shape (nodes, features, slots) where the last
    slot holds MISSING. Returns gains of shape (nodes, features, slots - 1, 2)
    (last axis: MISSING sent left, MISSING sent right) together with the
    category orderings used for categorical features.
    """
    nb = binner.n_slots - 1
    a, d, _ = hg.shape
    og, oh, oc = hg[..., :nb], hh[..., :nb], hc[..., :nb]
    mg, mh, mc = hg[..., nb], hh[..., nb], hc[..., nb]

    orders = {}
    cat_feats = np.flatnonzero(binner.is_categorical)
    if cat_feats.size:
        og, oh, oc = og.copy(), oh.copy(), oc.copy()
        for f in cat_feats:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(oc[:, f] > 0, og[:, f] / np.maximum(oh[:, f], _MIN_HESS), np.inf)
            order = np.argsort(ratio, axis=1, kind="stable")
            orders[int(f)] = order
            og[:, f] = np.take_along_axis(og[:, f], order, axis=1)
            oh[:, f] = np.take_along_axis(oh[:, f], order, axis=1)
            oc[:, f] = np.take_along_axis(oc[:, f], order, axis=1)

    gl, hl, cl = np.cumsum(og, axis=2), np.cumsum(oh, axis=2), np.cumsum(oc, axis=2)
    go, ho, co = gl[..., -1:], hl[..., -1:], cl[..., -1:]
    gt, ht, ct = go + mg[..., None], ho + mh[..., None], co + mc[..., None]

    # candidate bins: numeric j in [0, n_thresholds]; categorical j < categories present
    limit = np.array([t.size for t in binner.thresholds])
    limit = np.broadcast_to(limit[None, :, None], (a, d, 1)).copy()
    for f in cat_feats:
        limit[:, f, 0] = (hc[:, f, :nb] > 0).sum(axis=1) - 1
    valid_bin = np.arange(nb)[None, None, :] <= limit

    gains = np.full((a, d, nb, 2), -np.inf)
    for side, (xl, yl, zl) in enumerate((
        (gl + mg[..., None], hl + mh[..., None], cl + mc[..., None]),   # MISSING left
        (gl, hl, cl),                                                    # MISSING right
    )):
        xr, yr, zr = gt - xl, ht - yl, ct - zl
        ok = (valid_bin & (zl >= min_samples_leaf) & (zr >= min_samples_leaf)
              & (yl > _MIN_HESS) & (yr > _MIN_HESS))
        gains[..., side] = np.where(ok, _gain(xl, yl, xr, yr, gt, ht), -np.inf)
    return gains, orders


def _best_splits(gains, orders, hc, binner: Binner) -> list[Split | None]:
    """Pick the highest-gain split per node; ties go to the lowest feature, then bin."""
    nb = binner.n_slots - 1
    a, d = gains.shape[:2]
    flat = gains.reshape(a, -1)
    best = np.argmax(flat, axis=1)
    out = []
    for i in range(a):
        gain = flat[i, best[i]]
        if not (np.isfinite(gain) and gain > 0):
            out.append(None)
            continue
        f, j, side = np.unravel_index(best[i], gains.shape[1:])
        counts = hc[i, f]
        missing_left = side == 0
        if binner.is_categorical[f]:
            order = orders[int(f)][i]
            present = order[: int((counts[:nb] > 0).sum())]
            lcats, rcats = tuple(sorted(present[: j + 1].tolist())), tuple(sorted(present[j + 1:].tolist()))
            n_left = int(counts[list(lcats)].sum())
        else:
            lcats = rcats = ()
            n_left = int(counts[: j + 1].sum())
        n_obs = int(counts[:nb].sum())
        n_miss = int(counts[nb])
        n_right = n_obs - n_left
        if n_miss == 0:
            # nothing to learn from: send future MISSING rows to the larger child
            missing_left = n_left >= n_right
        if missing_left:
            n_left += n_miss
        else:
            n_right += n_miss
        out.append(Split(int(f), float(gain), int(j), bool(missing_left), lcats, rcats, n_left, n_right))
    return out


def node_histograms(codes, g, h, node_pos, n_nodes, n_slots):
    """Histograms of gradient, curvature and row count per (node, feature, slot)."""
    rows = np.flatnonzero(node_pos >= 0)
    d = codes.shape[1]
    flat = (node_pos[rows, None] * (d * n_slots) + np.arange(d)[None, :] * n_slots + codes[rows]).ravel()
    size = n_nodes * d * n_slots
    shape = (n_nodes, d, n_slots)
    hg = np.bincount(flat, weights=np.repeat(g[rows], d), minlength=size).reshape(shape)
    hh = np.bincount(flat, weights=np.repeat(h[rows], d), minlength=size).reshape(shape)
    hc = np.bincount(flat, minlength=size).reshape(shape).astype(float)
    return hg, hh, hc


def find_best_split(codes, g, h, binner: Binner, config: BoostConfig) -> Split | None:
    """Best Newton-gain split for a single node holding all rows of ``codes``."""
    if len(codes) < 2 * config.min_samples_leaf:
        return None
    pos = np.zeros(len(codes), dtype=np.int64)
    hg, hh, hc = node_histograms(codes, g, h, pos, 1, binner.n_slots)
    gains, orders = _scan_histograms(hg, hh, hc, binner, config.min_samples_leaf)
    return _best_splits(gains, orders, hc, binner)[0]


def _goes_left(split: Split, codes_f: np.ndarray, missing_slot: int, categorical: bool) -> np.ndarray:
    missing = codes_f == missing_slot
    if categorical:
        left = np.isin(codes_f, split.left_categories)
    else:
        left = codes_f <= split.bin
    return np.where(missing, split.missing_left, left)


def grow_tree(codes, g, h, binner: Binner, config: BoostConfig, coordinate: int):
    """Grow one tree level by level.

    Returns ``(tree, leaf_of_row, leaf_ids)`` where leaf values are the raw
    Newton steps ``-sum(g)/sum(h)`` (not yet scaled by the learning rate).
    """
    n = len(codes)
    missing_slot = binner.n_slots - 1
    feature, threshold, default_left, left, right = [-1], [0.0], [True], [-1], [-1]
    cat_left, cat_right = {}, {}
    node_of_row = np.zeros(n, dtype=np.int64)
    frontier = [0]
    for depth in range(config.max_depth):
        counts = np.bincount(node_of_row, minlength=len(feature))
        splittable = [nd for nd in frontier if counts[nd] >= 2 * config.min_samples_leaf]
        if not splittable:
            break
        pos_of_node = np.full(len(feature), -1, dtype=np.int64)
        pos_of_node[splittable] = np.arange(len(splittable))
        node_pos = pos_of_node[node_of_row]
        hg, hh, hc = node_histograms(codes, g, h, node_pos, len(splittable), binner.n_slots)
        gains, orders = _scan_histograms(hg, hh, hc, binner, config.min_samples_leaf)
        splits = _best_splits(gains, orders, hc, binner)
        frontier = []
        for nd, split in zip(splittable, splits):
            if split is None:
                continue
            f = split.feature
            lid, rid = len(feature), len(feature) + 1
            feature[nd] = f
            default_left[nd] = split.missing_left
            left[nd], right[nd] = lid, rid
            if binner.is_categorical[f]:
                threshold[nd] = 0.0
                cat_left[nd] = list(split.left_categories)
                cat_right[nd] = list(split.right_categories)
            else:
                t = binner.thresholds[f]
                threshold[nd] = float(t[split.bin]) if split.bin < t.size else float("inf")
            for _ in range(2):
                feature.append(-1)
                threshold.append(0.0)
                default_left.append(True)
                left.append(-1)
                right.append(-1)
            rows = np.flatnonzero(node_of_row == nd)
            go = _goes_left(split, codes[rows, f], missing_slot, binner.is_categorical[f])
            node_of_row[rows] = np.where(go, lid, rid)
            frontier += [lid, rid]
        if not frontier:
            break

    n_nodes = len(feature)
    gsum = np.bincount(node_of_row, weights=g, minlength=n_nodes)
    hsum = np.bincount(node_of_row, weights=h, minlength=n_nodes)
    value = np.zeros(n_nodes)
    leaves = np.flatnonzero(np.array(feature) < 0)
    value[leaves] = -gsum[leaves] / np.maximum(hsum[leaves], _MIN_HESS)
    tree = Tree(coordinate, np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(default_left, dtype=bool), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), value, cat_left, cat_right)
    return tree, node_of_row, leaves


# ------------------------------------------------------------- design matrix

def sector_vocabulary(data: Dataset, levels: int | None = None) -> list[list[str]]:
    """Sector codes of the first ``levels`` hierarchy levels in first-seen order."""
    vocab = []
    n_levels = data.sector_path.shape[1] if levels is None else min(levels, data.sector_path.shape[1])
    for level in range(n_levels):
        seen = {}
        for code in data.sector_path[:, level]:
            if code != "" and code not in seen:
                seen[code] = len(seen)
        vocab.append(list(seen))
    return vocab


def design_matrix(data: Dataset, vocab: list[list[str]]):
    """Feature values plus one categorical column per sector level.

    Sector codes outside ``vocab`` are MISSING and follow default directions.
    """
    n = len(data)
    extra = np.full((n, len(vocab)), np.nan)
    for level, codes in enumerate(vocab):
        lookup = {c: i for i, c in enumerate(codes)}
        col = data.sector_path[:, level] if level < data.sector_path.shape[1] else [""] * n
        extra[:, level] = [lookup.get(c, np.nan) for c in col]
    values = np.hstack([data.values, extra])
    mask = np.hstack([data.mask, ~np.isnan(extra)])
    is_cat = np.concatenate([data.schema.is_categorical, np.ones(len(vocab), dtype=bool)])
    return values, mask, is_cat


# ------------------------------------------------------------------ boosting

def _clip_shape(eta1):
    return np.clip(eta1, LOG_SHAPE_LO, LOG_SHAPE_HI)


def _row_nll(eta1, eta2, y):
    return gamma.nll_log(_clip_shape(eta1), eta2, y)


def _coordinate_grad(coord, eta1, eta2, y):
    """Gradient and Fisher curvature for one coordinate.

    The observed curvature of the mean coordinate, k*y/mu, vanishes for
    over-predicted rows and produces runaway steps; the expected curvature
    does not depend on y and keeps leaf steps bounded.
    """
    shape = _clip_shape(eta1)
    g1, g2, _, _ = gamma.nll_grad_hess(shape, eta2, y)
    h1, h2 = gamma.fisher_information(shape)
    if coord == MEAN_COORD:
        return g2, h2
    # beyond the shape bounds the loss is flat; do not push further outward
    g1 = np.where((eta1 >= LOG_SHAPE_HI) & (g1 < 0), 0.0, g1)
    g1 = np.where((eta1 <= LOG_SHAPE_LO) & (g1 > 0), 0.0, g1)
    return g1, h1


@dataclass
class BoostedModel:
    """Fitted ensemble: ``init`` + sum of tree outputs, in (ln k, ln mu)."""

    init: tuple
    trees: list
    binner: Binner
    schema_fingerprint: str
    n_features: int
    best_iteration: int
    config: BoostConfig
    sector_vocab: list = field(default_factory=list)
    history: dict = field(default_factory=dict)

    @property
    def n_rounds(self) -> int:
        return len(self.trees) // 2

    def raw_predict(self, values, mask, n_rounds: int | None = None):
        """Per-row ``(ln k, ln mu)`` after ``n_rounds`` rounds (default: best)."""
        width = self.n_features + len(self.sector_vocab)
        if values.shape[1] != width:
            raise DataError(f"expected {width} design columns, got {values.shape[1]}")
        rounds = self.best_iteration if n_rounds is None else n_rounds
        n = len(values)
        eta = [np.full(n, float(self.init[0])), np.full(n, float(self.init[1]))]
        for tree in self.trees[: 2 * rounds]:
            leaf = tree.apply(values, mask, self.binner.is_categorical)
            eta[tree.coordinate] = eta[tree.coordinate] + tree.value[leaf]
        return eta[0], eta[1]

    def predict(self, data, n_rounds: int | None = None) -> gamma.GammaParams:
        values, mask = self._matrix(data)
        eta1, eta2 = self.raw_predict(values, mask, n_rounds)
        return gamma.GammaParams.from_log(_clip_shape(eta1), eta2)

    def log_likelihood(self, data: Dataset, n_rounds: int | None = None) -> float:
        """Mean Gamma log-likelihood of ``data.target``."""
        values, mask = self._matrix(data)
        eta1, eta2 = self.raw_predict(values, mask, n_rounds)
        return float(-np.mean(_row_nll(eta1, eta2, data.target)))

    def _matrix(self, data):
        """Design matrix from a Dataset, or from raw rows (NaN = MISSING).

        Raw rows may omit the trailing sector columns, which are then MISSING.
        """
        if isinstance(data, Dataset):
            if data.schema.fingerprint() != self.schema_fingerprint:
                raise DataError("dataset schema does not match the model")
            values, mask, _ = design_matrix(data, self.sector_vocab)
            return values, mask
        values = np.atleast_2d(np.asarray(data, dtype=float))
        if values.shape[1] == self.n_features:
            values = np.hstack([values, np.full((len(values), len(self.sector_vocab)), np.nan)])
        return values, ~np.isnan(values)

    # ------------------------------------------------------------ persistence
    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "schema_fingerprint": self.schema_fingerprint,
            "n_features": self.n_features,
            "init": [float(self.init[0]), float(self.init[1])],
            "best_iteration": self.best_iteration,
            "config": asdict(self.config),
            "binner": {
                "thresholds": [t.tolist() for t in self.binner.thresholds],
                "is_categorical": self.binner.is_categorical.tolist(),
                "n_slots": self.binner.n_slots,
            },
            "sector_vocab": self.sector_vocab,
            "history": self.history,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BoostedModel":
        if doc.get("format") != FORMAT or doc.get("version") != VERSION:
            raise DataError("not a gbdt model document of a supported version")
        b = doc["binner"]
        binner = Binner([np.array(t, dtype=float) for t in b["thresholds"]],
                        np.array(b["is_categorical"], dtype=bool), int(b["n_slots"]))
        return cls(tuple(doc["init"]), [Tree.from_dict(t) for t in doc["trees"]], binner,
                   doc["schema_fingerprint"], int(doc["n_features"]), int(doc["best_iteration"]),
                   BoostConfig(**doc["config"]), doc.get("sector_vocab", []), doc.get("history", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "BoostedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def initial_params(y) -> tuple[float, float]:
    """(ln k, ln mu) of the moment-matched Gamma; degenerate samples get the max shape."""
    try:
        p = gamma.fit_moments(y)
        k = float(np.clip(p.shape, gamma.MIN_SHAPE, gamma.MAX_SHAPE))
    except DomainError:
        k = gamma.MAX_SHAPE
    return float(np.log(k)), float(np.log(np.mean(y)))


def _mean_leaf_values(tree, leaf_of_row, leaves, eta, y):
    """Exact per-leaf optimum of the log-mean shift, ln(sum k*y/mu / sum k).

    The Newton step -G/H with expected curvature is the linearization
    ln(1 + x) ~ x of this closed form; it overshoots badly for leaves whose
    targets are far above their current mean and recovers slowly afterwards.
    """
    k = np.exp(_clip_shape(eta[0]))
    n_nodes = len(tree.value)
    num = np.bincount(leaf_of_row, weights=k * y * np.exp(-eta[1]), minlength=n_nodes)
    den = np.bincount(leaf_of_row, weights=k, minlength=n_nodes)
    value = tree.value.copy()
    value[leaves] = np.log(num[leaves] / den[leaves])
    return value


def _safeguarded_values(tree, leaf_of_row, leaves, coord, eta, y, lr):
    """Scale leaf steps by the learning rate, halving any leaf whose loss would rise."""
    n_nodes = len(tree.value)
    base = _row_nll(eta[0], eta[1], y)
    base_sum = np.bincount(leaf_of_row, weights=base, minlength=n_nodes)
    value = tree.value * lr
    pending = leaves
    for _ in range(_MAX_HALVINGS):
        trial = [eta[0], eta[1]]
        trial[coord] = eta[coord] + value[leaf_of_row]
        loss = np.bincount(leaf_of_row, weights=_row_nll(trial[0], trial[1], y), minlength=n_nodes)
        bad = pending[~(loss[pending] <= base_sum[pending])]
        if bad.size == 0:
            break
        value[bad] *= 0.5
        pending = bad
    else:
        value[pending] = 0.0
    return value


def fit(train: Dataset, valid: Dataset, config: BoostConfig | None = None, seed: int = 0) -> BoostedModel:
    """Fit the boosted Gamma model with early stopping on validation log-likelihood.

    ``seed`` is accepted for interface symmetry; fitting is deterministic
    because there is no row or feature subsampling.
    """
    config = config or BoostConfig()
    if train.target is None or valid.target is None:
        raise DataError("training and validation data must be labeled")
    if len(valid) == 0:
        raise DataError("validation set is empty")
    if len(train) == 0:
        raise DataError("training set is empty")
    if train.schema.fingerprint() != valid.schema.fingerprint():
        raise DataError("training and validation schemas differ")
    y, yv = np.asarray(train.target), np.asarray(valid.target)
    if np.any(~(y > 0)) or np.any(~(yv > 0)):
        raise DomainError("targets must be positive")

    vocab = sector_vocabulary(train, config.sector_levels)
    x, m, is_cat = design_matrix(train, vocab)
    xv, mv, _ = design_matrix(valid, vocab)
    binner = Binner.fit(x, m, is_cat, config.histogram_bins)
    codes = binner.transform(x, m)

    init = initial_params(y)
    eta = [np.full(len(y), init[0]), np.full(len(y), init[1])]
    eta_v = [np.full(len(yv), init[0]), np.full(len(yv), init[1])]
    train_ll = [float(-_row_nll(eta[0], eta[1], y).mean())]
    valid_ll = [float(-_row_nll(eta_v[0], eta_v[1], yv).mean())]
    best, best_ll, stale = 0, valid_ll[0], 0
    trees = []
    for rnd in range(1, config.max_rounds + 1):
        for coord in (SHAPE_COORD, MEAN_COORD):
            g, h = _coordinate_grad(coord, eta[0], eta[1], y)
            tree, leaf_of_row, leaves = grow_tree(codes, g, h, binner, config, coord)
            if coord == MEAN_COORD:
                tree.value = _mean_leaf_values(tree, leaf_of_row, leaves, eta, y)
            tree.value = _safeguarded_values(tree, leaf_of_row, leaves, coord, eta, y,
                                             config.learning_rate)
            eta[coord] = eta[coord] + tree.value[leaf_of_row]
            eta_v[coord] = eta_v[coord] + tree.value[tree.apply(xv, mv, is_cat)]
            trees.append(tree)
        train_ll.append(float(-_row_nll(eta[0], eta[1], y).mean()))
        valid_ll.append(float(-_row_nll(eta_v[0], eta_v[1], yv).mean()))
        if valid_ll[-1] > best_ll:
            best, best_ll, stale = rnd, valid_ll[-1], 0
        else:
            stale += 1
            if stale >= config.early_stopping_patience:
                break
    log.debug("boosting stopped after %d rounds, best %d (valid ll %.5f)", rnd, best, best_ll)
    history = {"train_loglik": train_ll, "valid_loglik": valid_ll}
    return BoostedModel(init, trees, binner, train.schema.fingerprint(),
                        train.schema.n_features, best, config, vocab, history)


def predict(model: BoostedModel, data) -> gamma.GammaParams:
    return model.predict(data)
