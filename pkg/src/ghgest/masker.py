"""Patterned dropout: learn which observed cells of labeled rows to hide.

A mask model scores every feature of a labeled row and samples a keep/drop
decision per observed cell. It is trained so that the joint distribution of
(masked values, masked indicators) matches the unlabeled set under a
Gaussian-kernel MMD. Masks only ever hide cells; MISSING stays MISSING.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dataset import Dataset
from .errors import DataError, DomainError

log = logging.getLogger(__name__)

FORMAT = "ghgest.masker"
VERSION = 1


@dataclass(frozen=True)
class KernelSpec:
    """Sum of Gaussian RBF kernels exp(-|x - x'|^2 / (2 sigma^2))."""

    bandwidths: tuple

    def __post_init__(self):
        bw = tuple(float(b) for b in self.bandwidths)
        if not bw or any(not b > 0 for b in bw):
            raise DomainError("kernel needs at least one positive bandwidth")
        object.__setattr__(self, "bandwidths", bw)


def _sqdist(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _kernel(sq, kernel: KernelSpec):
    return sum(np.exp(-sq / (2.0 * s * s)) for s in kernel.bandwidths)


def mmd_squared(a, b, kernel: KernelSpec) -> float:
    """Biased empirical MMD^2 between sample sets ``a`` (N x E) and ``b`` (M x E).

    mean k(a, a') + mean k(b, b') - 2 mean k(a, b), summed over bandwidths.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DataError(f"embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) == 0 or len(b) == 0:
        raise DataError("MMD needs two nonempty sample sets")
    # fix the argument order so the value is exactly symmetric
    if (a.shape, a.tobytes()) > (b.shape, b.tobytes()):
        a, b = b, a
    kaa = _kernel(_sqdist(a, a), kernel).mean()
    kbb = _kernel(_sqdist(b, b), kernel).mean()
    kab = _kernel(_sqdist(a, b), kernel).mean()
    return float(kaa + kbb - 2.0 * kab)


# ---------------------------------------------------------------- embedding

@dataclass
class Standardizer:
    """Per-feature centering/scaling of observed values; positive columns are logged."""

    center: np.ndarray
    scale: np.ndarray
    use_log: np.ndarray
    is_categorical: np.ndarray

    @classmethod
    def fit(cls, *datasets: Dataset) -> "Standardizer":
        values = np.concatenate([d.values for d in datasets])
        mask = np.concatenate([d.mask for d in datasets])
        is_cat = datasets[0].schema.is_categorical
        d = values.shape[1]
        center, scale, use_log = np.zeros(d), np.ones(d), np.zeros(d, dtype=bool)
        for j in range(d):
            obs = values[mask[:, j], j]
            if is_cat[j] or obs.size == 0:
                continue
            use_log[j] = bool(np.all(obs > 0))
            t = np.log(obs) if use_log[j] else obs
            center[j] = t.mean()
            sd = t.std()
            scale[j] = sd if sd > 0 else 1.0
        return cls(center, scale, use_log, is_cat.copy())

    def transform(self, data: Dataset) -> np.ndarray:
        v = np.where(data.mask, data.values, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(self.use_log, np.log(np.maximum(np.where(data.mask & self.use_log, v, 1.0), 1e-300)), v)
        z = (v - self.center) / self.scale
        z[:, self.is_categorical] = 0.0
        return np.where(data.mask, z, 0.0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("center", "scale", "use_log", "is_categorical")}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(np.array(doc["center"], float), np.array(doc["scale"], float),
                   np.array(doc["use_log"], bool), np.array(doc["is_categorical"], bool))


def joint_embedding(z: np.ndarray, indicators: np.ndarray) -> np.ndarray:
    """Concatenate standardized values (zero where hidden) with 0/1 indicators."""
    ind = indicators.astype(float)
    return np.hstack([z * ind, ind])


def median_bandwidths(a, b, factors=(0.5, 1.0, 2.0), max_rows: int = 500, seed: int = 0) -> KernelSpec:
    """Median pairwise distance of the pooled sample, times ``factors``."""
    rng = np.random.default_rng(seed)
    pool = np.vstack([a[rng.permutation(len(a))[:max_rows]], b[rng.permutation(len(b))[:max_rows]]])
    d = np.sqrt(_sqdist(pool, pool)[np.triu_indices(len(pool), 1)])
    d = d[d > 0]
    med = float(np.median(d)) if d.size else 1.0
    return KernelSpec(tuple(med * f for f in factors))


# ---------------------------------------------------------------- the model

@dataclass
class MaskerConfig:
    steps: int = 2000
    batch: int = 256
    learning_rate: float = 0.01
    temperature: float = 1.0
    final_temperature: float = 0.1
    init_keep_logit: float = 4.0
    hidden: int = 0
    eval_every: int = 100
    eval_rows: int = 512

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.hidden < 0 or self.eval_every < 1:
            raise DomainError("masker steps/batch/hidden/eval_every out of range")
        if not (self.learning_rate > 0 and self.temperature > 0 and self.final_temperature > 0):
            raise DomainError("masker learning rate and temperatures must be positive")


@dataclass
class MaskModel:
    """Per-feature keep logits from an affine (or one-hidden-layer) scorer.

    Input is the joint embedding of the row's own values and indicators.
    """

    weights: np.ndarray              # D x H (or D x E when hidden == 0)
    bias: np.ndarray                 # D
    standardizer: Standardizer
    kernel: KernelSpec
    temperature: float
    hidden_weights: np.ndarray | None = None   # H x E
    hidden_bias: np.ndarray | None = None      # H
    schema_fingerprint: str = ""
    history: dict = field(default_factory=dict)

    def _features(self, emb):
        if self.hidden_weights is None:
            return emb
        return np.tanh(emb @ self.hidden_weights.T + self.hidden_bias)

    def logits(self, data: Dataset) -> np.ndarray:
        emb = joint_embedding(self.standardizer.transform(data), data.mask)
        return self._features(emb) @ self.weights.T + self.bias

    def keep_probabilities(self, data: Dataset) -> np.ndarray:
        """Probability that each cell stays observed; already-MISSING cells give 0."""
        self._check(data)
        p = expit(self.logits(data))
        return np.where(data.mask, p, 0.0)

    def _check(self, data: Dataset):
        if self.schema_fingerprint and data.schema.fingerprint() != self.schema_fingerprint:
            raise DataError("dataset schema does not match the mask model")

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "schema_fingerprint": self.schema_fingerprint,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "hidden_weights": None if self.hidden_weights is None else self.hidden_weights.tolist(),
            "hidden_bias": None if self.hidden_bias is None else self.hidden_bias.tolist(),
            "temperature": self.temperature,
            "bandwidths": list(self.kernel.bandwidths),
            "standardizer": self.standardizer.to_dict(),
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MaskModel":
        if doc.get("format") != FORMAT or doc.get("version") != VERSION:
            raise DataError("not a masker document of a supported version")
        hw = doc.get("hidden_weights")
        hb = doc.get("hidden_bias")
        return cls(np.array(doc["weights"], float), np.array(doc["bias"], float),
                   Standardizer.from_dict(doc["standardizer"]), KernelSpec(tuple(doc["bandwidths"])),
                   float(doc["temperature"]),
                   None if hw is None else np.array(hw, float), None if hb is None else np.array(hb, float),
                   doc.get("schema_fingerprint", ""), doc.get("history", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "MaskModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def relaxed_loss_and_grad(params: dict, emb, z, ind, target, noise, tau, kernel: KernelSpec,
                          with_grad: bool = True):
    """MMD^2 of relaxed-masked labeled rows vs ``target`` embeddings.

    ``params`` holds ``W``, ``b`` and optionally ``V``, ``c`` (hidden layer).
    ``noise`` is the logistic noise ``log U - log(1 - U)`` per cell. Returns
    the loss and, if requested, a dict of gradients keyed like ``params``.
    """
    hidden = "V" in params
    feats = np.tanh(emb @ params["V"].T + params["c"]) if hidden else emb
    logits = feats @ params["W"].T + params["b"]
    m = expit((logits + noise) / tau)
    indf = ind.astype(float)
    keep = indf * m
    a = np.hstack([z * keep, keep])
    n, mm = len(a), len(target)
    kaa, kab = np.zeros((n, n)), np.zeros((n, mm))
    waa, wab = np.zeros((n, n)), np.zeros((n, mm))
    sq_aa, sq_ab = _sqdist(a, a), _sqdist(a, target)
    for s in kernel.bandwidths:
        e_aa, e_ab = np.exp(-sq_aa / (2 * s * s)), np.exp(-sq_ab / (2 * s * s))
        kaa += e_aa
        kab += e_ab
        waa += e_aa / (s * s)
        wab += e_ab / (s * s)
    kbb = _kernel(_sqdist(target, target), kernel).mean()
    loss = kaa.mean() + kbb - 2.0 * kab.mean()
    if not with_grad:
        return loss, None
    g_a = (-2.0 / n ** 2) * (waa.sum(1)[:, None] * a - waa @ a)
    g_a += (2.0 / (n * mm)) * (wab.sum(1)[:, None] * a - wab @ target)
    d = z.shape[1]
    g_m = (g_a[:, :d] * z + g_a[:, d:]) * indf
    g_logit = g_m * m * (1 - m) / tau
    grads = {"W": g_logit.T @ feats, "b": g_logit.sum(0)}
    if hidden:
        g_feat = (g_logit @ params["W"]) * (1 - feats ** 2)
        grads["V"] = g_feat.T @ emb
        grads["c"] = g_feat.sum(0)
    return loss, grads


def fit_masker(labeled: Dataset, unlabeled: Dataset, kernel: KernelSpec | None = None,
               steps: int | None = None, batch: int | None = None, seed: int = 0,
               config: MaskerConfig | None = None) -> MaskModel:
    """Train the mask scorer by Adam on minibatch relaxed-mask MMD^2.

    Every ``eval_every`` steps the hard-mask MMD^2 on a fixed evaluation batch
    (common random numbers) is recorded; the best parameters seen, including
    the initial ones, are returned, so the reported final loss never exceeds
    the initial loss.
    """
    config = config or MaskerConfig()
    steps = config.steps if steps is None else steps
    batch = config.batch if batch is None else batch
    if labeled.schema.fingerprint() != unlabeled.schema.fingerprint():
        raise DataError("labeled and unlabeled schemas differ")
    if len(labeled) == 0 or len(unlabeled) == 0:
        raise DataError("masker needs nonempty labeled and unlabeled data")
    rng = np.random.default_rng(seed)
    std = Standardizer.fit(labeled, unlabeled)
    z_l, ind_l = std.transform(labeled), labeled.mask
    z_u, ind_u = std.transform(unlabeled), unlabeled.mask
    emb_l = joint_embedding(z_l, ind_l)
    emb_u = joint_embedding(z_u, ind_u)
    if kernel is None:
        kernel = median_bandwidths(emb_l, emb_u, seed=int(rng.integers(2 ** 31)))
    d, e = z_l.shape[1], emb_l.shape[1]

    params = {"W": np.zeros((d, config.hidden or e)), "b": np.full(d, config.init_keep_logit)}
    if config.hidden:
        params["V"] = rng.normal(0, 1.0 / np.sqrt(e), (config.hidden, e))
        params["c"] = np.zeros(config.hidden)

    # fixed evaluation batch and uniforms for hard-mask scoring
    ev_l = rng.choice(len(labeled), min(config.eval_rows, len(labeled)), replace=False)
    ev_u = rng.choice(len(unlabeled), min(config.eval_rows, len(unlabeled)), replace=False)
    ev_uniform = rng.random((len(ev_l), d))
    ev_target = emb_u[ev_u]

    def hard_loss(p):
        feats = np.tanh(emb_l[ev_l] @ p["V"].T + p["c"]) if "V" in p else emb_l[ev_l]
        prob = expit(feats @ p["W"].T + p["b"])
        keep = ind_l[ev_l] & (ev_uniform < prob)
        return mmd_squared(joint_embedding(z_l[ev_l], keep), ev_target, kernel)

    first = hard_loss(params)
    best, best_params = first, {k: v.copy() for k, v in params.items()}
    trace = [[0, first]]
    mom = {k: np.zeros_like(v) for k, v in params.items()}
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    for step in range(1, steps + 1):
        frac = (step - 1) / max(steps - 1, 1)
        tau = config.temperature + frac * (config.final_temperature - config.temperature)
        il = rng.choice(len(labeled), min(batch, len(labeled)), replace=False)
        iu = rng.choice(len(unlabeled), min(batch, len(unlabeled)), replace=False)
        uni = np.clip(rng.random((len(il), d)), 1e-12, 1 - 1e-12)
        noise = np.log(uni) - np.log1p(-uni)
        _, grads = relaxed_loss_and_grad(params, emb_l[il], z_l[il], ind_l[il], emb_u[iu],
                                         noise, tau, kernel)
        for k in params:
            mom[k] = b1 * mom[k] + (1 - b1) * grads[k]
            vel[k] = b2 * vel[k] + (1 - b2) * grads[k] ** 2
            mhat = mom[k] / (1 - b1 ** step)
            vhat = vel[k] / (1 - b2 ** step)
            params[k] = params[k] - config.learning_rate * mhat / (np.sqrt(vhat) + eps)
        if step % config.eval_every == 0 or step == steps:
            cur = hard_loss(params)
            trace.append([step, cur])
            if cur < best:
                best, best_params = cur, {k: v.copy() for k, v in params.items()}
    log.debug("masker: hard-mask MMD^2 %.5f -> %.5f", first, best)
    return MaskModel(best_params["W"], best_params["b"], std, kernel, config.final_temperature,
                     best_params.get("V"), best_params.get("c"), labeled.schema.fingerprint(),
                     {"initial_loss": first, "final_loss": best, "trace": trace})


def apply_mask(model: MaskModel, labeled: Dataset, seed: int = 0) -> Dataset:
    """Hide cells by hard Bernoulli draws from the model's keep probabilities."""
    p = model.keep_probabilities(labeled)
    keep = np.random.default_rng(seed).random(p.shape) < p
    return labeled.with_mask(labeled.mask & keep)


def augment_training(labeled: Dataset, masked: Dataset, ratio: float = 1.0, seed: int = 0) -> Dataset:
    """Labeled rows followed by a seeded ``ratio``-sized subsample of their masked copies."""
    if not 0 <= ratio <= 1:
        raise DomainError("augmentation ratio must lie in [0, 1]")
    if len(masked) != len(labeled) or np.any(masked.company_id != labeled.company_id):
        raise DataError("masked rows must come from the labeled rows")
    n_take = int(round(ratio * len(masked)))
    if n_take == 0:
        return labeled
    idx = np.sort(np.random.default_rng(seed).choice(len(masked), n_take, replace=False))
    return Dataset.concat([labeled, masked.take(idx)])


def embed(model_or_std, data: Dataset) -> np.ndarray:
    """Joint (value, indicator) embedding under a model's or standardizer's constants."""
    std = model_or_std.standardizer if isinstance(model_or_std, MaskModel) else model_or_std
    return joint_embedding(std.transform(data), data.mask)
