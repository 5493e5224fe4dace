"""Mask, boost, recalibrate: the full model fitted in one call."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import flow as flowmod
from . import gbdt, masker
from .dataset import Dataset
from .errors import DomainError
from .gamma import GammaParams

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    boost: gbdt.BoostConfig = field(default_factory=gbdt.BoostConfig)
    masker: masker.MaskerConfig = field(default_factory=masker.MaskerConfig)
    flow_bins: int = 8
    augmentation_ratio: float = 1.0
    patterned_dropout: bool = True
    recalibration: bool = True

    def __post_init__(self):
        if self.flow_bins < 1:
            raise DomainError("flow_bins must be at least 1")
        if not 0 <= self.augmentation_ratio <= 1:
            raise DomainError("augmentation_ratio must lie in [0, 1]")


def derived_seeds(seed: int) -> dict:
    """Every random decision of a pipeline fit, keyed by purpose."""
    return {"masker": seed, "train_mask": seed + 1, "train_sample": seed + 2,
            "valid_mask": seed + 3, "boost": seed + 4, "flow": seed + 5}


@dataclass
class FittedPipeline:
    masker: masker.MaskModel | None
    booster: gbdt.BoostedModel
    flow: flowmod.SplineFlow1D
    seeds: dict
    config: PipelineConfig

    def base(self, data: Dataset) -> GammaParams:
        return self.booster.predict(data)

    def distribution(self, data: Dataset) -> flowmod.RecalibratedDistribution:
        return flowmod.RecalibratedDistribution(self.base(data), self.flow)


def _augment(data: Dataset, mask_model, ratio: float, mask_seed: int, sample_seed: int) -> Dataset:
    return masker.augment_training(data, masker.apply_mask(mask_model, data, mask_seed), ratio, sample_seed)


def fit_pipeline(train: Dataset, valid: Dataset, unlabeled: Dataset | None,
                 config: PipelineConfig | None = None, seed: int = 0,
                 mask_model: masker.MaskModel | None = None) -> FittedPipeline:
    """Fit the masker (unless given), the boosted Gamma model and the flow.

    With patterned dropout the training and validation rows are each joined
    by masked copies; the validation PIT values of the (augmented) validation
    rows train the flow.
    """
    config = config or PipelineConfig()
    seeds = derived_seeds(seed)
    if config.patterned_dropout and mask_model is None:
        if unlabeled is None:
            raise DomainError("patterned dropout needs the unlabeled set")
        mask_model = masker.fit_masker(Dataset.concat([train, valid]), unlabeled,
                                       seed=seeds["masker"], config=config.masker)
    fit_train, fit_valid = train, valid
    if config.patterned_dropout:
        fit_train = _augment(train, mask_model, config.augmentation_ratio,
                             seeds["train_mask"], seeds["train_sample"])
        fit_valid = _augment(valid, mask_model, 1.0, seeds["valid_mask"], seeds["train_sample"])
    booster = gbdt.fit(fit_train, fit_valid, config.boost, seed=seeds["boost"])
    if config.recalibration:
        pit = booster.predict(fit_valid).cdf(fit_valid.target)
        flow = flowmod.fit_flow(pit, config.flow_bins, seed=seeds["flow"])
    else:
        flow = flowmod.SplineFlow1D.identity(config.flow_bins)
    log.info("pipeline fit: %d boosting rounds kept", booster.best_iteration)
    return FittedPipeline(mask_model if config.patterned_dropout else None, booster, flow, seeds, config)


def pit_values(dist, targets) -> np.ndarray:
    return np.asarray(dist.cdf(np.asarray(targets, dtype=float)), dtype=float)
