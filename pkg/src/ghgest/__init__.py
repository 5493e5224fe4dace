"""Distributional estimates of corporate greenhouse-gas emissions.

Boosted Gamma regression with native missing-value routing, a spline flow
that recalibrates its predictive CDFs, and an MMD-trained masker that teaches
the model the missingness patterns of non-disclosing companies.
"""
from .dataset import Dataset, FeatureSchema, load_csv, make_dataset, save_csv
from .errors import ConfigError, DataError, DomainError, GHGError, IntegrityError, NumericError
from .gamma import GammaParams
from .pipeline import FittedPipeline, PipelineConfig, fit_pipeline

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "Dataset", "DomainError", "FeatureSchema", "FittedPipeline",
    "GHGError", "GammaParams", "IntegrityError", "NumericError", "PipelineConfig",
    "fit_pipeline", "load_csv", "make_dataset", "save_csv", "__version__",
]
