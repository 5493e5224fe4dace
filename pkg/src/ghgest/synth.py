"""Synthetic labeled/unlabeled company panels with mismatched missingness.

The generator reproduces the structural pathologies of corporate emissions
data at desk scale: few disclosing companies, emissions driven by size,
sector and energy use, features that are missing in blocks, and blocks that
are observed far more often among disclosers than among everyone else.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (CATEGORICAL, LEVEL1_SECTORS, NUMERIC, SECTOR_LEVELS, Dataset,
                      FeatureSchema, make_dataset, save_csv)
from .errors import ConfigError

SCOPE2_COLUMN = "target_scope2"
REGIONS = ("Americas", "Europe", "Asia Pacific", "Middle East & Africa")
HEAVY_SECTORS = ("Utilities", "Energy", "Materials")


@dataclass
class MissingBlock:
    """Features that go missing together, with per-population observed rates."""

    name: str
    features: list[str]
    observed_labeled: float
    observed_unlabeled: float


def _default_blocks() -> list[MissingBlock]:
    return [
        MissingBlock("energy", ["energy_consumption", "electricity_use"], 0.97, 0.20),
        MissingBlock("environment", ["water_use", "waste_generated", "renewable_share"], 0.85, 0.05),
        MissingBlock("governance", ["board_size", "independent_directors"], 0.90, 0.08),
        MissingBlock("fundamentals", ["total_assets", "ppe", "capex"], 0.97, 0.75),
        MissingBlock("workforce", ["employees"], 0.95, 0.60),
        MissingBlock("size", ["revenue"], 0.995, 0.95),
    ]


@dataclass
class SynthConfig:
    companies: int = 22000
    years: tuple = (2015, 2020)
    labeled_fraction: float = 0.0227
    max_unlabeled_rows: int = 60000
    noise_features: int = 4
    co_missing_blocks: list = field(default_factory=_default_blocks)
    noise: str = "gamma"
    noise_shape: float = 5.0
    lognormal_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.co_missing_blocks = [b if isinstance(b, MissingBlock) else MissingBlock(**b)
                                  for b in self.co_missing_blocks]
        self.years = tuple(int(y) for y in self.years)
        if self.companies < 2:
            raise ConfigError("companies: need at least 2")
        if len(self.years) != 2 or self.years[0] > self.years[1]:
            raise ConfigError("years: expected (first, last) with first <= last")
        if not 0 < self.labeled_fraction <= 1:
            raise ConfigError("labeled_fraction: must lie in (0, 1]")
        if self.noise not in ("gamma", "lognormal"):
            raise ConfigError("noise: must be 'gamma' or 'lognormal'")
        if not self.noise_shape > 0:
            raise ConfigError("noise_shape: must be positive")
        if not self.lognormal_sigma > 0:
            raise ConfigError("lognormal_sigma: must be positive")
        if self.noise_features < 0 or self.max_unlabeled_rows < 0:
            raise ConfigError("noise_features/max_unlabeled_rows: must be nonnegative")
        seen = set()
        for b in self.co_missing_blocks:
            for rate in ("observed_labeled", "observed_unlabeled"):
                v = getattr(b, rate)
                if not 0 <= v <= 1:
                    raise ConfigError(f"co_missing_blocks.{b.name}.{rate}: {v} is not in [0, 1]")
            if seen.intersection(b.features):
                raise ConfigError(f"co_missing_blocks.{b.name}: feature groups must be disjoint")
            seen.update(b.features)
        unknown = seen - set(base_feature_names())
        if unknown:
            raise ConfigError(f"co_missing_blocks: unknown features {sorted(unknown)}")


def base_feature_names() -> list[str]:
    return ["revenue", "employees", "total_assets", "ppe", "capex", "energy_consumption",
            "electricity_use", "water_use", "waste_generated", "renewable_share",
            "board_size", "independent_directors"]


def make_schema(config: SynthConfig) -> FeatureSchema:
    cols = [(name, NUMERIC) for name in base_feature_names()]
    cols.append(("region", CATEGORICAL))
    cols += [(f"noise_{i}", NUMERIC) for i in range(config.noise_features)]
    return FeatureSchema(cols, SECTOR_LEVELS, {"region": list(REGIONS)})


@dataclass
class Oracle:
    """True generative parameters, sufficient to recompute conditional means."""

    noise: str
    noise_shape: float
    lognormal_sigma: float
    intercept: tuple
    sector_effect: dict
    subsector_effect: dict
    heavy_sectors: tuple = HEAVY_SECTORS

    def log_location(self, log_revenue, log_energy, log_electricity, sector_path, scope=1):
        """Log of the noise-free location of the emission distribution."""
        s = 0 if scope == 1 else 1
        l1 = np.array([p[0] for p in sector_path])
        sec = np.array([self.sector_effect[c][s] for c in l1])
        sub = np.array([self.subsector_effect["/".join(p[:4])][s] for p in sector_path])
        heavy = np.isin(l1, self.heavy_sectors).astype(float)
        centered = log_revenue - 6.0
        if scope == 1:
            # fuel burned scales emissions; heavy sectors burn dirtier fuel at scale
            size = 0.15 * centered - 0.04 * centered ** 2
            energy = (0.85 + 0.15 * heavy) * (log_energy - 6.0)
        else:
            size = 0.2 * centered
            energy = 0.8 * (log_electricity - 6.0)
        return self.intercept[s] + sec + sub + size + energy

    def mean_factor(self) -> float:
        """Ratio of the noise mean to the location."""
        if self.noise == "lognormal":
            return float(np.exp(0.5 * self.lognormal_sigma ** 2))
        return 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "Oracle":
        doc = dict(doc)
        doc["intercept"] = tuple(doc["intercept"])
        doc["heavy_sectors"] = tuple(doc.get("heavy_sectors", HEAVY_SECTORS))
        return cls(**doc)


def oracle_mean(oracle: Oracle, data: Dataset, latent: dict | None = None, scope: int = 1) -> np.ndarray:
    """True conditional mean emission of each row.

    The generator stores the complete (pre-masking) revenue and energy columns
    in ``latent``; when absent they are read from the dataset, which then must
    have those cells observed.
    """
    if latent is None:
        latent = {k: np.log(data.column(k)) for k in ("revenue", "energy_consumption", "electricity_use")}
    loc = oracle.log_location(latent["revenue"], latent["energy_consumption"],
                              latent["electricity_use"], data.sector_path, scope)
    return np.exp(loc) * oracle.mean_factor()


def _hierarchy(rng) -> tuple[list[tuple], dict, dict]:
    paths = []
    sector_effect = {}
    subsector_effect = {}
    base = {"Utilities": 1.1, "Energy": 1.0, "Materials": 0.8, "Industrials": 0.3,
            "Consumer Staples": 0.1, "Real Estate": -0.2, "Consumer Discretionary": -0.15,
            "Communications": -0.6, "Technology": -0.7, "Health Care": -0.55, "Financials": -1.1}
    for i, l1 in enumerate(LEVEL1_SECTORS):
        sector_effect[l1] = (base[l1], 0.5 * base[l1] + rng.normal(0, 0.2))
        for a in range(2):
            for b in range(2):
                for c in range(2):
                    code = (l1, f"{i:02d}{a}", f"{i:02d}{a}{b}", f"{i:02d}{a}{b}{c}")
                    paths.append(code)
                    subsector_effect["/".join(code)] = tuple(rng.normal(0, 0.1, 2))
    return paths, sector_effect, subsector_effect


def generate(config: SynthConfig | None = None):
    """Generate ``(labeled, unlabeled, oracle, latent)``.

    ``latent`` maps ``"labeled"``/``"unlabeled"`` to dicts of the complete log
    revenue/energy columns (before masking), used by :func:`oracle_mean`.
    Scope-2 targets of labeled rows are attached as ``scope2`` in the labeled
    latent dict.
    """
    config = config or SynthConfig()
    rng = np.random.default_rng(config.seed)
    paths, sector_effect, subsector_effect = _hierarchy(rng)
    oracle = Oracle(config.noise, config.noise_shape, config.lognormal_sigma,
                    (5.0, 4.2), sector_effect, subsector_effect)

    n_co = config.companies
    n_years = config.years[1] - config.years[0] + 1
    company_path = rng.integers(len(paths), size=n_co)
    company_region = rng.integers(len(REGIONS), size=n_co)
    sector_size = {l1: rng.normal(0, 0.3) for l1 in LEVEL1_SECTORS}
    heavy_intensity = {l1: (0.8 if l1 in HEAVY_SECTORS else -0.4) + rng.normal(0, 0.3)
                       for l1 in LEVEL1_SECTORS}
    l1_of_company = np.array([paths[p][0] for p in company_path])
    size0 = 6.0 + np.array([sector_size[s] for s in l1_of_company]) + rng.normal(0, 0.5, n_co)
    intensity0 = np.array([heavy_intensity[s] for s in l1_of_company]) + rng.normal(0, 1.2, n_co)
    n_labeled = max(1, int(round(config.labeled_fraction * n_co)))
    labeled_co = np.zeros(n_co, dtype=bool)
    labeled_co[rng.choice(n_co, n_labeled, replace=False)] = True

    co = np.repeat(np.arange(n_co), n_years)
    year = np.tile(np.arange(config.years[0], config.years[1] + 1), n_co)
    n = len(co)
    t = year - config.years[0]
    log_rev = size0[co] + 0.03 * t + rng.normal(0, 0.12, n)
    log_energy = log_rev + intensity0[co] + rng.normal(0, 0.15, n)
    log_elec = log_energy - 0.7 + rng.normal(0, 0.25, n)
    sector_path = np.array([paths[p] for p in company_path[co]], dtype=object)

    schema = make_schema(config)
    cols = {
        "revenue": np.exp(log_rev),
        "employees": np.exp(log_rev - 5.0 + rng.normal(0, 0.4, n)),
        "total_assets": np.exp(log_rev + 0.3 + rng.normal(0, 0.5, n)),
        "ppe": np.exp(log_rev - 0.5 + 0.8 * intensity0[co] + rng.normal(0, 0.4, n)),
        "capex": np.exp(log_rev - 2.0 + 0.3 * intensity0[co] + rng.normal(0, 0.6, n)),
        "energy_consumption": np.exp(log_energy),
        "electricity_use": np.exp(log_elec),
        "water_use": np.exp(log_energy - 1.0 + rng.normal(0, 0.6, n)),
        "waste_generated": np.exp(log_rev - 3.0 + rng.normal(0, 0.7, n)),
        "renewable_share": rng.beta(2, 5, n),
        "board_size": rng.integers(5, 16, n).astype(float),
        "independent_directors": rng.uniform(0.2, 0.9, n),
        "region": company_region[co].astype(float),
    }
    for i in range(config.noise_features):
        cols[f"noise_{i}"] = rng.normal(0, 1, n)
    values = np.column_stack([cols[name] for name in schema.names])

    is_lab = labeled_co[co]
    for block in config.co_missing_blocks:
        rate = np.where(is_lab, block.observed_labeled, block.observed_unlabeled)
        hidden = rng.random(n) >= rate
        for name in block.features:
            values[hidden, schema.index(name)] = np.nan
    for i in range(config.noise_features):
        values[rng.random(n) < 0.3, schema.index(f"noise_{i}")] = np.nan

    loc1 = oracle.log_location(log_rev, log_energy, log_elec, sector_path, 1)
    loc2 = oracle.log_location(log_rev, log_energy, log_elec, sector_path, 2)
    target1 = np.exp(loc1) * _noise(rng, config, n)
    target2 = np.exp(loc2) * _noise(rng, config, n)

    company_id = np.array([f"C{c:06d}" for c in co], dtype=object)
    lab_idx = np.flatnonzero(is_lab)
    unl_idx = np.flatnonzero(~is_lab)
    if len(unl_idx) > config.max_unlabeled_rows:
        unl_idx = np.sort(rng.choice(unl_idx, config.max_unlabeled_rows, replace=False))

    def part(idx, labeled):
        return make_dataset(schema, values[idx], company_id[idx], year[idx], sector_path[idx],
                            target1[idx] if labeled else None)

    latent = {
        "labeled": {"revenue": log_rev[lab_idx], "energy_consumption": log_energy[lab_idx],
                    "electricity_use": log_elec[lab_idx], "scope2": target2[lab_idx]},
        "unlabeled": {"revenue": log_rev[unl_idx], "energy_consumption": log_energy[unl_idx],
                      "electricity_use": log_elec[unl_idx]},
    }
    return part(lab_idx, True), part(unl_idx, False), oracle, latent


def _noise(rng, config: SynthConfig, n: int) -> np.ndarray:
    if config.noise == "gamma":
        return rng.gamma(config.noise_shape, 1.0 / config.noise_shape, n)
    return np.exp(config.lognormal_sigma * rng.standard_normal(n))


def write(out_dir, config: SynthConfig | None = None) -> dict:
    """Write labeled.csv, unlabeled.csv, schema.json and oracle.json to ``out_dir``."""
    config = config or SynthConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labeled, unlabeled, oracle, latent = generate(config)
    save_csv(labeled, out / "labeled.csv", extra_columns={SCOPE2_COLUMN: latent["labeled"]["scope2"]})
    save_csv(unlabeled, out / "unlabeled.csv")
    labeled.schema.save(out / "schema.json")
    doc = {"oracle": oracle.to_dict(), "config": _config_dict(config)}
    (out / "oracle.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return {"labeled": len(labeled), "unlabeled": len(unlabeled)}


def _config_dict(config: SynthConfig) -> dict:
    doc = asdict(config)
    doc["years"] = list(config.years)
    return doc
