"""Command-line driver: ``synth``, ``train``, ``predict`` and ``evaluate``.

Settings come from an INI file whose sections mirror the module configs
(``[synth]``, ``[boost]``, ``[masker]``, ``[pipeline]``, ``[baselines]``,
``[eval]``, ``[train]``, ``[data]``, ``[run]`` and optional ``[block:NAME]``
sections for co-missing feature groups). Relative paths resolve against the
config file's directory.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, evaluation, flow, gbdt, masker, synth
from .dataset import Dataset, FeatureSchema, grouped_kfold, infer_schema, load_csv
from .errors import ConfigError, DataError, DomainError, NumericError
from .pipeline import PipelineConfig, derived_seeds, fit_pipeline

log = logging.getLogger("ghgest")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_QUANTILES = (0.5, 0.9, 0.99)
TARGET_COLUMNS = {1: "target", 2: synth.SCOPE2_COLUMN}
BUNDLE_FILES = {"masker": "masker.json", "gbdt": "gbdt.json", "flow": "flow.json",
                "schema": "schema.json", "manifest": "manifest.json"}


# ------------------------------------------------------------------ config

@dataclasses.dataclass
class RunConfig:
    """Everything a command needs, resolved from the INI file and flags."""

    base_dir: Path
    seed: int = 0
    scope: int = 1
    labeled: Path | None = None
    unlabeled: Path | None = None
    schema: Path | None = None
    synth: synth.SynthConfig = dataclasses.field(default_factory=synth.SynthConfig)
    pipeline: PipelineConfig = dataclasses.field(default_factory=PipelineConfig)
    benchmark: evaluation.BenchmarkConfig = dataclasses.field(default_factory=evaluation.BenchmarkConfig)
    validation_folds: int = 10

    @property
    def target_column(self) -> str:
        return TARGET_COLUMNS[self.scope]

    def echo(self) -> dict:
        """Plain-data copy of the resolved settings for manifests."""
        def plain(x):
            if dataclasses.is_dataclass(x):
                return {f.name: plain(getattr(x, f.name)) for f in dataclasses.fields(x)}
            if isinstance(x, (list, tuple)):
                return [plain(v) for v in x]
            if isinstance(x, Path):
                return str(x)
            return x
        doc = plain(self)
        doc.pop("base_dir")
        doc["benchmark"].pop("pipeline")
        return doc


def _convert(parser, section: str, key: str, default):
    where = f"{section}.{key}"
    raw = parser.get(section, key)
    try:
        if isinstance(default, bool):
            return parser.getboolean(section, key)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _section_overrides(parser, section: str, cls, skip=()) -> dict:
    """Typed values of ``section`` for fields of dataclass ``cls``."""
    if not parser.has_section(section):
        return {}
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    out = {}
    for key in parser.options(section):
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown setting")
        out[key] = _convert(parser, section, key, getattr(defaults, key))
    return out


def _build(cls, section: str, kwargs: dict):
    try:
        return cls(**kwargs)
    except (ConfigError, DomainError) as exc:
        raise ConfigError(f"{section}.{exc}" if isinstance(exc, ConfigError) else f"{section}: {exc}") from None


def _synth_config(parser) -> synth.SynthConfig:
    kw = {}
    if parser.has_section("synth"):
        years = list(synth.SynthConfig().years)
        allowed = {f.name for f in dataclasses.fields(synth.SynthConfig)} - {"years", "co_missing_blocks"}
        defaults = synth.SynthConfig()
        for key in parser.options("synth"):
            if key == "first_year":
                years[0] = _convert(parser, "synth", key, 0)
            elif key == "last_year":
                years[1] = _convert(parser, "synth", key, 0)
            elif key in allowed:
                kw[key] = _convert(parser, "synth", key, getattr(defaults, key))
            else:
                raise ConfigError(f"synth.{key}: unknown setting")
        kw["years"] = tuple(years)
    blocks = {b.name: dataclasses.asdict(b) for b in synth.SynthConfig().co_missing_blocks}
    for section in parser.sections():
        if not section.startswith("block:"):
            continue
        name = section.split(":", 1)[1].strip()
        block = blocks.setdefault(name, {"name": name, "features": [], "observed_labeled": 1.0,
                                         "observed_unlabeled": 1.0})
        for key in parser.options(section):
            where = f"co_missing_blocks.{name}.{key}"
            if key == "features":
                block["features"] = [f.strip() for f in parser.get(section, key).split(",") if f.strip()]
            elif key in ("observed_labeled", "observed_unlabeled"):
                try:
                    block[key] = float(parser.get(section, key))
                except ValueError:
                    raise ConfigError(f"{where}: not a number") from None
            else:
                raise ConfigError(f"{where}: unknown setting")
        if not block["features"]:
            raise ConfigError(f"co_missing_blocks.{name}.features: required for a new block")
    kw["co_missing_blocks"] = list(blocks.values())
    return synth.SynthConfig(**kw)


def load_config(path: str | None, args: argparse.Namespace | None = None) -> RunConfig:
    """Parse the INI file (if any) and apply command-line overrides."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            parser.read(p, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{p}: {exc}") from None
        base = p.resolve().parent
    known = {"run", "data", "synth", "boost", "masker", "pipeline", "baselines", "eval", "train"}
    for section in parser.sections():
        if section not in known and not section.startswith("block:"):
            raise ConfigError(f"unknown section [{section}]")

    run = _section_overrides(parser, "run", _RunSection)
    cfg = RunConfig(base_dir=base, seed=run.get("seed", 0), scope=run.get("scope", 1))
    if parser.has_section("data"):
        for key in parser.options("data"):
            if key not in ("labeled", "unlabeled", "schema"):
                raise ConfigError(f"data.{key}: unknown setting")
            setattr(cfg, key, base / parser.get("data", key))
    cfg.synth = _synth_config(parser)
    boost = _build(gbdt.BoostConfig, "boost", _section_overrides(parser, "boost", gbdt.BoostConfig))
    mask_cfg = _build(masker.MaskerConfig, "masker", _section_overrides(parser, "masker", masker.MaskerConfig))
    pipe_kw = _section_overrides(parser, "pipeline", PipelineConfig, skip=("boost", "masker"))
    train = _section_overrides(parser, "train", _TrainSection)
    cfg.validation_folds = train.get("validation_folds", 10)
    if cfg.validation_folds < 2:
        raise ConfigError("train.validation_folds: need at least 2")
    bench_kw = _section_overrides(parser, "eval", evaluation.BenchmarkConfig, skip=("pipeline", "min_bucket"))
    bench_kw.update(_section_overrides(parser, "baselines", _BaselineSection))

    if args is not None:
        if getattr(args, "seed", None) is not None:
            cfg.seed = args.seed
        if getattr(args, "scope", None) is not None:
            cfg.scope = args.scope
        if getattr(args, "no_patterned_dropout", False):
            pipe_kw["patterned_dropout"] = False
        if getattr(args, "no_recalibration", False):
            pipe_kw["recalibration"] = False
    if cfg.scope not in TARGET_COLUMNS:
        raise ConfigError(f"run.scope: must be 1 or 2, got {cfg.scope}")
    seed_flag = args is not None and getattr(args, "seed", None) is not None
    if seed_flag or not (parser.has_section("synth") and parser.has_option("synth", "seed")):
        cfg.synth = dataclasses.replace(cfg.synth, seed=cfg.seed)
    cfg.pipeline = _build(PipelineConfig, "pipeline", dict(pipe_kw, boost=boost, masker=mask_cfg))
    cfg.benchmark = _build(evaluation.BenchmarkConfig, "eval", dict(bench_kw, pipeline=cfg.pipeline))
    return cfg


@dataclasses.dataclass
class _RunSection:
    seed: int = 0
    scope: int = 1


@dataclasses.dataclass
class _TrainSection:
    validation_folds: int = 10


@dataclasses.dataclass
class _BaselineSection:
    min_bucket: int = baselines.MIN_BUCKET


# -------------------------------------------------------------------- data

def _schema_for(cfg: RunConfig) -> FeatureSchema:
    if cfg.schema is not None:
        if not cfg.schema.is_file():
            raise DataError(f"schema file {cfg.schema} not found")
        return FeatureSchema.load(cfg.schema)
    guess = cfg.labeled.parent / "schema.json"
    if guess.is_file():
        return FeatureSchema.load(guess)
    return infer_schema(cfg.labeled, exclude=TARGET_COLUMNS.values())


def load_inputs(cfg: RunConfig, need_unlabeled: bool) -> tuple[Dataset, Dataset | None]:
    if cfg.labeled is None:
        raise ConfigError("data.labeled: required")
    if need_unlabeled and cfg.unlabeled is None:
        raise ConfigError("data.unlabeled: required (or pass --no-patterned-dropout)")
    schema = _schema_for(cfg)
    labeled = load_csv(cfg.labeled, schema, cfg.target_column)
    if labeled.target is None:
        raise DataError(f"{cfg.labeled}: no {cfg.target_column!r} column for scope {cfg.scope}")
    unlabeled = load_csv(cfg.unlabeled, schema, None) if cfg.unlabeled is not None else None
    log.info("loaded %d labeled rows%s", len(labeled),
             "" if unlabeled is None else f" and {len(unlabeled)} unlabeled rows")
    return labeled, unlabeled


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig, out: Path) -> None:
    counts = synth.write(out, cfg.synth)
    log.info("wrote %d labeled and %d unlabeled rows to %s", counts["labeled"], counts["unlabeled"], out)


def cmd_train(cfg: RunConfig, out: Path) -> None:
    pcfg = cfg.pipeline
    labeled, unlabeled = load_inputs(cfg, pcfg.patterned_dropout)
    split_seed = cfg.seed
    folds = grouped_kfold(labeled, cfg.validation_folds, split_seed)
    train, valid = _train_valid(labeled, folds)
    fitted = fit_pipeline(train, valid, unlabeled, pcfg, cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    for stale in BUNDLE_FILES.values():
        (out / stale).unlink(missing_ok=True)
    if fitted.masker is not None:
        fitted.masker.save(out / BUNDLE_FILES["masker"])
    fitted.booster.save(out / BUNDLE_FILES["gbdt"])
    fitted.flow.save(out / BUNDLE_FILES["flow"])
    labeled.schema.save(out / BUNDLE_FILES["schema"])
    inputs = {"labeled": {"path": str(cfg.labeled), "sha256": _sha256(cfg.labeled)}}
    if cfg.unlabeled is not None:
        inputs["unlabeled"] = {"path": str(cfg.unlabeled), "sha256": _sha256(cfg.unlabeled)}
    manifest = {
        "package_version": __version__,
        "formats": {"gbdt": [gbdt.FORMAT, gbdt.VERSION], "masker": [masker.FORMAT, masker.VERSION]},
        "scope": cfg.scope,
        "target_column": cfg.target_column,
        "patterned_dropout": pcfg.patterned_dropout,
        "recalibration": pcfg.recalibration,
        "ablations": [name for name, on in (("patterned_dropout", pcfg.patterned_dropout),
                                            ("recalibration", pcfg.recalibration)) if not on],
        "seeds": {"run": cfg.seed, "validation_split": split_seed, **derived_seeds(cfg.seed)},
        "best_iteration": fitted.booster.best_iteration,
        "rows": {"train": len(train), "valid": len(valid)},
        "schema_fingerprint": labeled.schema.fingerprint(),
        "inputs": inputs,
        "files": sorted(p.name for p in out.iterdir() if p.name != BUNDLE_FILES["manifest"]),
        "config": cfg.echo(),
    }
    _write_json(out / BUNDLE_FILES["manifest"], manifest)
    log.info("bundle written to %s (best iteration %d)", out, fitted.booster.best_iteration)


def _train_valid(labeled: Dataset, folds):
    """Training rows and validation rows (fold 0 of the grouped split)."""
    row_fold = folds.fold_of_rows(labeled)
    return labeled.take(np.flatnonzero(row_fold != 0)), labeled.take(np.flatnonzero(row_fold == 0))


def quantile_header(u: float) -> str:
    pct = 100.0 * u
    return f"q{int(round(pct))}" if abs(pct - round(pct)) < 1e-9 else f"q{pct:g}".replace(".", "_")


def cmd_predict(bundle: Path, input_csv: Path, out: Path, quantiles=DEFAULT_QUANTILES) -> None:
    manifest_path = bundle / BUNDLE_FILES["manifest"]
    if not manifest_path.is_file():
        raise DataError(f"{bundle}: not a model bundle (no manifest)")
    schema = FeatureSchema.load(bundle / BUNDLE_FILES["schema"])
    model = gbdt.BoostedModel.load(bundle / BUNDLE_FILES["gbdt"])
    spline = flow.SplineFlow1D.load(bundle / BUNDLE_FILES["flow"])
    if model.schema_fingerprint != schema.fingerprint():
        raise DataError("bundle schema does not match its model")
    data = load_csv(input_csv, schema, None)
    dist = flow.RecalibratedDistribution(model.predict(data), spline)
    qs = [float(q) for q in quantiles]
    if any(not 0 < q < 1 for q in qs):
        raise ConfigError("quantiles must lie in (0, 1)")
    qvals = [dist.quantile(q) for q in qs]
    mean = dist.mean()
    header = ["company_id", "fiscal_year", "mean"] + [quantile_header(q) for q in qs] + ["shape", "scale"]
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(data)):
            cells = [str(data.company_id[i]), str(int(data.fiscal_year[i])), repr(float(mean[i]))]
            cells += [repr(float(q[i])) for q in qvals]
            cells += [repr(float(dist.base.shape[i])), repr(float(dist.base.scale[i]))]
            fh.write(",".join(cells) + "\n")
    log.info("wrote %d predictions to %s", len(data), out)


def cmd_evaluate(cfg: RunConfig, out: Path) -> None:
    labeled, unlabeled = load_inputs(cfg, True)
    report = evaluation.run_cv_benchmark(labeled, unlabeled, cfg.benchmark, cfg.seed)
    report["run"] = {"package_version": __version__, "scope": cfg.scope, "target_column": cfg.target_column,
                     "config": cfg.echo()}
    paths = evaluation.write_report(report, out)
    log.info("wrote %s", ", ".join(p.name for p in paths))


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ghgest", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="INI settings file")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int, help="overrides [run] seed")

    def modelling(p):
        p.add_argument("--scope", type=int, choices=(1, 2), help="1: scope-1 target, 2: scope-2 target")
        p.add_argument("--no-patterned-dropout", action="store_true", help="skip the masker (ablation)")
        p.add_argument("--no-recalibration", action="store_true", help="use the identity flow")

    common(sub.add_parser("synth", help="generate synthetic labeled/unlabeled datasets"), "output directory")
    p = sub.add_parser("train", help="fit masker, boosted model and flow; write a bundle")
    common(p, "bundle directory")
    modelling(p)
    p = sub.add_parser("predict", help="predictive distributions for a CSV of rows")
    p.add_argument("--bundle", required=True, help="bundle directory written by train")
    p.add_argument("--input", required=True, help="CSV in the training schema")
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.add_argument("--quantiles", default=",".join(str(q) for q in DEFAULT_QUANTILES),
                   help="comma-separated probabilities (default 0.5,0.9,0.99)")
    p = sub.add_parser("evaluate", help="cross-validated benchmark; write report JSON and CSV tables")
    common(p, "report directory")
    modelling(p)
    return ap


def run(args: argparse.Namespace) -> None:
    if args.command == "predict":
        try:
            qs = [float(q) for q in args.quantiles.split(",") if q.strip()]
        except ValueError:
            raise ConfigError(f"--quantiles: cannot parse {args.quantiles!r}") from None
        cmd_predict(Path(args.bundle), Path(args.input), Path(args.out), qs or DEFAULT_QUANTILES)
        return
    cfg = load_config(args.config, args)
    out = Path(args.out)
    {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate}[args.command](cfg, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        run(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, DomainError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
