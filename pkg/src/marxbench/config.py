"""Experiment configuration: declarative TOML in, frozen dataclass out.

The shipped ``data/default.toml`` mirrors every field with the canonical
benchmark settings (10 targets, 6 horizons, 7 model families, 15 feature
sets, POOS 1980-2017), so the headline experiment is a single command.
A stable hash of the configuration guards stores against mismatched
resumes.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import dates
from .features import FEATURE_SETS, FeatureParams, featureset_id, parse_featureset
from .models import FAMILIES

#: display aliases for the ten headline target series
TARGET_LABELS = {
    "INDPRO": "IP",
    "PAYEMS": "EMP",
    "UNRATE": "UR",
    "W875RX1": "INC",
    "DPCERA3M086SBEA": "CONS",
    "RETAILx": "RET",
    "HOUST": "HOUST",
    "M2SL": "M2",
    "CPIAUCSL": "CPI",
    "WPSFD49207": "PPI",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # grid
    targets: tuple[str, ...] = tuple(TARGET_LABELS)
    difference_targets: tuple[str, ...] = ("UNRATE",)
    horizons: tuple[int, ...] = (1, 3, 6, 9, 12, 24)
    models: tuple[str, ...] = FAMILIES
    featuresets: tuple[str, ...] = tuple(featureset_id(s) for s in FEATURE_SETS)
    # sample
    train_start: int = dates.ym(1960, 1)
    poos_start: int = dates.ym(1980, 1)  # first realization month scored
    poos_end: int = dates.ym(2017, 12)  # last realization month scored
    # feature block sizes
    n_factors: int = 8
    p_y: int = 12
    p_f: int = 12
    p_x: int = 12
    p_marx: int = 12
    p_maf: int = 12
    n_maf: int = 2
    p_level: int = 12
    marx_include_current: bool = True
    # tuning
    cv_folds: int = 5
    retune_interval: int = 24
    bic_max_lag: int = 12
    en_alpha_step: float = 0.01
    en_n_lambda: int = 100
    en_lambda_min_ratio: float = 1e-4
    ga_generations: int = 25
    ga_population: int = 25
    bt_budget: int = 50
    lb_max_steps: int = 500
    bt_max_steps: int = 500
    al_lam_ridge_lo: float = 1e-3
    al_lam_ridge_hi: float = 1e3
    # fixed model settings
    rf_n_trees: int = 200
    rf_min_node: int = 5
    bt_max_depth: int = 10
    # run
    seed: int = 20200617
    workers: int = 1
    benchmark_model: str = "FM"
    benchmark_featureset: str = "F"
    min_completion: float = 0.95

    def __post_init__(self) -> None:
        for name in self.models:
            if name not in FAMILIES:
                raise ConfigError(f"unknown model family {name!r}")
        for fs in self.featuresets:
            parse_featureset(fs)
        for h in self.horizons:
            if h < 1:
                raise ConfigError(f"horizon must be >= 1, got {h}")
        guard = max(self.horizons) + max(
            self.p_y, self.p_f, self.p_x, self.p_marx, self.p_maf, self.p_level
        )
        if self.poos_start <= self.train_start + guard:
            raise ConfigError(
                "POOS start must come after train start plus the longest "
                f"horizon and lag depth ({guard} months)"
            )
        if self.poos_end < self.poos_start:
            raise ConfigError("POOS end before POOS start")
        if not 0.0 < self.min_completion <= 1.0:
            raise ConfigError("min_completion must lie in (0, 1]")

    def feature_params(self) -> FeatureParams:
        return FeatureParams(
            n_factors=self.n_factors,
            p_y=self.p_y,
            p_f=self.p_f,
            p_x=self.p_x,
            p_marx=self.p_marx,
            p_maf=self.p_maf,
            n_maf=self.n_maf,
            p_level=self.p_level,
            marx_include_current=self.marx_include_current,
        )

    def convention(self, target: str) -> str:
        return "difference" if target in self.difference_targets else "growth"

    def grid(self) -> list[tuple[str, int, str, str]]:
        """All (target, horizon, model, featureset) pipelines.

        AR and FM carry fixed designs (own lags; own lags plus factors), so
        they contribute one pipeline per (target, horizon) regardless of the
        featureset list.
        """
        cells = []
        for target in self.targets:
            for h in self.horizons:
                for model in self.models:
                    if model == "AR":
                        cells.append((target, h, model, "AR"))
                    elif model == "FM":
                        cells.append((target, h, model, "F"))
                    else:
                        for fs in self.featuresets:
                            cells.append((target, h, model, fs))
        return cells

    def origins(self, h: int) -> list[int]:
        """Forecast origins whose realization month falls inside the POOS."""
        return list(dates.month_range(self.poos_start - h, self.poos_end - h))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("train_start", "poos_start", "poos_end"):
            d[key] = dates.ym_str(d[key])
        return d

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("workers")  # runtime concern, never affects results
        blob = json.dumps(d, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_DATE_KEYS = {"train_start", "poos_start", "poos_end"}
_TUPLE_KEYS = {"targets", "difference_targets", "horizons", "models", "featuresets"}


def config_from_dict(raw: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _DATE_KEYS:
            value = dates.parse_month(str(value))
        elif key in _TUPLE_KEYS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{key} must be an array")
            value = tuple(value)
        kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Load a TOML config file merged over the defaults, then overrides."""
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"unreadable config {path}: {exc}") from exc
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw)


def default_config_text() -> str:
    """The packaged default configuration file's contents."""
    return resources.files("marxbench").joinpath("data/default.toml").read_text()
