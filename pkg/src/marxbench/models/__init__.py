"""Uniform fit/predict contract over the seven forecasting model families.

Families: AR and FM (least squares on lag designs), EN (elastic net),
AL (adaptive lasso), LB (componentwise linear boosting), RF (random
forest), BT (boosted trees). ``fit_model`` dispatches a ModelSpec; every
fitted object exposes ``predict(z, labels=None)``, is deterministic given
its spec, and serializes to a versioned dict for audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linear import (
    ConvergenceError,
    FittedLinear,
    SchemaError,
    fit_adaptive_lasso,
    fit_elastic_net,
    fit_linear_boost,
    fit_ols,
    lambda_max,
    standardize_columns,
)
from .trees import (
    FittedBoostedTrees,
    FittedForest,
    _tree_from_dict,
    fit_boosted_trees,
    fit_random_forest,
)

FAMILIES = ("AR", "FM", "EN", "AL", "LB", "RF", "BT")

# (low, high, integer?) bounds per hyperparameter name
_HYPER_RANGES: dict[str, tuple[float, float, bool]] = {
    "alpha": (0.0, 1.0, False),
    "lam": (0.0, np.inf, False),
    "lam_ridge": (0.0, np.inf, False),
    "lam_lasso": (0.0, np.inf, False),
    "gamma": (0.0, 5.0, False),
    "eta": (0.0, 1.0, False),
    "n_steps": (0, 500, True),
    "n_draw": (1, 10_000, True),
    "n_trees": (1, 10_000, True),
    "min_node": (1, 10**9, True),
    "mtry": (1, 10**9, True),
    "max_depth": (1, 10**9, True),
    "p_y": (1, 24, True),
    "p_f": (1, 24, True),
}

_FAMILY_HYPERS: dict[str, set[str]] = {
    "AR": {"p_y"},
    "FM": {"p_y", "p_f"},
    "EN": {"alpha", "lam"},
    "AL": {"lam_ridge", "lam_lasso", "gamma"},
    "LB": {"n_steps", "eta", "n_draw"},
    "RF": {"n_trees", "min_node", "mtry"},
    "BT": {"n_steps", "eta", "max_depth"},
}


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus concrete hyperparameter values and an RNG seed."""

    family: str
    hyper: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        allowed = _FAMILY_HYPERS[self.family]
        for name, value in self.hyper.items():
            if name not in allowed:
                raise ValueError(f"{self.family} does not take hyperparameter {name!r}")
            lo, hi, is_int = _HYPER_RANGES[name]
            if is_int and int(value) != value:
                raise ValueError(f"{name} must be an integer, got {value!r}")
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} outside [{lo}, {hi}]")

    def key(self) -> tuple:
        return (self.family, tuple(sorted(self.hyper.items())), self.seed)


def fit_model(spec: ModelSpec, z: np.ndarray, y: np.ndarray, labels=None):
    """Fit one model family on a prepared design matrix."""
    h = spec.hyper
    if spec.family in ("AR", "FM"):
        return fit_ols(z, y, labels=labels, family=spec.family)
    if spec.family == "EN":
        return fit_elastic_net(z, y, alpha=h["alpha"], lam=h["lam"], labels=labels)
    if spec.family == "AL":
        return fit_adaptive_lasso(
            z, y, lam_ridge=h["lam_ridge"], lam_lasso=h["lam_lasso"],
            gamma=h.get("gamma", 1.0), labels=labels,
        )
    if spec.family == "LB":
        return fit_linear_boost(
            z, y, n_steps=h["n_steps"], eta=h["eta"],
            n_draw=h.get("n_draw"), seed=spec.seed, labels=labels,
        )
    if spec.family == "RF":
        return fit_random_forest(
            z, y, n_trees=h.get("n_trees", 200), min_node=h.get("min_node", 5),
            mtry=h.get("mtry"), seed=spec.seed, labels=labels,
        )
    if spec.family == "BT":
        return fit_boosted_trees(
            z, y, n_steps=h["n_steps"], eta=h["eta"],
            max_depth=h.get("max_depth", 10), seed=spec.seed, labels=labels,
        )
    raise ValueError(f"unknown model family {spec.family!r}")


def model_from_dict(d: dict):
    """Rebuild a fitted model from its serialized form."""
    if d.get("version") != 1:
        raise ValueError(f"unsupported serialization version {d.get('version')!r}")
    labels = tuple(d["labels"]) if d.get("labels") is not None else None
    if d["kind"] == "linear":
        return FittedLinear(
            family=d["family"],
            beta=np.asarray(d["beta"], dtype=float),
            z_mean=np.asarray(d["z_mean"], dtype=float),
            z_std=np.asarray(d["z_std"], dtype=float),
            y_mean=d["y_mean"],
            y_std=d["y_std"],
            labels=labels,
        )
    if d["kind"] == "forest":
        return FittedForest(
            family=d["family"],
            trees=[_tree_from_dict(t) for t in d["trees"]],
            n_features=d["n_features"],
            labels=labels,
        )
    if d["kind"] == "boosted_trees":
        return FittedBoostedTrees(
            family=d["family"],
            trees=[_tree_from_dict(t) for t in d["trees"]],
            base=d["base"],
            eta=d["eta"],
            y_min=d["y_min"],
            y_max=d["y_max"],
            n_features=d["n_features"],
            labels=labels,
        )
    raise ValueError(f"unknown serialized model kind {d['kind']!r}")


__all__ = [
    "FAMILIES",
    "ModelSpec",
    "ConvergenceError",
    "SchemaError",
    "FittedLinear",
    "FittedForest",
    "FittedBoostedTrees",
    "fit_model",
    "fit_ols",
    "fit_elastic_net",
    "fit_adaptive_lasso",
    "fit_linear_boost",
    "fit_random_forest",
    "fit_boosted_trees",
    "lambda_max",
    "standardize_columns",
    "model_from_dict",
]
