"""Machine-learning benchmark engine for monthly macroeconomic forecasting.

The package turns a FRED-MD-style vintage into an expanding-window
pseudo-out-of-sample experiment: stationarized predictors are expanded into
feature blocks (factors, lags, moving-average rotations, per-series factors,
levels), a grid of linear and tree models is tuned and refit along the sample,
and forecast records are scored with equal-accuracy tests, model confidence
sets, and block marginal effects.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config
from .features import FEATURE_SETS, assemble_feature_matrix, build_blocks
from .fredmd import parse_fredmd, stationarize
from .harness import ForecastStore, resume, run_poos
from .models import ModelSpec, fit_model

__all__ = [
    "__version__",
    "ExperimentConfig",
    "FEATURE_SETS",
    "ForecastStore",
    "ModelSpec",
    "assemble_feature_matrix",
    "build_blocks",
    "fit_model",
    "load_config",
    "parse_fredmd",
    "resume",
    "run_poos",
    "stationarize",
]
