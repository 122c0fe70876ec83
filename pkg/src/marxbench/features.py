"""Feature-block construction and assembly.

Five block kinds feed the forecasting models: principal-component factors
of the stationary panel and their lags (F), stationary lags (X), moving
average rotations (MARX), per-series moving average factors (MAF), and
(log-)levels (Level). Blocks are always built *as of* a forecast origin:
PCA weights, standardizations and every row use only data dated at or
before the origin, so appending later data never changes an existing row.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import dates
from .fredmd import LOG_TCODES, RawPanel, StationaryPanel

log = logging.getLogger(__name__)

BLOCK_KINDS = ("F", "X", "MARX", "MAF", "Level")

#: the 15 block combinations run in the benchmark: {F?, X?} alone or with
#: one moving-average rotation, plus the four Level variants that anchor on X
FEATURE_SETS: tuple[tuple[str, ...], ...] = (
    ("X",),
    ("F",),
    ("F", "X"),
    ("MARX",),
    ("F", "MARX"),
    ("X", "MARX"),
    ("F", "X", "MARX"),
    ("MAF",),
    ("F", "MAF"),
    ("X", "MAF"),
    ("F", "X", "MAF"),
    ("X", "Level"),
    ("F", "X", "Level"),
    ("X", "MARX", "Level"),
    ("F", "X", "MARX", "Level"),
)


def featureset_id(blocks: tuple[str, ...]) -> str:
    return "-".join(blocks) if blocks else "AR"


def parse_featureset(text: str) -> tuple[str, ...]:
    text = text.strip()
    if text in ("", "AR"):
        return ()
    parts = tuple(text.split("-"))
    for part in parts:
        if part not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {part!r} in featureset {text!r}")
    order = {kind: i for i, kind in enumerate(BLOCK_KINDS)}
    return tuple(sorted(set(parts), key=order.__getitem__))


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureBlock:
    kind: str
    months: np.ndarray  # (T,) month ints
    values: np.ndarray  # (T, C) with NaN where history is insufficient
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.labels) != self.values.shape[1]:
            raise FeatureError("label count disagrees with column count")
        if len(set(self.labels)) != len(self.labels):
            raise FeatureError("duplicate column labels")


def rotation_matrices(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower-triangular cumulation matrix C and its inverse D (first difference).

    D @ C is the identity exactly over integers; beta = C @ theta maps
    increment coordinates back to lag coefficients.
    """
    if p < 1:
        raise ValueError("order must be >= 1")
    c = np.tril(np.ones((p, p), dtype=int))
    d = np.eye(p, dtype=int) - np.eye(p, k=-1, dtype=int)
    return c, d


def _standardize_columns(x: np.ndarray, names: tuple[str, ...]) -> np.ndarray:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    dead = np.flatnonzero(std == 0)
    if dead.size:
        raise FeatureError(f"zero-variance series in window: {names[dead[0]]}")
    return (x - mean) / std


def _pca_scores(xs: np.ndarray, k: int, names_for_error: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Principal-component scores of an already standardized matrix.

    Returns (scores T x k, loadings K x k, per-component variance). Component
    signs are normalized so each loading vector's largest-magnitude entry is
    positive.
    """
    t, k_cols = xs.shape
    if k > min(t, k_cols):
        raise FeatureError(f"k={k} exceeds dimensions {xs.shape} for {names_for_error}")
    u, s, vt = np.linalg.svd(xs, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-10)) if s.size else 0
    if k > rank:
        raise FeatureError(f"k={k} exceeds rank {rank} for {names_for_error}")
    scores = u[:, :k] * s[:k]
    loadings = vt[:k].T
    for j in range(k):
        pivot = np.argmax(np.abs(loadings[:, j]))
        if loadings[pivot, j] < 0:
            loadings[:, j] = -loadings[:, j]
            scores[:, j] = -scores[:, j]
    variance = s[:k] ** 2 / t
    return scores, loadings, variance


def extract_factors(
    months: np.ndarray, x: np.ndarray, k: int, names: tuple[str, ...]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Principal-component factors of a complete stationary window.

    Columns are standardized to zero mean and unit variance inside the
    window first. Returns (scores, loadings, explained variance), variance
    descending.
    """
    if np.isnan(x).any():
        raise FeatureError("factor window contains missing values")
    xs = _standardize_columns(x, names)
    return _pca_scores(xs, k, "factor window")


def lag_block(
    months: np.ndarray,
    values: np.ndarray,
    p: int,
    names: tuple[str, ...],
    kind: str = "X",
) -> FeatureBlock:
    """Columns [v, Lv, ..., L^p v] per input column, NaN before history starts."""
    if p < 0:
        raise ValueError("lag order must be >= 0")
    values = np.atleast_2d(np.asarray(values, dtype=float).T).T
    t, k = values.shape
    cols = np.full((t, k * (p + 1)), np.nan)
    labels = []
    for j in range(k):
        for lag in range(p + 1):
            c = j * (p + 1) + lag
            labels.append(f"{kind}:{names[j]}:L{lag}")
            if lag == 0:
                cols[:, c] = values[:, j]
            else:
                cols[lag:, c] = values[:-lag, j]
    return FeatureBlock(kind, months, cols, tuple(labels))


def build_marx(
    months: np.ndarray,
    x: np.ndarray,
    p_marx: int,
    names: tuple[str, ...],
    include_current: bool = True,
    normalize: bool = True,
) -> FeatureBlock:
    """Moving averages of increasing order 1..p_marx per series.

    Order p averages the p observations ending at X_t (or at X_{t-1} when
    ``include_current`` is off, the derivation's indexing). ``normalize``
    off gives the raw cumulative-sum rotation Z = XC instead of averages.
    """
    if p_marx < 1:
        raise ValueError("p_marx must be >= 1")
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    t, k = x.shape
    shift = 0 if include_current else 1
    cols = np.full((t, k * p_marx), np.nan)
    labels = []
    for j in range(k):
        csum = np.concatenate(([0.0], np.cumsum(x[:, j])))
        for p in range(1, p_marx + 1):
            c = j * p_marx + (p - 1)
            labels.append(f"MARX:{names[j]}:P{p}")
            first = p - 1 + shift  # earliest t with a full window of p terms
            if first >= t:
                continue
            ends = np.arange(first, t) - shift + 1
            sums = csum[ends] - csum[ends - p]
            cols[first:, c] = sums / p if normalize else sums
    return FeatureBlock("MARX", months, cols, tuple(labels))


def build_maf(
    months: np.ndarray,
    x: np.ndarray,
    p_maf: int,
    r: int,
    names: tuple[str, ...],
) -> FeatureBlock:
    """First r principal components of each series' own lag panel.

    The T x (p_maf + 1) panel [x_t, Lx_t, ..., L^{p_maf} x_t] is standardized
    column-wise and decomposed by PCA; the scores act as data-driven weighted
    moving averages of the series' recent history.
    """
    if p_maf + 1 < r:
        raise ValueError("p_maf + 1 must be >= r")
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    t, k = x.shape
    if t <= p_maf + 1:
        raise FeatureError("window too short for the MAF lag panel")
    cols = np.full((t, k * r), np.nan)
    labels = [f"MAF:{names[j]}:{i + 1}" for j in range(k) for i in range(r)]
    for j in range(k):
        panel = np.column_stack([np.roll(x[:, j], lag) for lag in range(p_maf + 1)])
        panel = panel[p_maf:]  # rows with full history
        std = panel.std(axis=0)
        if np.any(std == 0):
            raise FeatureError(f"near-constant series for MAF extraction: {names[j]}")
        panel_s = (panel - panel.mean(axis=0)) / std
        try:
            scores, _, _ = _pca_scores(panel_s, r, names[j])
        except FeatureError:
            raise FeatureError(f"lag panel rank below {r} for MAF extraction: {names[j]}") from None
        cols[p_maf:, j * r : (j + 1) * r] = scores
    return FeatureBlock("MAF", months, cols, tuple(labels))


def build_level_block(
    months: np.ndarray,
    h: np.ndarray,
    tcodes: np.ndarray,
    p_h: int,
    names: tuple[str, ...],
) -> FeatureBlock:
    """Lag block over raw levels, logged for multiplicative (tcode >= 4) series."""
    h = np.atleast_2d(np.asarray(h, dtype=float).T).T
    levels = h.copy()
    for j, code in enumerate(tcodes):
        if int(code) in LOG_TCODES:
            levels[:, j] = np.log(h[:, j])
    block = lag_block(months, levels, p_h, names, kind="Level")
    return block


@dataclass
class FeatureMatrix:
    """Own-lag block plus the requested feature blocks, column-concatenated."""

    target: str
    block_set: tuple[str, ...]
    months: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...]
    means: np.ndarray | None = field(default=None, repr=False)
    stds: np.ndarray | None = field(default=None, repr=False)

    @property
    def complete_mask(self) -> np.ndarray:
        return ~np.isnan(self.values).any(axis=1)

    def fit_scaler(self, train_mask: np.ndarray) -> None:
        """Record per-column standardization statistics from training rows."""
        rows = self.values[train_mask]
        self.means = rows.mean(axis=0)
        stds = rows.std(axis=0)
        stds[stds == 0] = 1.0
        self.stds = stds

    def standardized(self, rows: np.ndarray) -> np.ndarray:
        if self.means is None or self.stds is None:
            raise RuntimeError("fit_scaler must run before standardized()")
        return (rows - self.means) / self.stds

    def row_at(self, month: int) -> np.ndarray:
        idx = np.searchsorted(self.months, month)
        if idx >= len(self.months) or self.months[idx] != month:
            raise KeyError(f"no feature row dated {dates.ym_str(month)}")
        return self.values[idx]


def assemble_feature_matrix(
    target: str,
    own_values: np.ndarray,
    block_set: tuple[str, ...],
    blocks: dict[str, FeatureBlock],
    p_y: int,
    months: np.ndarray | None = None,
) -> FeatureMatrix:
    """Concatenate the target's own-lag block with the requested blocks.

    Own lags (0..p_y of the one-month target series) are always present;
    blocks join in canonical kind order. All pieces must share one date
    index.
    """
    order = {kind: i for i, kind in enumerate(BLOCK_KINDS)}
    chosen = sorted(set(block_set), key=order.__getitem__)
    if months is None:
        some = next(iter(blocks.values())) if blocks else None
        if some is None:
            raise FeatureError("months required when no blocks are passed")
        months = some.months
    own = lag_block(months, own_values, p_y, (target,), kind="OWN")
    pieces = [own]
    for kind in chosen:
        if kind not in blocks:
            raise FeatureError(f"block {kind!r} not available")
        pieces.append(blocks[kind])
    months = pieces[0].months
    for piece in pieces[1:]:
        if len(piece.months) != len(months) or not np.array_equal(piece.months, months):
            raise FeatureError(
                f"date misalignment between own-lag block and {piece.kind} block"
            )
    values = np.hstack([p.values for p in pieces])
    labels = tuple(label for p in pieces for label in p.labels)
    fm = FeatureMatrix(target, tuple(chosen), months, values, labels)
    n_bad = int((~fm.complete_mask).sum())
    if n_bad:
        log.debug(
            "%s/%s: %d rows with missing cells excluded from training",
            target, featureset_id(fm.block_set), n_bad,
        )
    return fm


def feature_matrix_to_csv(fm: FeatureMatrix) -> str:
    """Columnar CSV with one provenance header line per column."""
    buf = io.StringIO()
    for label in fm.labels:
        kind, source, index = label.split(":")
        buf.write(f"# column,{label},{kind},{source},{index}\n")
    buf.write("month," + ",".join(fm.labels) + "\n")
    for i, month in enumerate(fm.months):
        cells = ",".join("" if np.isnan(v) else repr(float(v)) for v in fm.values[i])
        buf.write(f"{dates.ym_str(int(month))},{cells}\n")
    return buf.getvalue()


@dataclass(frozen=True)
class FeatureParams:
    """Lag depths and extraction sizes for the five blocks."""

    n_factors: int = 8
    p_y: int = 12
    p_f: int = 12
    p_x: int = 12
    p_marx: int = 12
    p_maf: int = 12
    n_maf: int = 2
    p_level: int = 12
    marx_include_current: bool = True


@dataclass(frozen=True)
class BlockLibrary:
    """All five blocks built as of one forecast origin, on one date index."""

    as_of: int
    months: np.ndarray
    blocks: dict[str, FeatureBlock]
    series: tuple[str, ...]
    dropped: tuple[str, ...]

    def __getitem__(self, kind: str) -> FeatureBlock:
        return self.blocks[kind]

    def __contains__(self, kind: str) -> bool:
        return kind in self.blocks


def build_blocks(
    stationary: StationaryPanel,
    raw: RawPanel,
    as_of: int,
    params: FeatureParams,
    window_start: int | None = None,
    kinds: tuple[str, ...] = BLOCK_KINDS,
) -> BlockLibrary:
    """Build feature blocks from data dated in [window_start, as_of] only.

    Series with any missing stationary value inside the window are dropped
    (and reported) rather than imputed, so the factor and MAF extractions
    always see complete data.
    """
    months = stationary.months
    lo = 0 if window_start is None else int(np.searchsorted(months, window_start))
    hi = int(np.searchsorted(months, as_of, side="right"))
    if hi - lo < params.p_maf + 2:
        raise FeatureError("window too short to build feature blocks")
    win_months = months[lo:hi].copy()
    x = stationary.values[lo:hi]
    h = raw.values[lo:hi]

    keep = ~np.isnan(x).any(axis=0)
    dropped = tuple(name for name, ok in zip(stationary.mnemonics, keep) if not ok)
    if dropped:
        log.debug("as of %s: dropped incomplete series %s", dates.ym_str(as_of), dropped)
    names = tuple(name for name, ok in zip(stationary.mnemonics, keep) if ok)
    if not names:
        raise FeatureError("no complete series in window")
    x = x[:, keep]
    h = h[:, keep]
    tcodes = raw.tcodes[keep]

    out: dict[str, FeatureBlock] = {}
    if "F" in kinds:
        scores, _, _ = extract_factors(win_months, x, params.n_factors, names)
        factor_names = tuple(f"F{i + 1}" for i in range(params.n_factors))
        out["F"] = lag_block(win_months, scores, params.p_f, factor_names, kind="F")
    if "X" in kinds:
        out["X"] = lag_block(win_months, x, params.p_x, names, kind="X")
    if "MARX" in kinds:
        out["MARX"] = build_marx(
            win_months, x, params.p_marx, names,
            include_current=params.marx_include_current,
        )
    if "MAF" in kinds:
        out["MAF"] = build_maf(win_months, x, params.p_maf, params.n_maf, names)
    if "Level" in kinds:
        out["Level"] = build_level_block(win_months, h, tcodes, params.p_level, names)
    return BlockLibrary(as_of, win_months, out, names, dropped)
