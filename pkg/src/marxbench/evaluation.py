"""Forecast evaluation: RMSE ratios, Diebold-Mariano tests, model
confidence sets, fluctuation paths, pseudo-R2 and marginal-effect
regressions.

All inputs are forecast records aligned on realization dates; all outputs
are plain arrays/frames ready for delimited export. Chart rendering lives
elsewhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats as sps

from . import dates
from .features import parse_featureset

log = logging.getLogger(__name__)

#: recession starts used for episode slicing (3 months before, 24 after)
EPISODES = (dates.ym(1990, 7), dates.ym(2001, 3), dates.ym(2007, 12))

# Two-sided fluctuation-test critical values keyed by mu = window/T
_GR_MU = np.arange(0.1, 0.95, 0.1)
_GR_CRIT = {
    0.05: np.array([3.393, 3.179, 3.012, 2.890, 2.779, 2.634, 2.560, 2.433, 2.278]),
    0.10: np.array([3.170, 2.948, 2.766, 2.626, 2.500, 2.356, 2.252, 2.130, 1.950]),
}


def records_frame(records) -> pd.DataFrame:
    """Flatten ok forecast records into a frame with realization dates."""
    rows = []
    for r in records:
        if r.status != "ok" or np.isnan(r.realized):
            continue
        rows.append({
            "target": r.target, "h": r.h, "model": r.model,
            "featureset": r.featureset, "origin": r.origin,
            "date": r.origin + r.h, "forecast": r.forecast,
            "realized": r.realized, "error": r.realized - r.forecast,
        })
    if not rows:
        raise ValueError("no scored forecast records")
    df = pd.DataFrame(rows)
    df["sq_error"] = df["error"] ** 2
    return df


@dataclass
class LossPanel:
    """Squared errors for one (target, h), aligned on common dates."""

    target: str
    h: int
    months: np.ndarray
    losses: dict[tuple[str, str], np.ndarray]

    @property
    def specs(self) -> list[tuple[str, str]]:
        return sorted(self.losses)

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.losses[s] for s in self.specs])


def loss_panel(df: pd.DataFrame, target: str, h: int,
               specs: list[tuple[str, str]] | None = None) -> LossPanel:
    sub = df[(df["target"] == target) & (df["h"] == h)]
    if specs is None:
        specs = sorted(set(zip(sub["model"], sub["featureset"])))
    series = {}
    common = None
    for spec in specs:
        s = sub[(sub["model"] == spec[0]) & (sub["featureset"] == spec[1])]
        dated = dict(zip(s["date"], s["sq_error"]))
        series[spec] = dated
        common = set(dated) if common is None else common & set(dated)
    if not common:
        raise ValueError(f"no common dates for {target} h={h}")
    months = np.array(sorted(common))
    losses = {spec: np.array([series[spec][m] for m in months]) for spec in specs}
    return LossPanel(target, h, months, losses)


def rmse(sq_errors: np.ndarray) -> float:
    sq_errors = np.asarray(sq_errors, dtype=float)
    if sq_errors.size == 0:
        raise ValueError("empty error set")
    return float(np.sqrt(sq_errors.mean()))


def _bartlett_lrv(d: np.ndarray, lag: int) -> float:
    """Bartlett long-run variance with truncation `lag` (weights 1 - l/(lag+1))."""
    d = np.asarray(d, dtype=float)
    t = len(d)
    dc = d - d.mean()
    s = float(dc @ dc) / t
    for l in range(1, min(lag, t - 1) + 1):
        gamma = float(dc[l:] @ dc[:-l]) / t
        s += 2.0 * (1.0 - l / (lag + 1.0)) * gamma
    return s


@dataclass(frozen=True)
class DMResult:
    stat: float | None
    p_value: float | None
    identical: bool
    n: int
    lag: int


def dm_test(d: np.ndarray, h: int = 1, harvey: bool = False) -> DMResult:
    """Equal-predictive-accuracy test from a loss differential series.

    Statistic: mean(d) / sqrt(HAC/T), Bartlett kernel with truncation h - 1,
    two-sided normal p-value. A zero-variance differential means the two
    forecasts are effectively identical and gets a flag instead of numbers.
    """
    d = np.asarray(d, dtype=float)
    t = len(d)
    if t < 2:
        raise ValueError("need at least 2 loss differentials")
    lag = max(h - 1, 0)
    if np.allclose(d.var(), 0.0):
        return DMResult(None, None, True, t, lag)
    s = _bartlett_lrv(d, lag)
    if s <= 0:  # truncated kernel can lose positive-definiteness
        s = float(np.var(d))
    stat = float(d.mean() / np.sqrt(s / t))
    if harvey:
        corr = np.sqrt((t + 1 - 2 * h + h * (h - 1) / t) / t)
        stat *= corr
        p = float(2 * sps.t.sf(abs(stat), df=t - 1))
    else:
        p = float(2 * sps.norm.sf(abs(stat)))
    return DMResult(stat, p, False, t, lag)


def significance_stars(p: float | None) -> str:
    if p is None:
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


def block_bootstrap_indices(t: int, block: int, reps: int, seed: int) -> np.ndarray:
    """Moving-block bootstrap row indices, shape (reps, t)."""
    block = min(block, t)
    rng = np.random.default_rng(seed)
    n_blocks = int(np.ceil(t / block))
    starts = rng.integers(0, t - block + 1, size=(reps, n_blocks))
    offsets = np.arange(block)
    idx = (starts[:, :, None] + offsets[None, None, :]).reshape(reps, -1)
    return idx[:, :t]


@dataclass
class MCSResult:
    members: list[tuple[str, str]]
    p_values: dict[tuple[str, str], float]
    eliminated: list[tuple[str, str]]  # in elimination order
    level: float
    degenerate: bool = False


def mcs(panel: LossPanel, level: float = 0.10, block: int = 12,
        reps: int = 5000, seed: int = 0) -> MCSResult:
    """Model confidence set by iterated T-max elimination.

    One moving-block bootstrap of the loss panel is drawn up front and
    reused across elimination rounds; p-values are monotonized so
    membership shrinks as the level rises.
    """
    specs = panel.specs
    if len(specs) < 2:
        raise ValueError("need at least 2 models for a confidence set")
    losses = panel.matrix()
    t, m = losses.shape
    col_means = losses.mean(axis=0)
    idx = block_bootstrap_indices(t, block, reps, seed)
    boot_means = losses[idx].mean(axis=1)  # (reps, m)

    active = list(range(m))
    p_values: dict[tuple[str, str], float] = {}
    eliminated: list[tuple[str, str]] = []
    p_running = 0.0
    degenerate = False
    while len(active) > 1:
        cm = col_means[active]
        d = cm - cm.mean()
        bm = boot_means[:, active]
        bd = bm - bm.mean(axis=1, keepdims=True)
        dev = bd - d
        var = (dev ** 2).mean(axis=0)
        if np.all(var <= 0):
            degenerate = True
            break
        sd = np.sqrt(np.where(var > 0, var, np.inf))
        t_stats = d / sd
        t_max = float(t_stats.max())
        t_boot = (dev / sd).max(axis=1)
        p_iter = float(np.mean(t_boot >= t_max))
        p_running = max(p_running, p_iter)
        worst = int(np.argmax(t_stats))
        spec = specs[active[worst]]
        p_values[spec] = p_running
        eliminated.append(spec)
        active.pop(worst)
    for i in active:
        p_values[specs[i]] = 1.0
    members = sorted(s for s, p in p_values.items() if p > level)
    if degenerate:
        members = sorted(specs)
    return MCSResult(members=members, p_values=p_values, eliminated=eliminated,
                     level=level, degenerate=degenerate)


def gr_critical(mu: float, level: float = 0.10) -> float:
    """Fluctuation-test critical value for relative window size mu,
    rounded to the nearest 0.05 and interpolated on the published grid."""
    if level not in _GR_CRIT:
        raise ValueError(f"no critical values tabulated at level {level}")
    mu = round(mu / 0.05) * 0.05
    mu = float(np.clip(mu, _GR_MU[0], _GR_MU[-1]))
    return float(np.interp(mu, _GR_MU, _GR_CRIT[level]))


@dataclass
class GRResult:
    stats: np.ndarray
    centers: np.ndarray  # month of each window's center
    window: int
    mu: float
    crit_05: float
    crit_10: float


def gr_fluctuation(d: np.ndarray, window: int, h: int = 1,
                   months: np.ndarray | None = None) -> GRResult:
    """Rolling-window standardized loss differential path.

    Each point is the equal-accuracy statistic computed on that window
    alone; with window = len(d) the path collapses to the full-sample
    statistic. Critical values are two-sided and time-uniform, keyed by
    mu = window / T.
    """
    d = np.asarray(d, dtype=float)
    t = len(d)
    if window > t:
        raise ValueError(f"window {window} exceeds series length {t}")
    if window < 2:
        raise ValueError("window must be >= 2")
    if months is None:
        months = np.arange(t)
    mu = window / t
    n_out = t - window + 1
    stats_path = np.empty(n_out)
    for i in range(n_out):
        seg = d[i : i + window]
        res = dm_test(seg, h=h)
        stats_path[i] = 0.0 if res.identical else res.stat
    centers = np.asarray(months)[window // 2 : window // 2 + n_out]
    return GRResult(stats_path, centers, window, mu,
                    gr_critical(mu, 0.05), gr_critical(mu, 0.10))


def pseudo_r2(df: pd.DataFrame) -> pd.DataFrame:
    """Per-record pseudo-R2: 1 - e^2 / OOS variance of the demeaned target.

    The denominator is computed once per (target, h) over the full span of
    realizations present in the frame.
    """
    out = df.copy()
    denom = {}
    for (target, h), grp in df.groupby(["target", "h"]):
        realized = grp.drop_duplicates("date").sort_values("date")["realized"].to_numpy()
        denom[(target, h)] = float(np.mean((realized - realized.mean()) ** 2))
    var = np.array([denom[(t, h)] for t, h in zip(out["target"], out["h"])])
    out["r2"] = 1.0 - out["sq_error"].to_numpy() / var
    return out


@dataclass
class MarginalEffect:
    feature: str
    alpha: float
    se: float
    ci_lo: float
    ci_hi: float
    n_obs: int
    n_groups: int
    by_cell: pd.DataFrame = field(default_factory=pd.DataFrame)
    skipped: list[tuple] = field(default_factory=list)


def _pair_specs(specs: list[tuple[str, str]], feature: str) -> list[tuple]:
    """Spec pairs (without f, with f) differing only by the feature block."""
    bare = {}
    for model, fs in specs:
        blocks = frozenset(parse_featureset(fs))
        bare[(model, blocks)] = (model, fs)
    pairs = []
    for (model, blocks), spec in bare.items():
        if feature in blocks:
            continue
        partner = bare.get((model, blocks | {feature}))
        if partner is not None:
            pairs.append((spec, partner))
    return pairs


def _dk_hac_slope(y: np.ndarray, x: np.ndarray, time_ids: np.ndarray) -> tuple[float, float]:
    """Slope of demeaned y on demeaned x with HAC (Bartlett) standard errors
    clustered through time aggregation, truncation floor(1.3 sqrt(T))."""
    sxx = float(x @ x)
    if sxx == 0:
        raise ValueError("no regressor variation after the within transform")
    alpha = float(x @ y) / sxx
    resid = y - alpha * x
    score = x * resid
    months = np.unique(time_ids)
    t = len(months)
    xi = np.array([score[time_ids == m].sum() for m in months])
    lag = int(np.floor(1.3 * np.sqrt(t)))
    s = _bartlett_lrv(xi, lag)
    if s <= 0:
        s = float(np.var(xi))
    se = float(np.sqrt(t * s) / sxx)
    return alpha, se


def marginal_effects(r2_df: pd.DataFrame, feature: str) -> MarginalEffect:
    """Average R2 gain from adding one feature block, holding the rest fixed.

    Observations are the R2 values of model pairs differing only by the
    block; (date, target, h) fixed effects are removed by within-group
    demeaning and the slope on the inclusion dummy is the estimate.
    """
    specs = sorted(set(zip(r2_df["model"], r2_df["featureset"])))
    pairs = _pair_specs(specs, feature)
    if not pairs:
        raise ValueError(f"no model pairs differing only by {feature!r}")
    keep = {s for pair in pairs for s in pair}
    df = r2_df[[(m, f) in keep for m, f in zip(r2_df["model"], r2_df["featureset"])]].copy()
    df["dummy"] = [1.0 if feature in parse_featureset(f) else 0.0 for f in df["featureset"]]

    group = df.groupby(["date", "target", "h"])
    y = (df["r2"] - group["r2"].transform("mean")).to_numpy()
    x = (df["dummy"] - group["dummy"].transform("mean")).to_numpy()
    alpha, se = _dk_hac_slope(y, x, df["date"].to_numpy())

    rows = []
    skipped = []
    for (target, h), cell in df.groupby(["target", "h"]):
        g = cell.groupby("date")
        yc = (cell["r2"] - g["r2"].transform("mean")).to_numpy()
        xc = (cell["dummy"] - g["dummy"].transform("mean")).to_numpy()
        try:
            a_c, se_c = _dk_hac_slope(yc, xc, cell["date"].to_numpy())
        except ValueError:
            skipped.append((target, h))
            continue
        rows.append({"target": target, "h": h, "alpha": a_c, "se": se_c,
                     "ci_lo": a_c - 1.96 * se_c, "ci_hi": a_c + 1.96 * se_c})
    by_cell = pd.DataFrame(rows)
    return MarginalEffect(
        feature=feature, alpha=alpha, se=se,
        ci_lo=alpha - 1.96 * se, ci_hi=alpha + 1.96 * se,
        n_obs=len(df), n_groups=int(group.ngroups),
        by_cell=by_cell, skipped=skipped,
    )


def rmse_table(df: pd.DataFrame, benchmark: tuple[str, str] = ("FM", "F")) -> pd.DataFrame:
    """Tidy RMSE/ratio/DM table per (target, h, model, featureset).

    Every comparison aligns each spec with the benchmark on common dates;
    the ratio for the benchmark against itself is exactly 1.
    """
    rows = []
    for (target, h), _ in df.groupby(["target", "h"]):
        panel = loss_panel(df, target, h)
        if benchmark not in panel.losses:
            raise ValueError(f"benchmark {benchmark} missing for {target} h={h}")
        bench = panel.losses[benchmark]
        bench_rmse = rmse(bench)
        for spec in panel.specs:
            losses = panel.losses[spec]
            this_rmse = rmse(losses)
            if spec == benchmark:
                ratio, dm = 1.0, DMResult(None, None, True, len(losses), max(h - 1, 0))
            else:
                ratio = this_rmse / bench_rmse if bench_rmse > 0 else np.inf
                dm = dm_test(losses - bench, h=h)
            rows.append({
                "target": target, "h": h, "model": spec[0], "featureset": spec[1],
                "rmse": this_rmse, "ratio": ratio,
                "dm_stat": np.nan if dm.stat is None else dm.stat,
                "dm_p": np.nan if dm.p_value is None else dm.p_value,
                "stars": significance_stars(dm.p_value),
                "identical_to_benchmark": dm.identical and spec != benchmark,
                "n_oos": len(losses),
            })
    table = pd.DataFrame(rows)
    table.attrs["benchmark"] = f"{benchmark[0]}:{benchmark[1]}"
    return table


def best_spec_table(rmse_df: pd.DataFrame) -> pd.DataFrame:
    """Minimal-RMSE specification per (target, h); exact ties all listed."""
    rows = []
    for (target, h), grp in rmse_df.groupby(["target", "h"]):
        best = grp["rmse"].min()
        for _, row in grp[grp["rmse"] == best].iterrows():
            rows.append({"target": target, "h": h, "model": row["model"],
                         "featureset": row["featureset"], "rmse": row["rmse"],
                         "ratio": row["ratio"]})
    return pd.DataFrame(rows)


def cumulative_errors(df: pd.DataFrame, target: str, h: int,
                      specs: list[tuple[str, str]] | None = None) -> pd.DataFrame:
    """Running cumulative squared errors per spec, aligned dates."""
    panel = loss_panel(df, target, h, specs)
    out = pd.DataFrame({"date": panel.months})
    out["date_ym"] = [dates.ym_str(int(m)) for m in panel.months]
    for spec in panel.specs:
        out[f"{spec[0]}:{spec[1]}"] = np.cumsum(panel.losses[spec])
    return out


def slice_episode(df: pd.DataFrame, event_month: int, before: int = 3,
                  after: int = 24) -> pd.DataFrame:
    """Rows from `before` months ahead of an event to `after` months past it."""
    lo, hi = event_month - before, event_month + after
    return df[(df["date"] >= lo) & (df["date"] <= hi)].copy()
