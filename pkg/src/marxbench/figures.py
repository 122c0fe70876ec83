"""Figure rendering from report CSVs.

Reads the delimited artifacts a report run emitted and renders PNGs next
to them. Kept strictly downstream of the CSVs so the statistics layer
stays plot-free and the figures can be regenerated (or restyled) without
touching a store.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

log = logging.getLogger(__name__)


def _save(fig, path: Path, written: list[Path]) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)


def render_gr_paths(csv_path: Path, fig_dir: Path, written: list[Path]) -> None:
    df = pd.read_csv(csv_path)
    for (target, h), grp in df.groupby(["target", "h"]):
        fig, ax = plt.subplots(figsize=(7, 3.2))
        x = pd.to_datetime(grp["date"])
        ax.plot(x, grp["stat"], lw=1.2, label=str(grp["spec"].iloc[0]))
        crit05 = grp["crit_05"].iloc[0]
        crit10 = grp["crit_10"].iloc[0]
        for c, style in ((crit05, "--"), (crit10, ":")):
            ax.axhline(c, color="tab:red", ls=style, lw=0.9)
            ax.axhline(-c, color="tab:red", ls=style, lw=0.9)
        ax.axhline(0.0, color="black", lw=0.6)
        ax.set_title(f"{target} h={h}: fluctuation test vs {grp['benchmark'].iloc[0]}")
        ax.set_ylabel("statistic")
        ax.legend(loc="best", fontsize=8)
        _save(fig, fig_dir / f"gr_{target}_h{h}.png", written)


def render_cumulative(csv_path: Path, fig_dir: Path, written: list[Path]) -> None:
    df = pd.read_csv(csv_path)
    spec_cols = [c for c in df.columns if c not in ("date", "date_ym")]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    x = pd.to_datetime(df["date_ym"])
    for col in spec_cols:
        ax.plot(x, df[col], lw=1.1, label=col)
    ax.set_title(csv_path.stem.replace("_", " "))
    ax.set_ylabel("cumulative squared error")
    ax.legend(loc="best", fontsize=8)
    _save(fig, fig_dir / f"{csv_path.stem}.png", written)


def render_marginal_effects(csv_path: Path, fig_dir: Path, written: list[Path]) -> None:
    df = pd.read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    order = range(len(df))
    # matplotlib probes yerr elementwise, so hand it plain arrays
    yerr = [(df["alpha"] - df["ci_lo"]).to_numpy(),
            (df["ci_hi"] - df["alpha"]).to_numpy()]
    ax.errorbar(order, df["alpha"].to_numpy(), yerr=yerr, fmt="o", capsize=4)
    ax.axhline(0.0, color="black", lw=0.6)
    ax.set_xticks(list(order), df["feature"])
    ax.set_ylabel("average pseudo-R2 gain")
    ax.set_title("Marginal contribution of each feature block")
    _save(fig, fig_dir / "marginal_effects.png", written)


def render_figures(out_dir: str | Path) -> list[Path]:
    """Render every figure whose source CSV exists in the report directory."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    gr = out_dir / "gr_paths.csv"
    if gr.exists():
        render_gr_paths(gr, fig_dir, written)
    me = out_dir / "marginal_effects.csv"
    if me.exists():
        render_marginal_effects(me, fig_dir, written)
    for csv_path in sorted(out_dir.glob("cumulative_*.csv")):
        render_cumulative(csv_path, fig_dir, written)
    log.info("figures: %d rendered in %s", len(written), fig_dir)
    return written
