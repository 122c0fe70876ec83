"""Report generation: delimited artifacts from a forecast store.

Everything here is deterministic given the store: CSVs carry no
timestamps (the run stamp JSON does), so regenerating a report from the
same store is byte-identical.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, dates
from . import evaluation as ev
from .harness import ForecastStore

log = logging.getLogger(__name__)


def _spec_id(model: str, featureset: str) -> str:
    return f"{model}:{featureset}"


def write_stamp(out_dir: Path, store: ForecastStore, benchmark: tuple[str, str],
                seed: int | None) -> Path:
    stamp = {
        "config_hash": store.config_hash,
        "data_hash": store.data_hash,
        "version": __version__,
        "seed": seed if seed is not None else store.config.get("seed"),
        "benchmark": _spec_id(*benchmark),
        "n_records": len(store.records),
        "n_failed": store.n_failed,
        "generated_unix": int(time.time()),
    }
    path = out_dir / "stamp.json"
    path.write_text(json.dumps(stamp, indent=2) + "\n")
    return path


def render_rmse_text(table: pd.DataFrame, h: int, benchmark: str,
                     mcs_members: set[tuple[str, str, str]] | None = None) -> str:
    """Aligned-text RMSE-ratio table for one horizon.

    Suffix symbols follow the usual note convention: *, **, *** for
    rejection of equal accuracy at 10/5/1 percent, and a trailing + for
    membership in the model confidence set.
    """
    sub = table[table["h"] == h]
    targets = sorted(sub["target"].unique())
    specs = sorted(set(zip(sub["model"], sub["featureset"])))
    width = max(len(_spec_id(m, f)) for m, f in specs) + 2
    col_w = 14
    lines = [
        f"RMSE ratios vs {benchmark}, h = {h}",
        "(* p<0.10, ** p<0.05, *** p<0.01 for equal accuracy; + in confidence set)",
        "",
        " " * width + "".join(t.rjust(col_w) for t in targets),
    ]
    lookup = {(r.target, r.model, r.featureset): r for r in sub.itertuples()}
    for model, fs in specs:
        cells = []
        for target in targets:
            row = lookup.get((target, model, fs))
            if row is None:
                cells.append("-".rjust(col_w))
                continue
            text = f"{row.ratio:.3f}{row.stars}"
            if mcs_members and (target, model, fs) in mcs_members:
                text += "+"
            cells.append(text.rjust(col_w))
        lines.append(_spec_id(model, fs).ljust(width) + "".join(cells))
    return "\n".join(lines) + "\n"


def write_report(
    store: ForecastStore,
    out_dir: str | Path,
    benchmark: tuple[str, str] = ("FM", "F"),
    mcs_level: float = 0.10,
    mcs_reps: int = 5000,
    gr_window_frac: float = 0.30,
    seed: int = 0,
) -> list[Path]:
    """Emit every report artifact into ``out_dir``; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, text: str) -> None:
        path = out_dir / name
        path.write_text(text)
        written.append(path)

    emit("forecasts.csv", store.to_csv())
    df = ev.records_frame(store.ok_records())
    table = ev.rmse_table(df, benchmark=benchmark)
    emit("rmse_full.csv", table.to_csv(index=False))

    # per-(target, h) confidence sets over all specs
    mcs_rows = []
    mcs_members: set[tuple[str, str, str]] = set()
    for (target, h), _ in df.groupby(["target", "h"]):
        panel = ev.loss_panel(df, target, h)
        if len(panel.specs) < 2:
            continue
        result = ev.mcs(panel, level=mcs_level, reps=mcs_reps, seed=seed)
        for spec in panel.specs:
            member = spec in result.members
            if member:
                mcs_members.add((target, spec[0], spec[1]))
            mcs_rows.append({
                "target": target, "h": h, "model": spec[0], "featureset": spec[1],
                "mcs_p": result.p_values[spec], "member": member,
                "degenerate": result.degenerate,
            })
    if mcs_rows:
        emit("mcs.csv", pd.DataFrame(mcs_rows).to_csv(index=False))

    for h in sorted(df["h"].unique()):
        sub = table[table["h"] == h].copy()
        sub["mcs_member"] = [
            (t, m, f) in mcs_members
            for t, m, f in zip(sub["target"], sub["model"], sub["featureset"])
        ]
        emit(f"rmse_h{h}.csv", sub.to_csv(index=False))
        emit(f"rmse_h{h}.txt",
             render_rmse_text(table, h, _spec_id(*benchmark), mcs_members))

    best = ev.best_spec_table(table)
    emit("best_specs.csv", best.to_csv(index=False))

    # marginal contribution of each block, overall and per (target, h)
    r2 = ev.pseudo_r2(df)
    me_rows, me_cell_rows = [], []
    for feature in ("F", "X", "MARX", "MAF", "Level"):
        try:
            effect = ev.marginal_effects(r2, feature)
        except ValueError:
            continue
        me_rows.append({"feature": feature, "alpha": effect.alpha, "se": effect.se,
                        "ci_lo": effect.ci_lo, "ci_hi": effect.ci_hi,
                        "n_obs": effect.n_obs, "n_groups": effect.n_groups})
        for _, row in effect.by_cell.iterrows():
            me_cell_rows.append({"feature": feature, **row.to_dict()})
    if me_rows:
        emit("marginal_effects.csv", pd.DataFrame(me_rows).to_csv(index=False))
    if me_cell_rows:
        emit("marginal_effects_by_cell.csv",
             pd.DataFrame(me_cell_rows).to_csv(index=False))

    # fluctuation paths and cumulative errors: benchmark vs best per cell
    gr_rows = []
    for _, brow in best.drop_duplicates(["target", "h"]).iterrows():
        target, h = brow["target"], int(brow["h"])
        spec = (brow["model"], brow["featureset"])
        if spec == benchmark:
            continue
        panel = ev.loss_panel(df, target, h, [benchmark, spec])
        d = panel.losses[spec] - panel.losses[benchmark]
        window = max(2, int(round(gr_window_frac * len(d))))
        try:
            path = ev.gr_fluctuation(d, window, h=h, months=panel.months)
        except ValueError:
            continue
        for center, stat in zip(path.centers, path.stats):
            gr_rows.append({
                "target": target, "h": h, "spec": _spec_id(*spec),
                "benchmark": _spec_id(*benchmark),
                "date": dates.ym_str(int(center)), "stat": stat,
                "crit_05": path.crit_05, "crit_10": path.crit_10,
                "window": path.window, "mu": path.mu,
            })
    if gr_rows:
        emit("gr_paths.csv", pd.DataFrame(gr_rows).to_csv(index=False))

    cum_paths = []
    for (target, h), _ in df.groupby(["target", "h"]):
        h = int(h)
        specs = {benchmark}
        b = best[(best["target"] == target) & (best["h"] == h)]
        specs.update((r["model"], r["featureset"]) for _, r in b.iterrows())
        if ("AR", "AR") in ev.loss_panel(df, target, h).losses:
            specs.add(("AR", "AR"))
        cum = ev.cumulative_errors(df, target, h, sorted(specs))
        name = f"cumulative_{target}_h{h}.csv"
        emit(name, cum.to_csv(index=False))
        cum_paths.append((target, h, cum))
        for event in ev.EPISODES:
            if cum["date"].min() <= event <= cum["date"].max():
                ep = ev.slice_episode(cum, event)
                base = ep.drop(columns=["date", "date_ym"]).iloc[0]
                rebased = ep.copy()
                for col in base.index:
                    rebased[col] = ep[col] - base[col]
                emit(f"cumulative_{target}_h{h}_episode_{dates.ym_str(event)}.csv",
                     rebased.to_csv(index=False))

    log.info("report: %d artifacts in %s", len(written), out_dir)
    return written
