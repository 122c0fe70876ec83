"""Expanding-window pseudo-out-of-sample experiment driver.

Every grid cell (target, horizon, model, featureset, origin) is fitted on
data dated at or before its origin and forecasts the target realized at
origin + h. Records accumulate in an append-only store keyed by cell, with
a config/data hash header so a resumed run can refuse mismatched inputs.
Cell failures are recorded and isolated; they never abort the sweep.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dates
from .config import ExperimentConfig
from .features import (
    BlockLibrary,
    FeatureParams,
    assemble_feature_matrix,
    build_blocks,
    featureset_id,
    parse_featureset,
)
from .fredmd import RawPanel, StationaryPanel, build_target, stationarize
from .models import ModelSpec, fit_model, lambda_max
from .tuning import (
    SearchDim,
    TuningResult,
    cv_en_path,
    ga_optimize,
    kfold_cv,
    schedule,
    select_by_bic,
    stochastic_search,
)

log = logging.getLogger(__name__)


def derive_seed(base: int, *parts) -> int:
    """Stable 63-bit seed from the base seed and any cell coordinates."""
    text = "|".join([str(base), *map(str, parts)])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def data_hash(raw: RawPanel) -> str:
    h = hashlib.sha256()
    h.update(raw.months.tobytes())
    h.update(np.ascontiguousarray(raw.values).tobytes())
    h.update(",".join(raw.mnemonics).encode())
    h.update(raw.tcodes.tobytes())
    return h.hexdigest()[:16]


class CellError(RuntimeError):
    pass


class ResumeError(RuntimeError):
    pass


@dataclass
class ForecastRecord:
    target: str
    h: int
    model: str
    featureset: str
    origin: int  # month the forecast is made
    forecast: float
    realized: float
    train_start: int
    train_end: int
    n_train: int
    tuning_id: str
    seed: int
    status: str = "ok"  # ok | failed
    error: str = ""

    def key(self) -> tuple:
        return (self.target, self.h, self.model, self.featureset, self.origin)

    def to_dict(self) -> dict:
        return asdict(self)


class ForecastStore:
    """Keyed record collection persisted as an append-only JSONL log."""

    def __init__(self, config_hash: str, data_hash: str, config: dict | None = None,
                 path: str | Path | None = None):
        self.config_hash = config_hash
        self.data_hash = data_hash
        self.config = config or {}
        self.path = Path(path) if path is not None else None
        self.records: dict[tuple, ForecastRecord] = {}
        self.tunings: dict[str, dict] = {}
        self.audit: dict[tuple, dict[str, int]] = {}
        if self.path is not None and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w") as fh:
                fh.write(json.dumps({
                    "kind": "header", "version": 1,
                    "config_hash": self.config_hash,
                    "data_hash": self.data_hash,
                    "config": self.config,
                }) + "\n")

    def add(self, record: ForecastRecord) -> None:
        key = record.key()
        if key in self.records:
            raise ValueError(f"duplicate record key {key}")
        self.records[key] = record
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps({"kind": "record", **record.to_dict()}) + "\n")

    def add_tuning(self, cell_id: str, result: dict) -> None:
        self.tunings[cell_id] = result
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps({"kind": "tuning", "id": cell_id, "result": result}) + "\n")

    @property
    def n_ok(self) -> int:
        return sum(1 for r in self.records.values() if r.status == "ok")

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.records.values() if r.status == "failed")

    def failures(self) -> list[ForecastRecord]:
        return [r for r in self.records.values() if r.status == "failed"]

    def ok_records(self) -> list[ForecastRecord]:
        return [r for r in sorted(self.records.values(), key=lambda r: r.key())
                if r.status == "ok"]

    def compact(self) -> None:
        """Rewrite the log with records in key order (idempotent)."""
        if self.path is None:
            return
        with open(self.path, "w") as fh:
            fh.write(json.dumps({
                "kind": "header", "version": 1,
                "config_hash": self.config_hash,
                "data_hash": self.data_hash,
                "config": self.config,
            }) + "\n")
            for key in sorted(self.records):
                fh.write(json.dumps({"kind": "record", **self.records[key].to_dict()}) + "\n")
            for cell_id in sorted(self.tunings):
                fh.write(json.dumps({"kind": "tuning", "id": cell_id,
                                     "result": self.tunings[cell_id]}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ForecastStore":
        path = Path(path)
        store = None
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if obj["kind"] == "header":
                    store = cls(obj["config_hash"], obj["data_hash"], obj.get("config", {}))
                    store.path = path
                elif store is None:
                    raise ResumeError(f"no header line at the top of store {path}")
                elif obj["kind"] == "record":
                    obj.pop("kind")
                    rec = ForecastRecord(**obj)
                    store.records[rec.key()] = rec  # last write wins
                elif obj["kind"] == "tuning":
                    store.tunings[obj["id"]] = obj["result"]
        if store is None:
            raise ResumeError(f"no header line in store {path}")
        return store

    def to_csv(self) -> str:
        lines = ["target,h,model,featureset,origin,forecast,realized"]
        for rec in self.ok_records():
            realized = "" if np.isnan(rec.realized) else repr(rec.realized)
            lines.append(
                f"{rec.target},{rec.h},{rec.model},{rec.featureset},"
                f"{dates.ym_str(rec.origin)},{rec.forecast!r},{realized}"
            )
        return "\n".join(lines) + "\n"


def expected_keys(config: ExperimentConfig) -> set[tuple]:
    keys = set()
    for target, h, model, fs in config.grid():
        for origin in config.origins(h):
            keys.add((target, h, model, fs, origin))
    return keys


class PanelSource:
    """Precomputed panels and targets plus a per-cell read audit.

    Feature construction receives data sliced to months <= the forecast
    origin; the audit records the largest month each cell was served so
    tests can assert the no-look-ahead contract.
    """

    def __init__(self, raw: RawPanel, config: ExperimentConfig):
        self.raw = raw
        self.config = config
        self.stationary: StationaryPanel = stationarize(raw)
        self.targets: dict[tuple[str, int], dict[int, float]] = {}
        hs = set(config.horizons) | {1}
        for target in config.targets:
            if target not in raw.mnemonics:
                raise ValueError(f"target {target!r} not in panel")
            for h in sorted(hs):
                series = build_target(raw, target, h, config.convention(target))
                self.targets[(target, h)] = dict(
                    (int(m), float(v)) for m, v in zip(series.months, series.values)
                    if not np.isnan(v)
                )
        self._lib_cache: tuple[int, BlockLibrary] | None = None
        self.audit: dict[tuple, dict[str, int]] = {}

    def _note(self, cell: tuple, kind: str, month: int) -> None:
        entry = self.audit.setdefault(cell, {})
        entry[kind] = max(entry.get(kind, -(10**9)), month)

    def library(self, origin: int, kinds: tuple[str, ...], cell: tuple | None = None) -> BlockLibrary:
        if self._lib_cache is not None and self._lib_cache[0] == origin:
            lib = self._lib_cache[1]
        else:
            lib = build_blocks(
                self.stationary, self.raw, origin, self.config.feature_params(),
                window_start=self.config.train_start, kinds=kinds,
            )
            self._lib_cache = (origin, lib)
        if cell is not None:
            self._note(cell, "features", origin)
        return lib

    def monthly_target(self, target: str, months: np.ndarray, origin: int,
                       cell: tuple | None = None) -> np.ndarray:
        """One-month target values aligned to `months`, masked past the origin."""
        table = self.targets[(target, 1)]
        out = np.full(len(months), np.nan)
        for i, m in enumerate(months):
            if m <= origin:
                out[i] = table.get(int(m), np.nan)
        if cell is not None:
            self._note(cell, "features", origin)
        return out

    def labels_for(self, target: str, h: int, months: np.ndarray, origin: int,
                   cell: tuple | None = None) -> np.ndarray:
        """y_{s+h} for each month s, only where realized on or before origin."""
        table = self.targets[(target, h)]
        out = np.full(len(months), np.nan)
        for i, m in enumerate(months):
            r = int(m) + h
            if r <= origin:
                out[i] = table.get(r, np.nan)
        if cell is not None:
            self._note(cell, "labels", origin)
        return out

    def realized(self, target: str, h: int, origin: int, cell: tuple | None = None) -> float:
        r = origin + h
        if cell is not None:
            self._note(cell, "realized", r)
        return self.targets[(target, h)].get(r, float("nan"))


def _fm_column_indices(p_y_sel: int, p_f_sel: int, p_y_full: int, p_f_full: int,
                       n_factors: int) -> list[int]:
    cols = list(range(p_y_sel))
    offset = p_y_full + 1
    for i in range(n_factors):
        base = offset + i * (p_f_full + 1)
        cols.extend(range(base, base + p_f_sel))
    return cols


@dataclass
class _PipelineState:
    last_tuned: int | None = None
    hyper: dict = field(default_factory=dict)
    tuning_id: str = ""


def _tune_cell(
    model: str,
    z: np.ndarray,
    y: np.ndarray,
    config: ExperimentConfig,
    seed: int,
    p_y_full: int,
    p_f_full: int,
) -> TuningResult:
    """Run the model family's selection protocol on one training window."""
    if model == "AR":
        cands = [{"p_y": p} for p in range(1, config.bic_max_lag + 1)]
        return select_by_bic(lambda c: z[:, : c["p_y"]], y, cands)
    if model == "FM":
        cands = [
            {"p_y": py, "p_f": pf}
            for py in range(1, config.bic_max_lag + 1)
            for pf in range(1, config.bic_max_lag + 1)
        ]
        builder = lambda c: z[:, _fm_column_indices(
            c["p_y"], c["p_f"], p_y_full, p_f_full, config.n_factors)]
        return select_by_bic(builder, y, cands)
    if model == "EN":
        alphas = [round(config.en_alpha_step * i, 10)
                  for i in range(1, int(round(1 / config.en_alpha_step)) + 1)]
        return cv_en_path(z, y, alphas, config.en_n_lambda,
                          config.en_lambda_min_ratio, k=config.cv_folds, seed=seed)

    def cv_objective(family: str):
        def objective(cand) -> float:
            spec = ModelSpec(family, dict(cand), seed=seed)
            fit_fn = lambda zt, yt, c: fit_model(spec, zt, yt)
            try:
                result = kfold_cv(fit_fn, z, y, [cand], k=config.cv_folds, seed=seed)
            except Exception as exc:  # degenerate candidate: infinitely bad
                log.debug("tuning candidate %s failed: %s", cand, exc)
                return float("inf")
            return result.score
        return objective

    if model == "AL":
        lmax = lambda_max(z, y, 1.0)
        space = {
            "lam_ridge": SearchDim(config.al_lam_ridge_lo, config.al_lam_ridge_hi, log=True),
            "lam_lasso": SearchDim(max(lmax * 1e-4, 1e-12), max(lmax, 1e-10), log=True),
        }
        return ga_optimize(cv_objective("AL"), space,
                           generations=config.ga_generations,
                           population=config.ga_population, seed=seed)
    if model == "LB":
        space = {
            "n_steps": SearchDim(1, config.lb_max_steps, integer=True),
            "eta": SearchDim(0.0, 1.0),
        }
        return ga_optimize(cv_objective("LB"), space,
                           generations=config.ga_generations,
                           population=config.ga_population, seed=seed)
    if model == "BT":
        space = {
            "n_steps": SearchDim(1, config.bt_max_steps, integer=True),
            "eta": SearchDim(0.01, 1.0, log=True),
        }
        return stochastic_search(cv_objective("BT"), space,
                                 budget=config.bt_budget, seed=seed)
    if model == "RF":
        return TuningResult(method="FIXED", chosen={
            "n_trees": config.rf_n_trees, "min_node": config.rf_min_node,
        }, score=float("nan"))
    raise ValueError(f"unknown model family {model!r}")


def _run_cell(
    pipeline: tuple[str, int, str, str],
    origin: int,
    source: PanelSource,
    config: ExperimentConfig,
    state: _PipelineState,
    collect_tuning,
) -> ForecastRecord:
    target, h, model, fs = pipeline
    cell = (target, h, model, fs, origin)
    block_set = parse_featureset(fs)
    kinds_needed = _needed_kinds(config)
    lib = source.library(origin, kinds_needed, cell)
    months = lib.months
    own = source.monthly_target(target, months, origin, cell)
    fm = assemble_feature_matrix(target, own, block_set, lib.blocks, config.p_y,
                                 months=months)
    y_all = source.labels_for(target, h, months, origin, cell)
    train_mask = fm.complete_mask & ~np.isnan(y_all) & (months + h <= origin)
    n_train = int(train_mask.sum())
    if n_train < 2 * config.cv_folds:
        raise CellError(f"only {n_train} complete training rows")
    fm.fit_scaler(train_mask)
    z_train = fm.values[train_mask]
    y_train = y_all[train_mask]
    if months[-1] != origin:
        raise CellError(f"no feature row at origin {dates.ym_str(origin)}")
    z_fore = fm.values[-1]
    if np.isnan(z_fore).any():
        raise CellError("forecast row has missing cells")

    if schedule(origin, state.last_tuned, config.retune_interval):
        tune_seed = derive_seed(config.seed, target, h, model, fs, origin, "tune")
        result = _tune_cell(model, z_train, y_train, config, tune_seed,
                            config.p_y, config.p_f)
        result.selected_at = origin
        state.last_tuned = origin
        state.hyper = dict(result.chosen)
        state.tuning_id = f"{target}_{h}_{model}_{fs}_{dates.ym_str(origin)}"
        collect_tuning(state.tuning_id, result)

    fit_seed = derive_seed(config.seed, target, h, model, fs, origin, "fit")
    hyper = dict(state.hyper)
    if model == "AR":
        cols = list(range(hyper["p_y"]))
        z_fit, z_pred = z_train[:, cols], z_fore[cols]
    elif model == "FM":
        cols = _fm_column_indices(hyper["p_y"], hyper["p_f"], config.p_y,
                                  config.p_f, config.n_factors)
        z_fit, z_pred = z_train[:, cols], z_fore[cols]
    else:
        z_fit, z_pred = z_train, z_fore
    if model == "RF":
        hyper.setdefault("n_trees", config.rf_n_trees)
        hyper.setdefault("min_node", config.rf_min_node)
    if model == "BT":
        hyper.setdefault("max_depth", config.bt_max_depth)
    spec = ModelSpec(model, hyper, seed=fit_seed)
    fitted = fit_model(spec, z_fit, y_train)
    forecast = float(fitted.predict(z_pred[None, :])[0])
    realized = source.realized(target, h, origin, cell)
    return ForecastRecord(
        target=target, h=h, model=model, featureset=fs, origin=origin,
        forecast=forecast, realized=realized,
        train_start=int(months[0]), train_end=origin, n_train=n_train,
        tuning_id=state.tuning_id, seed=fit_seed,
    )


def _needed_kinds(config: ExperimentConfig) -> tuple[str, ...]:
    kinds: set[str] = set()
    if any(m not in ("AR", "FM") for m in config.models):
        for fs in config.featuresets:
            kinds.update(parse_featureset(fs))
    if "FM" in config.models:
        kinds.add("F")
    order = ("F", "X", "MARX", "MAF", "Level")
    return tuple(k for k in order if k in kinds)


def _run_pipelines(
    pipelines: list[tuple[str, int, str, str]],
    raw: RawPanel,
    config: ExperimentConfig,
    skip_keys: set[tuple] | None = None,
    progress=None,
    on_record=None,
) -> tuple[list[ForecastRecord], dict[str, dict], dict[tuple, dict]]:
    """Origin-major sweep over a pipeline batch (one process)."""
    source = PanelSource(raw, config)
    skip_keys = skip_keys or set()
    states = {p: _PipelineState() for p in pipelines}
    tunings: dict[str, dict] = {}
    records: list[ForecastRecord] = []
    by_origin: dict[int, list] = {}
    for p in pipelines:
        for origin in config.origins(p[1]):
            by_origin.setdefault(origin, []).append(p)
    for origin in sorted(by_origin):
        for pipeline in by_origin[origin]:
            target, h, model, fs = pipeline
            key = (target, h, model, fs, origin)
            state = states[pipeline]
            needs_fit = key not in skip_keys
            retune_due = schedule(origin, state.last_tuned, config.retune_interval)
            if not needs_fit and not retune_due:
                continue
            started = time.monotonic()
            try:
                if needs_fit:
                    rec = _run_cell(pipeline, origin, source, config, state,
                                    lambda tid, res: tunings.__setitem__(tid, res.to_dict()))
                    records.append(rec)
                    if on_record is not None:
                        on_record(rec)
                else:
                    # replay the tuning event so later cells see the right state
                    _replay_tuning(pipeline, origin, source, config, state,
                                   lambda tid, res: tunings.__setitem__(tid, res.to_dict()))
                    continue
            except Exception as exc:
                log.warning("cell %s failed: %s", key, exc)
                rec = ForecastRecord(
                    target=target, h=h, model=model, featureset=fs, origin=origin,
                    forecast=float("nan"), realized=float("nan"),
                    train_start=config.train_start, train_end=origin, n_train=0,
                    tuning_id=state.tuning_id, seed=0,
                    status="failed", error=f"{type(exc).__name__}: {exc}",
                )
                records.append(rec)
                if on_record is not None:
                    on_record(rec)
            if progress is not None:
                progress(key, time.monotonic() - started)
    return records, tunings, dict(source.audit)


def _replay_tuning(pipeline, origin, source, config, state, collect_tuning) -> None:
    """Rerun a due tuning event for a cell whose record already exists."""
    target, h, model, fs = pipeline
    cell = (target, h, model, fs, origin)
    block_set = parse_featureset(fs)
    lib = source.library(origin, _needed_kinds(config), cell)
    months = lib.months
    own = source.monthly_target(target, months, origin, cell)
    fm = assemble_feature_matrix(target, own, block_set, lib.blocks, config.p_y,
                                 months=months)
    y_all = source.labels_for(target, h, months, origin, cell)
    train_mask = fm.complete_mask & ~np.isnan(y_all) & (months + h <= origin)
    if int(train_mask.sum()) < 2 * config.cv_folds:
        return
    tune_seed = derive_seed(config.seed, target, h, model, fs, origin, "tune")
    result = _tune_cell(model, fm.values[train_mask], y_all[train_mask], config,
                        tune_seed, config.p_y, config.p_f)
    result.selected_at = origin
    state.last_tuned = origin
    state.hyper = dict(result.chosen)
    state.tuning_id = f"{target}_{h}_{model}_{fs}_{dates.ym_str(origin)}"
    collect_tuning(state.tuning_id, result)


def _worker(args) -> tuple[list[dict], dict[str, dict]]:
    pipelines, raw_parts, config, skip_keys = args
    raw = RawPanel(
        months=np.asarray(raw_parts["months"]),
        values=np.asarray(raw_parts["values"]),
        mnemonics=tuple(raw_parts["mnemonics"]),
        tcodes=np.asarray(raw_parts["tcodes"]),
    )
    records, tunings, _ = _run_pipelines(pipelines, raw, config, skip_keys)
    return [r.to_dict() for r in records], tunings


def run_poos(
    config: ExperimentConfig,
    raw: RawPanel,
    store_path: str | Path | None = None,
    workers: int | None = None,
    progress=None,
    _resume_store: ForecastStore | None = None,
) -> ForecastStore:
    """Run the full experiment grid, returning (and optionally persisting)
    the forecast store. Existing records from a resume store are kept."""
    workers = workers or config.workers
    skip_keys: set[tuple] = set()
    if _resume_store is not None:
        skip_keys = set(_resume_store.records)
    if _resume_store is not None:
        store = _resume_store
    else:
        store = ForecastStore(config.hash(), data_hash(raw), config.to_dict(),
                              path=store_path)
    pipelines = config.grid()
    pending = [p for p in pipelines
               if any((p[0], p[1], p[2], p[3], o) not in skip_keys
                      for o in config.origins(p[1]))]
    if workers <= 1 or len(pending) <= 1:
        # stream records straight into the log so interrupted runs keep work
        records, tunings, audit = _run_pipelines(
            pending, raw, config, skip_keys, progress, on_record=store.add
        )
        records = []
        store.audit = audit
    else:
        batches: list[list] = [[] for _ in range(min(workers, len(pending)))]
        for i, p in enumerate(pending):
            batches[i % len(batches)].append(p)
        raw_parts = {"months": raw.months, "values": raw.values,
                     "mnemonics": raw.mnemonics, "tcodes": raw.tcodes}
        records, tunings = [], {}
        with ProcessPoolExecutor(max_workers=len(batches)) as pool:
            for recs, tuns in pool.map(
                _worker, [(b, raw_parts, config, skip_keys) for b in batches]
            ):
                records.extend(ForecastRecord(**r) for r in recs)
                tunings.update(tuns)
        store.audit = {}
    for rec in sorted(records, key=lambda r: r.key()):
        store.add(rec)
    for tid in sorted(tunings):
        store.add_tuning(tid, tunings[tid])
    store.compact()
    n_expected = len(expected_keys(config))
    log.info("run complete: %d ok, %d failed, %d expected",
             store.n_ok, store.n_failed, n_expected)
    return store


def resume(store: ForecastStore, config: ExperimentConfig, raw: RawPanel) -> ForecastStore:
    """Fill only the missing cells of a partial store; refuse on config or
    data mismatch, reporting the differing keys."""
    if store.config_hash != config.hash():
        diffs = []
        new = config.to_dict()
        old = store.config or {}
        for key in sorted(set(new) | set(old)):
            if new.get(key) != old.get(key):
                diffs.append(f"{key}: store={old.get(key)!r} config={new.get(key)!r}")
        detail = "; ".join(diffs) if diffs else "config dict unavailable in store header"
        raise ResumeError(f"config hash mismatch ({store.config_hash} vs {config.hash()}): {detail}")
    if store.data_hash != data_hash(raw):
        raise ResumeError(f"data hash mismatch: store={store.data_hash}, panel={data_hash(raw)}")
    missing = expected_keys(config) - set(store.records)
    if not missing:
        log.info("store already complete; nothing to do")
        return store
    return run_poos(config, raw, workers=config.workers, _resume_store=store)
