"""Command-line driver: fetch/validate data, run/resume experiments,
emit reports, self-check."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import __version__, dates
from .config import ConfigError, load_config
from .fredmd import FetchError, ParseError, fetch_fredmd, parse_fredmd, scan_csv
from .harness import ForecastStore, ResumeError, resume as resume_store, run_poos
from .figures import render_figures
from .report import write_report, write_stamp
from .synthetic import synthetic_csv

log = logging.getLogger("marxbench")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


def _csv_list(_ctx, _param, value):
    if value is None:
        return None
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _parse_benchmark(text: str) -> tuple[str, str]:
    if ":" not in text:
        raise click.BadParameter("benchmark must look like MODEL:FEATURESET, e.g. FM:F")
    model, fs = text.split(":", 1)
    return model, fs


def _load_config_or_die(config_path, overrides):
    try:
        return load_config(config_path, overrides)
    except (ConfigError, OSError) as exc:
        raise click.ClickException(str(exc))


def _load_panel_or_die(data_path):
    if data_path is None:
        raise click.ClickException(
            "no data file: pass --data or set MARXBENCH_DATA"
        )
    try:
        return parse_fredmd(Path(data_path).read_bytes())
    except (ParseError, OSError) as exc:
        raise click.ClickException(f"{data_path}: {exc}")


_grid_options = [
    click.option("--targets", callback=_csv_list, default=None,
                 help="Comma-separated target mnemonics (grid filter)."),
    click.option("--horizons", callback=_csv_list, default=None,
                 help="Comma-separated horizons, e.g. 1,3."),
    click.option("--models", callback=_csv_list, default=None,
                 help="Comma-separated model families."),
    click.option("--featuresets", callback=_csv_list, default=None,
                 help="Comma-separated featureset ids, e.g. F,F-X-MARX."),
]


def _add_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


def _overrides(targets, horizons, models, featuresets, seed, workers):
    out = {}
    if targets:
        out["targets"] = targets
    if horizons:
        out["horizons"] = tuple(int(h) for h in horizons)
    if models:
        out["models"] = models
    if featuresets:
        out["featuresets"] = featuresets
    if seed is not None:
        out["seed"] = seed
    if workers is not None:
        out["workers"] = workers
    return out


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Macroeconomic forecasting benchmark over FRED-MD-style panels."""


@main.command()
@click.option("--url", default=None, help="Vintage CSV URL to download.")
@click.option("--cache", type=click.Path(), default="cache", show_default=True,
              help="Cache directory for downloaded vintages.")
@click.option("--synthetic", is_flag=True, help="Generate a synthetic vintage instead.")
@click.option("--months", type=int, default=732, show_default=True,
              help="Synthetic panel length in months.")
@click.option("--seed", type=int, default=1959, show_default=True,
              help="Synthetic generator seed.")
@click.option("--out", type=click.Path(), required=True, help="Where to write the CSV.")
@click.option("-v", "--verbose", is_flag=True)
def fetch(url, cache, synthetic, months, seed, out, verbose):
    """Download (and cache) a vintage, or generate a synthetic one."""
    _setup_logging(verbose)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if synthetic:
        data = synthetic_csv(n_months=months, seed=seed)
    elif url:
        try:
            data = fetch_fredmd(url, cache)
        except FetchError as exc:
            raise click.ClickException(str(exc))
    else:
        raise click.ClickException("pass --url or --synthetic")
    out.write_bytes(data)
    click.echo(f"wrote {len(data)} bytes to {out}")


@main.command()
@click.argument("data", type=click.Path(exists=True))
@click.option("-v", "--verbose", is_flag=True)
def validate(data, verbose):
    """Check a vintage CSV: tcodes, date gaps, missing cells, log domains."""
    _setup_logging(verbose)
    findings = scan_csv(Path(data).read_bytes())
    # Missing observations are routine (publication lags); anything else is fatal.
    warnings = [f for f in findings if "missing cells" in f]
    errors = [f for f in findings if "missing cells" not in f]
    for f in errors:
        click.echo(f"ERROR: {f}")
    for f in warnings:
        click.echo(f"WARNING: {f}")
    click.echo(f"{len(errors)} errors, {len(warnings)} warnings")
    sys.exit(2 if errors else (1 if warnings else 0))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML config; defaults are the canonical benchmark.")
@click.option("--data", envvar="MARXBENCH_DATA", type=click.Path(), default=None,
              help="Vintage CSV path (env MARXBENCH_DATA).")
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--workers", envvar="MARXBENCH_WORKERS", type=int, default=None,
              help="Parallel pipeline workers (env MARXBENCH_WORKERS).")
@click.option("--seed", type=int, default=None, help="Override the base seed.")
@click.option("--benchmark", default=None, help="Benchmark spec MODEL:FS for reports.")
@click.option("--mcs-level", type=float, default=0.10, show_default=True)
@click.option("--mcs-reps", type=int, default=5000, show_default=True)
@click.option("--dry-run", is_flag=True, help="Print the grid and exit without fitting.")
@_add_options(_grid_options)
@click.option("-v", "--verbose", is_flag=True)
def run(config_path, data, out, workers, seed, benchmark, mcs_level, mcs_reps,
        dry_run, targets, horizons, models, featuresets, verbose):
    """Run the pseudo-out-of-sample experiment and write all artifacts."""
    _setup_logging(verbose)
    config = _load_config_or_die(
        config_path, _overrides(targets, horizons, models, featuresets, seed, workers)
    )
    grid = config.grid()
    n_cells = sum(len(config.origins(h)) for _, h, _, _ in grid)
    if dry_run:
        click.echo(f"config hash: {config.hash()}")
        click.echo(f"pipelines: {len(grid)}")
        for target, h, model, fs in grid:
            click.echo(f"  {target} h={h} {model} {fs} "
                       f"({len(config.origins(h))} origins)")
        click.echo(f"total cells: {n_cells}")
        return
    raw = _load_panel_or_die(data)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    store_path = out_dir / "store.jsonl"
    if store_path.exists():
        raise click.ClickException(
            f"{store_path} already exists; use `marxbench resume` to continue it"
        )

    def progress(key, seconds):
        log.debug("cell target=%s h=%s model=%s featureset=%s origin=%s secs=%.2f",
                  key[0], key[1], key[2], key[3], dates.ym_str(key[4]), seconds)

    try:
        store = run_poos(config, raw, store_path=store_path, progress=progress)
    except KeyboardInterrupt:
        click.echo("interrupted; partial store preserved", err=True)
        sys.exit(130)
    _finish(store, out_dir, config, benchmark, mcs_level, mcs_reps)


@main.command()
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", envvar="MARXBENCH_DATA", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None,
              help="Report directory; defaults to the store's directory.")
@click.option("--workers", envvar="MARXBENCH_WORKERS", type=int, default=None)
@click.option("--benchmark", default=None)
@click.option("--mcs-level", type=float, default=0.10, show_default=True)
@click.option("--mcs-reps", type=int, default=5000, show_default=True)
@_add_options(_grid_options)
@click.option("-v", "--verbose", is_flag=True)
def resume(store_path, config_path, data, out, workers, benchmark, mcs_level,
           mcs_reps, targets, horizons, models, featuresets, verbose):
    """Fill the missing cells of a partial store, then report."""
    _setup_logging(verbose)
    config = _load_config_or_die(
        config_path, _overrides(targets, horizons, models, featuresets, None, workers)
    )
    raw = _load_panel_or_die(data)
    store = ForecastStore.load(store_path)
    try:
        store = resume_store(store, config, raw)
    except ResumeError as exc:
        raise click.ClickException(str(exc))
    except KeyboardInterrupt:
        click.echo("interrupted; partial store preserved", err=True)
        sys.exit(130)
    out_dir = Path(out) if out else Path(store_path).parent
    _finish(store, out_dir, config, benchmark, mcs_level, mcs_reps)


@main.command()
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None,
              help="Report directory; defaults to the store's directory.")
@click.option("--benchmark", default=None)
@click.option("--mcs-level", type=float, default=0.10, show_default=True)
@click.option("--mcs-reps", type=int, default=5000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Bootstrap seed for the confidence sets.")
@click.option("-v", "--verbose", is_flag=True)
def report(store_path, out, benchmark, mcs_level, mcs_reps, seed, verbose):
    """Regenerate tables and figures from an existing store."""
    _setup_logging(verbose)
    store = ForecastStore.load(store_path)
    out_dir = Path(out) if out else Path(store_path).parent
    bench = _parse_benchmark(benchmark) if benchmark else _store_benchmark(store)
    write_report(store, out_dir, benchmark=bench, mcs_level=mcs_level,
                 mcs_reps=mcs_reps, seed=seed)
    render_figures(out_dir)
    write_stamp(out_dir, store, bench, seed)
    click.echo(f"report written to {out_dir}")


def _store_benchmark(store: ForecastStore) -> tuple[str, str]:
    cfg = store.config or {}
    return (cfg.get("benchmark_model", "FM"), cfg.get("benchmark_featureset", "F"))


def _finish(store, out_dir, config, benchmark, mcs_level, mcs_reps) -> None:
    bench = _parse_benchmark(benchmark) if benchmark else (
        config.benchmark_model, config.benchmark_featureset
    )
    n_expected = sum(len(config.origins(h)) for _, h, _, _ in config.grid())
    completion = store.n_ok / n_expected if n_expected else 1.0
    if store.n_failed:
        click.echo(f"{store.n_failed} cells failed; first reasons:", err=True)
        for rec in store.failures()[:5]:
            click.echo(f"  {rec.key()}: {rec.error}", err=True)
    write_report(store, out_dir, benchmark=bench, mcs_level=mcs_level,
                 mcs_reps=mcs_reps, seed=config.seed)
    render_figures(out_dir)
    write_stamp(out_dir, store, bench, config.seed)
    click.echo(f"{store.n_ok}/{n_expected} cells ok "
               f"({100 * completion:.1f}%); artifacts in {out_dir}")
    if completion < config.min_completion:
        sys.exit(3)


@main.command()
@click.option("-v", "--verbose", is_flag=True)
def selftest(verbose):
    """Run the built-in oracle and property checks; exit 0 iff all pass."""
    _setup_logging(verbose)
    from .selftest import run_selftest

    ok = run_selftest(echo=click.echo)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
