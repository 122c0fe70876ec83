"""FRED-MD style panel ingestion: parsing, stationarity transforms, targets.

The file layout follows the monthly FRED-MD vintages: a header row
``sasdate,<mnemonics...>``, a second row ``Transform:,<codes...>`` carrying
the per-series transformation codes, then one row per month. Missing cells
are blank and become NaN; they are never silently zero-filled.
"""

from __future__ import annotations

import csv
import hashlib
import io
import threading
from dataclasses import dataclass, field
from pathlib import Path
from urllib.request import urlopen

import numpy as np

from . import dates

VALID_TCODES = frozenset(range(1, 8))
LOG_TCODES = frozenset(range(4, 8))

#: months of history consumed by each transformation code
TCODE_LEADS = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}


class ParseError(ValueError):
    """Malformed vintage file; message names the offending row/column."""


class DomainError(ValueError):
    """Value outside a transform's domain (log of a non-positive level)."""


class FetchError(RuntimeError):
    """Vintage download failed and no usable cache entry exists."""


@dataclass(frozen=True)
class RawPanel:
    """Untransformed monthly levels plus per-series transformation codes."""

    months: np.ndarray  # (T,) month ints, strictly increasing, contiguous
    values: np.ndarray  # (T, K) raw levels, NaN for missing
    mnemonics: tuple[str, ...]
    tcodes: np.ndarray  # (K,) ints in 1..7

    def __post_init__(self) -> None:
        t, k = self.values.shape
        if len(self.months) != t or len(self.mnemonics) != k or len(self.tcodes) != k:
            raise ValueError("panel dimensions disagree")
        steps = np.diff(self.months)
        if len(steps) and not np.all(steps == 1):
            gap = int(np.argmax(steps != 1))
            raise ParseError(
                f"non-monthly spacing after {dates.ym_str(int(self.months[gap]))}"
            )
        bad = [m for m, c in zip(self.mnemonics, self.tcodes) if c not in VALID_TCODES]
        if bad:
            raise ParseError(f"transformation code outside 1..7 for: {', '.join(bad)}")
        for j, (name, code) in enumerate(zip(self.mnemonics, self.tcodes)):
            if code in LOG_TCODES:
                col = self.values[:, j]
                nonpos = np.flatnonzero(~np.isnan(col) & (col <= 0))
                if nonpos.size:
                    when = dates.ym_str(int(self.months[nonpos[0]]))
                    raise DomainError(
                        f"{name}: non-positive level at {when} under log tcode {code}"
                    )

    @property
    def n_months(self) -> int:
        return len(self.months)

    def column(self, mnemonic: str) -> np.ndarray:
        try:
            j = self.mnemonics.index(mnemonic)
        except ValueError:
            raise KeyError(f"unknown series: {mnemonic}") from None
        return self.values[:, j]

    def tcode(self, mnemonic: str) -> int:
        return int(self.tcodes[self.mnemonics.index(mnemonic)])


@dataclass(frozen=True)
class StationaryPanel:
    """Per-series tcode-transformed panel, aligned to the raw date index."""

    months: np.ndarray
    values: np.ndarray
    mnemonics: tuple[str, ...]
    origin: RawPanel = field(repr=False)


@dataclass(frozen=True)
class TargetSeries:
    """h-period-ahead average growth (or difference) target.

    ``values[i]`` is the realization dated ``months[i]``: the annualized
    average one-month growth rate (or difference) over the h months ending
    there. It depends on raw data up to that date only.
    """

    variable: str
    horizon: int
    convention: str  # "growth" | "difference"
    months: np.ndarray
    values: np.ndarray


def apply_tcode(x: np.ndarray, tcode: int) -> np.ndarray:
    """Apply one FRED-MD stationarity transform, NaN-padding consumed leads.

    1: level, 2: first difference, 3: second difference, 4: log,
    5: log first difference, 6: log second difference,
    7: first difference of the period growth rate.
    """
    if tcode not in VALID_TCODES:
        raise ValueError(f"transformation code outside 1..7: {tcode}")
    x = np.asarray(x, dtype=float)
    if tcode in LOG_TCODES:
        nonpos = np.flatnonzero(~np.isnan(x) & (x <= 0))
        if nonpos.size:
            raise DomainError(
                f"non-positive value at position {int(nonpos[0])} under log tcode {tcode}"
            )
    out = np.full_like(x, np.nan)
    if tcode == 1:
        out = x.copy()
    elif tcode == 2:
        out[1:] = x[1:] - x[:-1]
    elif tcode == 3:
        out[2:] = x[2:] - 2 * x[1:-1] + x[:-2]
    elif tcode == 4:
        out = np.log(x)
    elif tcode == 5:
        lx = np.log(x)
        out[1:] = lx[1:] - lx[:-1]
    elif tcode == 6:
        lx = np.log(x)
        out[2:] = lx[2:] - 2 * lx[1:-1] + lx[:-2]
    elif tcode == 7:
        rate = np.full_like(x, np.nan)
        rate[1:] = x[1:] / x[:-1] - 1.0
        out[2:] = rate[2:] - rate[1:-1]
    return out


def stationarize(raw: RawPanel) -> StationaryPanel:
    values = np.column_stack(
        [apply_tcode(raw.values[:, j], int(raw.tcodes[j])) for j in range(len(raw.mnemonics))]
    )
    return StationaryPanel(raw.months, values, raw.mnemonics, raw)


def build_target(raw: RawPanel, mnemonic: str, horizon: int, convention: str) -> TargetSeries:
    """Average h-period growth (x1200, annualized percent) or difference target."""
    if convention not in ("growth", "difference"):
        raise ValueError(f"unknown convention: {convention}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x = raw.column(mnemonic)
    if convention == "growth":
        nonpos = np.flatnonzero(~np.isnan(x) & (x <= 0))
        if nonpos.size:
            when = dates.ym_str(int(raw.months[nonpos[0]]))
            raise DomainError(f"{mnemonic}: non-positive level at {when} under growth target")
        level = np.log(x)
    else:
        level = x
    y = np.full_like(level, np.nan)
    y[horizon:] = (1200.0 / horizon) * (level[horizon:] - level[:-horizon])
    return TargetSeries(mnemonic, horizon, convention, raw.months, y)


def _parse_cell(text: str, row: int, col: int, header: str) -> float:
    text = text.strip()
    if text in ("", "NA", "NaN", "nan", "."):
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"row {row}, column {header!r}: unparseable value {text!r}") from None


def parse_fredmd(data: bytes) -> RawPanel:
    """Parse a FRED-MD vintage CSV into a RawPanel."""
    text = data.decode("utf-8-sig")
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if any(cell.strip() for cell in r)]
    if len(rows) < 3:
        raise ParseError("vintage has no data rows")
    header = rows[0]
    if not header or header[0].strip().lower() != "sasdate":
        raise ParseError(f"first header cell must be 'sasdate', got {header[0]!r}")
    mnemonics = tuple(name.strip() for name in header[1:])
    if len(set(mnemonics)) != len(mnemonics):
        raise ParseError("duplicate mnemonics in header")
    transform = rows[1]
    if transform[0].strip().rstrip(":").lower() != "transform":
        raise ParseError("second row must carry the 'Transform:' marker")
    if len(transform) != len(header):
        raise ParseError("transform row width disagrees with header")
    tcodes = []
    for name, cell in zip(mnemonics, transform[1:]):
        try:
            code = int(float(cell))
        except ValueError:
            raise ParseError(f"{name}: unparseable transformation code {cell!r}") from None
        if code not in VALID_TCODES:
            raise ParseError(f"{name}: transformation code outside 1..7: {code}")
        tcodes.append(code)

    months = []
    values = []
    for i, row in enumerate(rows[2:], start=3):
        if len(row) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} cells, got {len(row)}")
        try:
            months.append(dates.parse_month(row[0]))
        except ValueError:
            raise ParseError(f"row {i}: malformed date {row[0]!r}") from None
        values.append(
            [_parse_cell(cell, i, j + 2, mnemonics[j]) for j, cell in enumerate(row[1:])]
        )
    return RawPanel(
        months=np.asarray(months, dtype=int),
        values=np.asarray(values, dtype=float),
        mnemonics=mnemonics,
        tcodes=np.asarray(tcodes, dtype=int),
    )


def scan_csv(data: bytes) -> list[str]:
    """Lenient diagnostic scan of a vintage file; returns human-readable findings.

    Unlike :func:`parse_fredmd` this never raises on content problems, so a
    dirty file yields a full report instead of stopping at the first error.
    """
    findings: list[str] = []
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        return [f"file is not UTF-8 text: {exc}"]
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if len(rows) < 3:
        return ["fewer than three rows; not a vintage file"]
    header, transform = rows[0], rows[1]
    if header[0].strip().lower() != "sasdate":
        findings.append(f"header starts with {header[0]!r}, expected 'sasdate'")
    names = [c.strip() for c in header[1:]]
    if transform[0].strip().rstrip(":").lower() != "transform":
        findings.append("second row lacks the 'Transform:' marker")
    codes: dict[str, int] = {}
    for name, cell in zip(names, transform[1:]):
        try:
            code = int(float(cell))
        except ValueError:
            findings.append(f"{name}: unparseable transformation code {cell!r}")
            continue
        codes[name] = code
        if code not in VALID_TCODES:
            findings.append(f"{name}: transformation code {code} outside 1..7")

    months: list[int] = []
    missing_by_series = dict.fromkeys(names, 0)
    for i, row in enumerate(rows[2:], start=3):
        try:
            months.append(dates.parse_month(row[0]))
        except ValueError:
            findings.append(f"row {i}: malformed date {row[0]!r}")
            continue
        if len(row) != len(header):
            findings.append(f"row {i}: ragged row ({len(row)} cells, expected {len(header)})")
            continue
        for name, cell in zip(names, row[1:]):
            cell = cell.strip()
            if cell in ("", "NA", "NaN", "nan", "."):
                missing_by_series[name] += 1
                continue
            try:
                value = float(cell)
            except ValueError:
                findings.append(f"row {i}, {name}: unparseable value {cell!r}")
                continue
            if codes.get(name) in LOG_TCODES and value <= 0:
                findings.append(
                    f"{name}: non-positive value {value} at {row[0].strip()} "
                    f"under log tcode {codes[name]}"
                )
    for j in range(1, len(months)):
        if months[j] - months[j - 1] != 1:
            findings.append(
                f"date gap between {dates.ym_str(months[j - 1])} and {dates.ym_str(months[j])}"
            )
    for name, count in missing_by_series.items():
        if count:
            findings.append(f"{name}: {count} missing cells")
    return findings


_cache_write_lock = threading.Lock()


def _default_transport(url: str) -> bytes:
    try:
        with urlopen(url, timeout=60) as response:
            return response.read()
    except Exception as exc:
        raise FetchError(f"fetch failed for {url}: {exc}") from exc


def fetch_fredmd(url: str, cache_dir: str | Path, transport=None) -> bytes:
    """Fetch a vintage, byte-identically cached under its file name.

    A sha256 sidecar guards cache integrity; a corrupted entry triggers a
    refetch. With a warm cache no network access happens at all.
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    name = url.rstrip("/").rsplit("/", 1)[-1] or "vintage.csv"
    entry = cache_dir / name
    sidecar = entry.with_suffix(entry.suffix + ".sha256")

    if entry.exists() and sidecar.exists():
        data = entry.read_bytes()
        if hashlib.sha256(data).hexdigest() == sidecar.read_text().strip():
            return data

    data = (transport or _default_transport)(url)
    digest = hashlib.sha256(data).hexdigest()
    with _cache_write_lock:
        tmp = entry.with_suffix(entry.suffix + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(entry)
        sidecar.write_text(digest + "\n")
    return data
