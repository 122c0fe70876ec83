"""Deterministic synthetic monthly vintage in the FRED-MD file layout.

A two-factor DGP drives 25 series whose levels are integrated to match
their transformation codes, so parsing + stationarizing the emitted CSV
recovers factor-structured stationary data. Everything is a pure function
of (n_months, seed).
"""

from __future__ import annotations

import io

import numpy as np

from . import dates
from .fredmd import RawPanel

#: (mnemonic, tcode, base level, stationary scale)
SERIES: tuple[tuple[str, int, float, float], ...] = (
    ("INDPRO", 5, 50.0, 0.008),
    ("PAYEMS", 5, 50000.0, 0.003),
    ("UNRATE", 2, 6.0, 0.12),
    ("W875RX1", 5, 3000.0, 0.006),
    ("DPCERA3M086SBEA", 5, 20.0, 0.005),
    ("RETAILx", 5, 20000.0, 0.009),
    ("HOUST", 4, 1300.0, 0.15),
    ("M2SL", 6, 300.0, 0.002),
    ("CPIAUCSL", 6, 30.0, 0.001),
    ("WPSFD49207", 6, 30.0, 0.002),
    ("FEDFUNDS", 2, 4.0, 0.25),
    ("TB3MS", 2, 3.5, 0.22),
    ("GS10", 2, 4.5, 0.18),
    ("AAA", 2, 5.0, 0.15),
    ("BAA", 2, 6.0, 0.16),
    ("EXJPUSx", 5, 250.0, 0.012),
    ("EXUSUKx", 5, 2.0, 0.011),
    ("OILPRICEx", 5, 15.0, 0.030),
    ("PERMIT", 4, 1200.0, 0.18),
    ("AWHMAN", 1, 40.0, 0.35),
    ("CUMFNS", 2, 80.0, 0.40),
    ("CE16OV", 5, 60000.0, 0.003),
    ("M1SL", 6, 150.0, 0.002),
    ("BUSLOANS", 6, 100.0, 0.003),
    ("NONBORRES", 7, 50.0, 0.0005),
)


def _stationary_core(n_months: int, seed: int) -> np.ndarray:
    """Factor-plus-idiosyncratic stationary drivers, one column per series."""
    rng = np.random.default_rng(seed)
    k = len(SERIES)
    phi = np.array([0.7, 0.5])
    factors = np.zeros((n_months, 2))
    shocks = rng.normal(size=(n_months, 2))
    for t in range(1, n_months):
        factors[t] = phi * factors[t - 1] + shocks[t]
    loadings = rng.normal(scale=1.0, size=(2, k))
    idio = np.zeros((n_months, k))
    eps = rng.normal(scale=0.6, size=(n_months, k))
    for t in range(1, n_months):
        idio[t] = 0.3 * idio[t - 1] + eps[t]
    return factors @ loadings + idio


def synthetic_panel(n_months: int = 732, seed: int = 1959, start: tuple[int, int] = (1959, 1)) -> RawPanel:
    """Raw level panel whose tcode transforms recover the stationary core."""
    s = _stationary_core(n_months, seed)
    months = np.arange(n_months) + dates.ym(*start)
    cols = []
    for j, (name, tcode, base, scale) in enumerate(SERIES):
        drive = scale * s[:, j]
        if tcode == 1:
            level = base + drive
        elif tcode == 2:
            level = base + np.cumsum(drive)
        elif tcode == 3:
            level = base + np.cumsum(np.cumsum(drive))
        elif tcode == 4:
            level = base * np.exp(drive)
        elif tcode == 5:
            level = base * np.exp(np.cumsum(0.002 + drive))
        elif tcode == 6:
            level = base * np.exp(np.cumsum(np.cumsum(drive) + 0.002))
        else:  # 7: stationary difference of the period growth rate
            rate = 0.003 + np.cumsum(drive)
            level = base * np.cumprod(1.0 + np.clip(rate, -0.5, 0.5))
        cols.append(level)
    values = np.column_stack(cols)
    mnemonics = tuple(name for name, _, _, _ in SERIES)
    tcodes = np.array([code for _, code, _, _ in SERIES], dtype=int)
    return RawPanel(months=months, values=values, mnemonics=mnemonics, tcodes=tcodes)


def synthetic_csv(n_months: int = 732, seed: int = 1959, start: tuple[int, int] = (1959, 1)) -> bytes:
    """The same panel rendered in the FRED-MD CSV layout."""
    panel = synthetic_panel(n_months, seed, start)
    buf = io.StringIO()
    buf.write("sasdate," + ",".join(panel.mnemonics) + "\n")
    buf.write("Transform:," + ",".join(str(int(c)) for c in panel.tcodes) + "\n")
    for i, month in enumerate(panel.months):
        y, m = dates.year_of(int(month)), dates.month_of(int(month))
        cells = ",".join(f"{v:.10g}" for v in panel.values[i])
        buf.write(f"{m}/1/{y},{cells}\n")
    return buf.getvalue().encode()
