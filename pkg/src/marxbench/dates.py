"""Monthly date arithmetic.

All dates in the engine are calendar months represented as a single int,
``m = year * 12 + (month - 1)``, so month differences are plain integer
subtraction and there is no intramonth time anywhere.
"""

from __future__ import annotations

import re

_ISO_RE = re.compile(r"^(\d{4})[-M](\d{1,2})$")
_US_RE = re.compile(r"^(\d{1,2})/\d{1,2}/(\d{4})$")


def ym(year: int, month: int) -> int:
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range: {month}")
    return year * 12 + (month - 1)


def year_of(m: int) -> int:
    return m // 12


def month_of(m: int) -> int:
    return m % 12 + 1


def ym_str(m: int) -> str:
    return f"{year_of(m):04d}-{month_of(m):02d}"


def parse_month(text: str) -> int:
    """Parse '1990-01', '1990M01' or FRED's '1/1/1990' into a month int."""
    text = text.strip()
    match = _ISO_RE.match(text)
    if match:
        return ym(int(match.group(1)), int(match.group(2)))
    match = _US_RE.match(text)
    if match:
        return ym(int(match.group(2)), int(match.group(1)))
    raise ValueError(f"unrecognized month: {text!r}")


def month_range(first: int, last: int) -> range:
    """Inclusive range of month ints."""
    return range(first, last + 1)
