"""Ingestion of cumulative smart-meter readings into per-household signals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import DataError, NonMonotoneSeries, ParseError

LONG_ALIASES = {
    "household": ("household", "household_id", "house", "id", "meter", "meter_id"),
    "day": ("day", "date", "time", "timestamp", "t"),
    "reading": ("reading", "value", "energy", "cumulative", "consumption"),
}


@dataclass
class ConsumptionDataset:
    """Daily signals s[i, t] = (c[i, t+1] - c[i, t]) / divisor; dropped entries are NaN."""

    signals: np.ndarray  # (households, days)
    households: list
    dropped: int
    negative: int
    total: int

    @property
    def household_count(self) -> int:
        return self.signals.shape[0]

    @property
    def day_count(self) -> int:
        return self.signals.shape[1]

    @property
    def retained(self) -> int:
        return int(np.isfinite(self.signals).sum())

    @property
    def statistics(self) -> np.ndarray:
        return np.log(self.signals)

    def log_moments(self) -> tuple[float, float]:
        x = self.statistics[np.isfinite(self.signals)]
        return float(x.mean()), float(x.std(ddof=1))

    def signal_matrix(self, fill: str = "household_median") -> np.ndarray:
        """Complete (n, T) matrix for simulation; dropped entries are imputed.

        ``household_median`` replaces a dropped day with the household's
        median retained signal; ``drop`` removes households with any gap.
        """
        s = self.signals
        if fill == "drop":
            keep = np.isfinite(s).all(axis=1)
            if not keep.any():
                raise DataError("no household has a complete series")
            return s[keep].copy()
        if fill != "household_median":
            raise ValueError(f"unknown fill policy {fill!r}")
        out = s.copy()
        for i in range(out.shape[0]):
            row = out[i]
            bad = ~np.isfinite(row)
            if bad.all():
                raise DataError(f"household {self.households[i]!r} has no positive consumption")
            row[bad] = np.median(row[~bad])
        return out


def _find(columns, role):
    lower = {str(c).strip().lower(): c for c in columns}
    for alias in LONG_ALIASES[role]:
        if alias in lower:
            return lower[alias]
    return None


def _read(path: Path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, sep=None, engine="python", comment="#")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ParseError(0, f"{path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise ParseError(1, f"{path} is empty") from exc
    if df.empty:
        raise ParseError(1, f"{path} has no data rows")
    return df


def _wide(df: pd.DataFrame) -> pd.DataFrame:
    hh, day, val = (_find(df.columns, r) for r in ("household", "day", "reading"))
    if hh is not None and day is not None and val is not None:
        table = df.pivot_table(index=day, columns=hh, values=val, aggfunc="last")
        return table.sort_index()
    # wide layout: first column indexes days, the rest are households
    first = df.columns[0]
    body = df.set_index(first)
    return body


def ingest_consumption(path: str | Path, divisor: float = 1e10) -> ConsumptionDataset:
    """Difference cumulative readings per household and scale by ``divisor``.

    Nonpositive and missing differences are dropped (kept as NaN) and
    counted; decreasing readings additionally emit a NonMonotoneSeries
    warning with their count. retained + dropped equals the number of
    differenced records.
    """
    if divisor <= 0:
        raise ValueError("divisor must be positive")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"consumption file {path} not found")
    table = _wide(_read(path))
    try:
        values = table.apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise ParseError(0, f"{path}: non-numeric meter reading ({exc})") from exc
    if values.shape[0] < 2:
        raise DataError("need at least two readings per household to difference")
    diffs = np.diff(values, axis=0).T / divisor  # (households, days)
    total = diffs.size
    negative = int(np.sum(diffs < 0))
    keep = np.isfinite(diffs) & (diffs > 0)
    signals = np.where(keep, diffs, np.nan)
    if negative:
        warnings.warn(f"{negative} decreasing meter reading(s) dropped", NonMonotoneSeries, stacklevel=2)
    return ConsumptionDataset(
        signals=signals,
        households=list(table.columns),
        dropped=int(total - keep.sum()),
        negative=negative,
        total=int(total),
    )
