"""Price panel loading, coverage filtering and return computation."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd

from marketstates.errors import DataError

logger = logging.getLogger(__name__)

GapPolicy = Literal["drop", "strict"]
ReturnKind = Literal["log", "simple"]

MIN_ASSETS = 2
MIN_DATES = 22
LONG_COLUMNS = {"date", "ticker", "price"}


@dataclass(frozen=True)
class PricePanel:
    """Adjusted closes, one row per asset, one column per trading day."""

    tickers: list[str]
    dates: list[str]
    prices: np.ndarray

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 2 or prices.shape != (len(self.tickers), len(self.dates)):
            raise DataError(
                f"price matrix shape {prices.shape} does not match "
                f"{len(self.tickers)} tickers x {len(self.dates)} dates"
            )
        if len(set(self.tickers)) != len(self.tickers):
            raise DataError("duplicate tickers in panel")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(prices)):
            raise DataError("prices must be finite")
        if np.any(prices <= 0):
            raise DataError("prices must be strictly positive")
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def select(self, tickers: Sequence[str]) -> "PricePanel":
        idx = [self.tickers.index(t) for t in tickers]
        return PricePanel(list(tickers), list(self.dates), self.prices[idx])


@dataclass(frozen=True)
class ReturnPanel:
    tickers: list[str]
    dates: list[str]
    returns: np.ndarray

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim != 2 or returns.shape != (len(self.tickers), len(self.dates)):
            raise DataError(f"return matrix shape {returns.shape} inconsistent with labels")
        if not np.all(np.isfinite(returns)):
            raise DataError("returns must be finite")
        returns.setflags(write=False)
        object.__setattr__(self, "returns", returns)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def drop(self, tickers: Sequence[str]) -> "ReturnPanel":
        keep = [i for i, t in enumerate(self.tickers) if t not in set(tickers)]
        return ReturnPanel([self.tickers[i] for i in keep], list(self.dates), self.returns[keep])


@dataclass(frozen=True)
class IndexSeries:
    dates: list[str]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.dates),):
            raise DataError("index series length does not match its dates")
        object.__setattr__(self, "values", values)


@dataclass
class IngestReport:
    source: str
    layout: str
    policy: str
    n_assets_read: int
    n_dates: int
    dropped: dict[str, int] = field(default_factory=dict)

    @property
    def kept(self) -> int:
        return self.n_assets_read - len(self.dropped)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "layout": self.layout,
            "policy": self.policy,
            "n_assets_read": self.n_assets_read,
            "n_assets_kept": self.kept,
            "n_dates": self.n_dates,
            "dropped": [{"ticker": t, "missing_dates": n} for t, n in self.dropped.items()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _read_header(path: Path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        try:
            return next(csv.reader(fh))
        except StopIteration:
            raise DataError(f"{path}: empty file") from None


def _parse_dates(raw: pd.Series, path: Path) -> pd.Series:
    try:
        parsed = pd.to_datetime(raw.astype(str).str.strip(), format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: unparseable date ({exc})") from None
    return parsed.dt.strftime("%Y-%m-%d")


def _to_numeric(frame: pd.DataFrame, path: Path) -> pd.DataFrame:
    # object -> float goes through Python's float(), which round-trips exactly
    try:
        values = frame.to_numpy(dtype=object).astype(float)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: non-numeric price ({exc})") from None
    return pd.DataFrame(values, index=frame.index, columns=frame.columns)


def _read_wide(path: Path, header: list[str]) -> pd.DataFrame:
    tickers = [h.strip() for h in header[1:]]
    if not tickers:
        raise DataError(f"{path}: no ticker columns")
    dupes = sorted({t for t in tickers if tickers.count(t) > 1})
    if dupes:
        raise DataError(f"{path}: duplicate ticker columns {dupes}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    raw.columns = [header[0].strip(), *tickers]
    dates = _parse_dates(raw.iloc[:, 0], path)
    if dates.duplicated().any():
        raise DataError(f"{path}: duplicate (ticker, date) cells on {sorted(set(dates[dates.duplicated()]))[:5]}")
    values = raw.iloc[:, 1:].replace({"": np.nan, "NA": np.nan, "NaN": np.nan, "nan": np.nan})
    values = _to_numeric(values, path)
    values.index = dates
    return values


def _read_long(path: Path) -> pd.DataFrame:
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    raw.columns = [c.strip().lower() for c in raw.columns]
    raw["date"] = _parse_dates(raw["date"], path)
    raw["ticker"] = raw["ticker"].str.strip()
    dup = raw.duplicated(subset=["date", "ticker"])
    if dup.any():
        first = raw.loc[dup, ["ticker", "date"]].iloc[0]
        raise DataError(f"{path}: duplicate (ticker, date) cell ({first['ticker']}, {first['date']})")
    raw["price"] = raw["price"].replace({"": np.nan})
    raw[["price"]] = _to_numeric(raw[["price"]], path)
    wide = raw.pivot(index="date", columns="ticker", values="price")
    # pivot sorts columns; keep first-appearance order instead
    order = list(dict.fromkeys(raw["ticker"]))
    return wide[order]


def load_price_panel(
    source: str | Path, policy: GapPolicy = "drop", min_assets: int = MIN_ASSETS
) -> tuple[PricePanel, IngestReport]:
    """Read a wide or long CSV and keep only assets covering every date.

    Wide layout: first column holds dates, one column per ticker. Long layout:
    columns ``date,ticker,price`` in any order. Dates are ISO-8601. A blank
    cell (wide) or absent row (long) is a gap; ``policy="drop"`` removes the
    asset and lists it in the report, ``policy="strict"`` raises.
    """
    if policy not in ("drop", "strict"):
        raise ValueError(f"unknown gap policy {policy!r}")
    path = Path(source)
    header = _read_header(path)
    if {h.strip().lower() for h in header} == LONG_COLUMNS and len(header) == 3:
        layout, table = "long", _read_long(path)
    else:
        layout, table = "wide", _read_wide(path, header)

    table = table.sort_index()
    observed = table.to_numpy()
    if np.any(observed[np.isfinite(observed)] <= 0):
        bad = table.columns[(table <= 0).any(axis=0)].tolist()
        raise DataError(f"{path}: non-positive prices for {bad}")
    if np.any(np.isinf(observed)):
        raise DataError(f"{path}: infinite prices")

    missing = table.isna().sum(axis=0)
    gaps = {str(t): int(n) for t, n in missing.items() if n > 0}
    if gaps and policy == "strict":
        raise DataError(f"{path}: incomplete coverage for {sorted(gaps)}")
    kept = [str(t) for t in table.columns if str(t) not in gaps]
    if len(kept) < min_assets:
        raise DataError(f"{path}: only {len(kept)} assets with full coverage, need {min_assets}")
    if len(table.index) < MIN_DATES:
        raise DataError(f"{path}: {len(table.index)} dates, need at least {MIN_DATES}")
    for t in gaps:
        logger.info("dropping %s: %d missing dates", t, gaps[t])

    panel = PricePanel(kept, [str(d) for d in table.index], table[kept].to_numpy().T)
    report = IngestReport(str(path), layout, policy, len(table.columns), len(table.index), gaps)
    return panel, report


def compute_returns(panel: PricePanel, kind: ReturnKind = "log") -> ReturnPanel:
    """Daily returns; the first date is consumed, so T = n_dates - 1."""
    p = panel.prices
    if kind == "log":
        r = np.diff(np.log(p), axis=1)
    elif kind == "simple":
        r = p[:, 1:] / p[:, :-1] - 1.0
    else:
        raise ValueError(f"unknown return kind {kind!r}")
    return ReturnPanel(list(panel.tickers), list(panel.dates[1:]), r)


def compute_index_returns(index_prices: PricePanel, kind: ReturnKind = "log") -> IndexSeries:
    if index_prices.n_assets != 1:
        raise DataError(f"index panel must hold one series, got {index_prices.n_assets}")
    rp = compute_returns(index_prices, kind)
    return IndexSeries(rp.dates, rp.returns[0])


def equal_weight_index(returns: ReturnPanel) -> IndexSeries:
    """Cross-sectional mean return, used when no index file is supplied."""
    return IndexSeries(list(returns.dates), returns.returns.mean(axis=0))


def write_wide_csv(panel: PricePanel, path: str | Path) -> None:
    frame = pd.DataFrame(panel.prices.T, index=pd.Index(panel.dates, name="date"), columns=panel.tickers)
    frame.to_csv(path, float_format="%.17g", encoding="utf-8")
