"""CRSP-format daily stock data: ingestion, validation, and keyed access.

Daily bars CSV contract
    header: ``permno,permco,date,prc,shrout,ret,cfacpr``
    An empty string means missing. A negative ``prc`` encodes a bid/ask
    midpoint; the absolute value is stored and a midpoint flag is kept so the
    file round-trips. ``shrout`` is in thousands of shares. Dates are
    ISO-8601.

Security metadata CSV contract
    header: ``permno,permco,begdat,hshrcd,company_name,domicile_flag``
    with ``domicile_flag`` in {0,1}.

Rows violating a row-level contract (bad key fields, ``cfacpr <= 0``,
negative ``shrout``) are rejected and reported; duplicated keys are a hard
error. Loaded tables are immutable after construction and safe for
concurrent reads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError

logger = logging.getLogger(__name__)

BAR_COLUMNS = ["permno", "permco", "date", "prc", "shrout", "ret", "cfacpr"]
META_COLUMNS = ["permno", "permco", "begdat", "hshrcd", "company_name", "domicile_flag"]

COMMON_SHARE_CODES = (10, 11)


@dataclass(frozen=True)
class SecurityBar:
    """One security-day observation.

    ``prc`` is stored as an absolute value; ``midpoint`` records whether the
    source carried the negative bid/ask-midpoint sign. ``prc`` and ``ret``
    are ``None`` when missing in the source file.
    """

    permno: int
    permco: int
    date: date
    prc: float | None
    shrout: float
    ret: float | None
    cfacpr: float
    midpoint: bool = False


@dataclass(frozen=True)
class SecurityMeta:
    """Per-security metadata row."""

    permno: int
    permco: int
    begdat: date
    hshrcd: int
    company_name: str
    domicile_flag: bool

    @property
    def is_common(self) -> bool:
        """True for ordinary common stock share codes (10 and 11)."""
        return self.hshrcd in COMMON_SHARE_CODES


@dataclass
class IngestReport:
    """Outcome of loading one file: accepted/rejected row counts and reasons."""

    path: str
    rows_loaded: int = 0
    rows_rejected: int = 0
    rows_out_of_range: int = 0
    rejects: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "rows_loaded": self.rows_loaded,
            "rows_rejected": self.rows_rejected,
            "rows_out_of_range": self.rows_out_of_range,
            "rejects": [{"line": ln, "reason": why} for ln, why in self.rejects],
        }


def _require_header(frame: pd.DataFrame, expected: list[str], path: str) -> None:
    got = list(frame.columns)
    if sorted(got) != sorted(expected):
        raise DataError(f"{path}: malformed header {got}, expected columns {expected}")


def _to_float(raw: pd.Series) -> pd.Series:
    return pd.to_numeric(raw.replace("", np.nan), errors="coerce")


def _to_int(raw: pd.Series) -> tuple[pd.Series, pd.Series]:
    """Parse an integer column; returns (values, bad_mask)."""
    vals = _to_float(raw)
    bad = vals.isna() | (vals != np.floor(vals))
    return vals, bad


class BarTable:
    """Columnar table of daily bars keyed by (permno, date).

    The canonical frame is sorted by (permno, date), which makes ingestion
    order-independent. Per-permno and per-date access paths are cached
    lazily; the table itself is never mutated after construction.
    """

    def __init__(self, frame: pd.DataFrame, report: IngestReport | None = None):
        frame = frame.sort_values(["permno", "date"], kind="mergesort").reset_index(drop=True)
        dup = frame.duplicated(["permno", "date"])
        if dup.any():
            row = frame.loc[dup.idxmax()]
            raise DataError(
                f"duplicate (permno, date) key: ({int(row.permno)}, {row.date.date()})"
            )
        self._frame = frame
        self.report = report
        self._by_date: pd.DataFrame | None = None
        self._permno_cache: dict[int, dict] = {}
        self._last_bar_dates: dict[int, date] | None = None

    def __len__(self) -> int:
        return len(self._frame)

    def to_frame(self) -> pd.DataFrame:
        return self._frame.copy()

    def equals(self, other: "BarTable") -> bool:
        return self._frame.equals(other._frame)

    @property
    def permnos(self) -> list[int]:
        return sorted(self._frame["permno"].unique().tolist())

    @property
    def min_date(self) -> date | None:
        if self._frame.empty:
            return None
        return self._frame["date"].min().date()

    @property
    def max_date(self) -> date | None:
        if self._frame.empty:
            return None
        return self._frame["date"].max().date()

    def on_date(self, d: date) -> pd.DataFrame:
        """All bars on calendar date `d`, ascending permno."""
        if self._by_date is None:
            self._by_date = self._frame.sort_values(
                ["date", "permno"], kind="mergesort"
            ).reset_index(drop=True)
        dates = self._by_date["date"].values
        key = np.datetime64(pd.Timestamp(d))
        lo = np.searchsorted(dates, key, side="left")
        hi = np.searchsorted(dates, key, side="right")
        return self._by_date.iloc[lo:hi]

    def slice_range(self, start: date, end: date) -> pd.DataFrame:
        """Bars with start <= date <= end, ascending (permno, date)."""
        f = self._frame
        mask = (f["date"] >= pd.Timestamp(start)) & (f["date"] <= pd.Timestamp(end))
        return f[mask]

    def _permno_arrays(self, permno: int) -> dict:
        cached = self._permno_cache.get(permno)
        if cached is None:
            f = self._frame
            permnos = f["permno"].values
            lo = np.searchsorted(permnos, permno, side="left")
            hi = np.searchsorted(permnos, permno, side="right")
            sub = f.iloc[lo:hi]
            cached = {
                "dates": sub["date"].values,
                "prc": sub["prc"].values.astype(float),
                "cfacpr": sub["cfacpr"].values.astype(float),
                "rows": sub,
            }
            self._permno_cache[permno] = cached
        return cached

    def dates_for(self, permno: int) -> np.ndarray:
        """Ascending bar dates for one security (datetime64 array)."""
        return self._permno_arrays(permno)["dates"]

    def adjusted_prices_for(self, permno: int) -> np.ndarray:
        """Adjusted price series aligned with `dates_for` (NaN where missing)."""
        arrs = self._permno_arrays(permno)
        return np.abs(arrs["prc"]) / arrs["cfacpr"]

    def last_bar_date(self, permno: int) -> date | None:
        if self._last_bar_dates is None:
            grouped = self._frame.groupby("permno")["date"].max()
            self._last_bar_dates = {int(k): v.date() for k, v in grouped.items()}
        return self._last_bar_dates.get(permno)

    def get(self, permno: int, d: date) -> SecurityBar | None:
        """Exact (permno, date) lookup."""
        arrs = self._permno_arrays(permno)
        dates = arrs["dates"]
        key = np.datetime64(pd.Timestamp(d))
        pos = np.searchsorted(dates, key, side="left")
        if pos >= len(dates) or dates[pos] != key:
            return None
        row = arrs["rows"].iloc[pos]
        prc = None if math.isnan(row.prc) else float(row.prc)
        ret = None if math.isnan(row.ret) else float(row.ret)
        return SecurityBar(
            permno=int(row.permno),
            permco=int(row.permco),
            date=row.date.date(),
            prc=prc,
            shrout=float(row.shrout),
            ret=ret,
            cfacpr=float(row.cfacpr),
            midpoint=bool(row.midpoint),
        )


class MetaTable:
    """Security metadata keyed by permno, grouped by permco on demand."""

    def __init__(self, frame: pd.DataFrame, report: IngestReport | None = None):
        frame = frame.sort_values("permno", kind="mergesort").reset_index(drop=True)
        dup = frame.duplicated("permno")
        if dup.any():
            raise DataError(f"duplicate permno in metadata: {int(frame.loc[dup.idxmax(), 'permno'])}")
        self._frame = frame
        self.report = report
        self._by_permno: dict[int, SecurityMeta] = {}
        for row in frame.itertuples():
            self._by_permno[int(row.permno)] = SecurityMeta(
                permno=int(row.permno),
                permco=int(row.permco),
                begdat=row.begdat.date(),
                hshrcd=int(row.hshrcd),
                company_name=str(row.company_name),
                domicile_flag=bool(row.domicile_flag),
            )
        self._by_permco: dict[int, list[int]] = {}
        for m in self._by_permno.values():
            self._by_permco.setdefault(m.permco, []).append(m.permno)
        for permnos in self._by_permco.values():
            permnos.sort()

    def __len__(self) -> int:
        return len(self._frame)

    def to_frame(self) -> pd.DataFrame:
        return self._frame.copy()

    def get(self, permno: int) -> SecurityMeta | None:
        return self._by_permno.get(permno)

    @property
    def permnos(self) -> list[int]:
        return sorted(self._by_permno)

    @property
    def permcos(self) -> list[int]:
        return sorted(self._by_permco)

    def permnos_for(self, permco: int) -> list[int]:
        return list(self._by_permco.get(permco, []))

    def non_common_permnos(self) -> list[int]:
        """Securities flagged as not ordinary common stock."""
        return sorted(p for p, m in self._by_permno.items() if not m.is_common)


def load_daily_bars(
    path: str | Path,
    date_range: tuple[date, date] | None = None,
) -> BarTable:
    """Load a daily-bars CSV into a BarTable.

    Parameters
    ----------
    path : str or Path
        CSV file following the daily-bars contract.
    date_range : (start, end), optional
        Inclusive calendar-date filter applied before key checks.

    Returns
    -------
    BarTable
        All parseable in-range rows; the attached ``report`` carries
        loaded/rejected row counts and per-row reject reasons.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"daily bars file not found: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    _require_header(raw, BAR_COLUMNS, str(path))
    report = IngestReport(path=str(path))
    n = len(raw)
    if n == 0:
        table = BarTable(_empty_bar_frame(), report)
        return table

    permno, bad_permno = _to_int(raw["permno"])
    permco, bad_permco = _to_int(raw["permco"])
    dates = pd.to_datetime(raw["date"].replace("", np.nan), format="%Y-%m-%d", errors="coerce")
    prc = _to_float(raw["prc"])
    shrout = _to_float(raw["shrout"])
    ret = _to_float(raw["ret"])
    cfacpr = _to_float(raw["cfacpr"])

    # Reject reasons in priority order; a row reports its first failure.
    checks = [
        (bad_permno, "invalid permno"),
        (bad_permco, "invalid permco"),
        (dates.isna(), "invalid date"),
        (cfacpr.isna() | (cfacpr <= 0), "cfacpr must be > 0"),
        (shrout.isna() | (shrout < 0), "shrout must be >= 0"),
        ((raw["prc"] != "") & prc.isna(), "invalid prc"),
        ((raw["ret"] != "") & ret.isna(), "invalid ret"),
    ]
    reject = pd.Series(False, index=raw.index)
    reason = pd.Series("", index=raw.index)
    for mask, why in checks:
        fresh = mask & ~reject
        reject |= mask
        reason[fresh] = why
    for idx in raw.index[reject]:
        report.rejects.append((int(idx) + 2, reason[idx]))  # +2: header + 1-based
    report.rows_rejected = int(reject.sum())

    keep = ~reject
    frame = pd.DataFrame(
        {
            "permno": permno[keep].astype(np.int64),
            "permco": permco[keep].astype(np.int64),
            "date": dates[keep],
            "prc": prc[keep].abs(),
            "midpoint": (prc[keep] < 0).fillna(False).astype(bool),
            "shrout": shrout[keep].astype(float),
            "ret": ret[keep].astype(float),
            "cfacpr": cfacpr[keep].astype(float),
        }
    )
    if date_range is not None:
        start, end = date_range
        in_range = (frame["date"] >= pd.Timestamp(start)) & (frame["date"] <= pd.Timestamp(end))
        report.rows_out_of_range = int((~in_range).sum())
        frame = frame[in_range]
    report.rows_loaded = len(frame)
    if report.rows_rejected:
        logger.warning("%s: rejected %d rows", path, report.rows_rejected)
    return BarTable(frame.reset_index(drop=True), report)


def _empty_bar_frame() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "permno": pd.Series(dtype=np.int64),
            "permco": pd.Series(dtype=np.int64),
            "date": pd.Series(dtype="datetime64[ns]"),
            "prc": pd.Series(dtype=float),
            "midpoint": pd.Series(dtype=bool),
            "shrout": pd.Series(dtype=float),
            "ret": pd.Series(dtype=float),
            "cfacpr": pd.Series(dtype=float),
        }
    )


def write_daily_bars(table: BarTable, path: str | Path) -> None:
    """Write a BarTable back to the CSV contract (round-trip safe)."""
    f = table.to_frame()
    out = pd.DataFrame(
        {
            "permno": f["permno"],
            "permco": f["permco"],
            "date": f["date"].dt.strftime("%Y-%m-%d"),
            "prc": np.where(f["midpoint"], -f["prc"], f["prc"]),
            "shrout": f["shrout"],
            "ret": f["ret"],
            "cfacpr": f["cfacpr"],
        }
    )
    out.to_csv(path, index=False, lineterminator="\n")


def load_security_meta(path: str | Path) -> MetaTable:
    """Load a security-metadata CSV into a MetaTable keyed by permno."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"security metadata file not found: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    _require_header(raw, META_COLUMNS, str(path))
    report = IngestReport(path=str(path))
    if len(raw) == 0:
        return MetaTable(_empty_meta_frame(), report)

    permno, bad_permno = _to_int(raw["permno"])
    permco, bad_permco = _to_int(raw["permco"])
    begdat = pd.to_datetime(raw["begdat"].replace("", np.nan), format="%Y-%m-%d", errors="coerce")
    hshrcd, bad_code = _to_int(raw["hshrcd"])
    flag_raw = raw["domicile_flag"].str.strip()
    bad_flag = ~flag_raw.isin(["0", "1"])

    checks = [
        (bad_permno, "invalid permno"),
        (bad_permco, "invalid permco"),
        (begdat.isna(), "invalid begdat"),
        (bad_code, "invalid hshrcd"),
        (bad_flag, "domicile_flag must be 0 or 1"),
    ]
    reject = pd.Series(False, index=raw.index)
    reason = pd.Series("", index=raw.index)
    for mask, why in checks:
        fresh = mask & ~reject
        reject |= mask
        reason[fresh] = why
    for idx in raw.index[reject]:
        report.rejects.append((int(idx) + 2, reason[idx]))
    report.rows_rejected = int(reject.sum())

    keep = ~reject
    frame = pd.DataFrame(
        {
            "permno": permno[keep].astype(np.int64),
            "permco": permco[keep].astype(np.int64),
            "begdat": begdat[keep],
            "hshrcd": hshrcd[keep].astype(np.int64),
            "company_name": raw["company_name"][keep],
            "domicile_flag": (flag_raw[keep] == "1"),
        }
    )
    report.rows_loaded = len(frame)
    return MetaTable(frame.reset_index(drop=True), report)


def _empty_meta_frame() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "permno": pd.Series(dtype=np.int64),
            "permco": pd.Series(dtype=np.int64),
            "begdat": pd.Series(dtype="datetime64[ns]"),
            "hshrcd": pd.Series(dtype=np.int64),
            "company_name": pd.Series(dtype=str),
            "domicile_flag": pd.Series(dtype=bool),
        }
    )


def write_security_meta(table: MetaTable, path: str | Path) -> None:
    """Write a MetaTable back to the CSV contract."""
    f = table.to_frame()
    out = pd.DataFrame(
        {
            "permno": f["permno"],
            "permco": f["permco"],
            "begdat": f["begdat"].dt.strftime("%Y-%m-%d"),
            "hshrcd": f["hshrcd"],
            "company_name": f["company_name"],
            "domicile_flag": f["domicile_flag"].astype(int),
        }
    )
    out.to_csv(path, index=False, lineterminator="\n")


def adjusted_price(bar: SecurityBar) -> float:
    """Split-adjusted price of one bar: |prc| / cfacpr.

    The stored price is already absolute, so the quotient is direct.
    Raises DataError when cfacpr is not positive or the price is missing.
    """
    if bar.cfacpr <= 0:
        raise DataError(f"cfacpr must be > 0, got {bar.cfacpr}")
    if bar.prc is None:
        raise DataError(f"price missing for permno {bar.permno} on {bar.date}")
    return abs(bar.prc) / bar.cfacpr


@dataclass
class ValidationReport:
    """Cross-table consistency findings; informational, never fatal."""

    orphan_permnos: list[int] = field(default_factory=list)
    begdat_violations: list[tuple[int, date, date]] = field(default_factory=list)
    gaps: list[tuple[int, date, date, int]] = field(default_factory=list)
    missing_price_counts: dict[int, int] = field(default_factory=dict)

    @property
    def is_clean(self) -> bool:
        return not (
            self.orphan_permnos
            or self.begdat_violations
            or self.gaps
            or self.missing_price_counts
        )

    def to_dict(self) -> dict:
        return {
            "orphan_permnos": self.orphan_permnos,
            "begdat_violations": [
                {"permno": p, "begdat": str(b), "first_bar": str(f)}
                for p, b, f in self.begdat_violations
            ],
            "gaps": [
                {"permno": p, "after": str(a), "before": str(b), "calendar_days": g}
                for p, a, b, g in self.gaps
            ],
            "missing_price_counts": {str(k): v for k, v in self.missing_price_counts.items()},
        }


def validate_universe(bars: BarTable, meta: MetaTable, max_gap_days: int = 7) -> ValidationReport:
    """Report bar/meta inconsistencies: orphans, begdat violations, series gaps.

    Missing prices are tallied per security because halted rank days have to
    be surfaced somewhere visible; downstream ranking skips them explicitly.
    """
    report = ValidationReport()
    frame = bars.to_frame()
    if frame.empty:
        return report

    firsts = frame.groupby("permno")["date"].min()
    for permno, first_bar in firsts.items():
        m = meta.get(int(permno))
        if m is None:
            report.orphan_permnos.append(int(permno))
        elif pd.Timestamp(m.begdat) > first_bar:
            report.begdat_violations.append((int(permno), m.begdat, first_bar.date()))

    prev_dates = frame.groupby("permno")["date"].shift()
    gap_days = (frame["date"] - prev_dates).dt.days
    for idx in frame.index[gap_days > max_gap_days]:
        report.gaps.append(
            (
                int(frame.loc[idx, "permno"]),
                prev_dates[idx].date(),
                frame.loc[idx, "date"].date(),
                int(gap_days[idx]),
            )
        )

    missing = frame[frame["prc"].isna()]
    for permno, count in missing.groupby("permno").size().items():
        report.missing_price_counts[int(permno)] = int(count)
    return report
