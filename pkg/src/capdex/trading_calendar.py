"""US trading-day calendar and reconstitution date rules.

Rank days always shift backward to a trading day and rebalance days always
shift forward, so a resolved schedule never peeks past the event date.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

from pandas.tseries.holiday import (
    AbstractHolidayCalendar,
    GoodFriday,
    Holiday,
    USLaborDay,
    USMartinLutherKingJr,
    USMemorialDay,
    USPresidentsDay,
    USThanksgivingDay,
    nearest_workday,
)

from .errors import ConfigError, DataError

QUARTER_LABELS = ("Q3", "Q4", "Q1")
QUARTERLY_ADDITIONS_START_YEAR = 2004
RANK_TO_REBALANCE_DAYS = 35  # "5 weeks" taken literally, before trading-day shifts

_QUARTER_MONTHS = {"Q3": 9, "Q4": 12, "Q1": 3}


class _DefaultUSHolidays(AbstractHolidayCalendar):
    """Default US equity-market holiday rules; overridable via a holiday file."""

    rules = [
        Holiday("NewYearsDay", month=1, day=1, observance=nearest_workday),
        USMartinLutherKingJr,
        USPresidentsDay,
        GoodFriday,
        USMemorialDay,
        Holiday("IndependenceDay", month=7, day=4, observance=nearest_workday),
        USLaborDay,
        USThanksgivingDay,
        Holiday("Christmas", month=12, day=25, observance=nearest_workday),
    ]


@dataclass(frozen=True)
class TradingCalendar:
    """Immutable set of trading days: weekdays minus holidays within a range."""

    start: date
    end: date
    holidays: frozenset[date]

    def _check_range(self, d: date) -> None:
        if not (self.start <= d <= self.end):
            raise ConfigError(f"{d} outside calendar range [{self.start}, {self.end}]")

    def is_trading_day(self, d: date) -> bool:
        return d.weekday() < 5 and d not in self.holidays

    def roll_back(self, d: date) -> date:
        """Latest trading day <= d."""
        self._check_range(d)
        while not self.is_trading_day(d):
            d -= timedelta(days=1)
            self._check_range(d)
        return d

    def roll_forward(self, d: date) -> date:
        """Earliest trading day >= d."""
        self._check_range(d)
        while not self.is_trading_day(d):
            d += timedelta(days=1)
            self._check_range(d)
        return d

    def prev_trading_day(self, d: date) -> date:
        return self.roll_back(d - timedelta(days=1))

    def next_trading_day(self, d: date) -> date:
        return self.roll_forward(d + timedelta(days=1))

    def sessions(self, start: date, end: date) -> list[date]:
        """Trading days in [start, end]."""
        out = []
        d = start
        while d <= end:
            if self.is_trading_day(d):
                out.append(d)
            d += timedelta(days=1)
        return out

    def trading_days_between(self, start: date, end: date) -> int:
        """Count trading days in the half-open window (start, end]."""
        if end <= start:
            return 0
        count = 0
        d = start + timedelta(days=1)
        while d <= end:
            if self.is_trading_day(d):
                count += 1
            d += timedelta(days=1)
        return count


@dataclass(frozen=True)
class QuarterEvent:
    """One quarterly IPO-addition event: label, rank day, rebalance day."""

    label: str
    cycle_year: int
    rank: date
    rebalance: date


@dataclass(frozen=True)
class RebalanceCalendar:
    """Resolved annual and quarterly rank/rebalance dates for one cycle year."""

    cycle_year: int
    annual_rank: date
    annual_rebalance: date
    quarters: tuple[QuarterEvent, ...]


def _load_holiday_file(path: str | Path) -> frozenset[date]:
    days = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            days.add(date.fromisoformat(text))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: invalid holiday date {text!r}") from exc
    return frozenset(days)


def build_trading_calendar(
    start: date,
    end: date,
    holiday_file: str | Path | None = None,
) -> TradingCalendar:
    """Build a trading calendar over [start, end].

    Without a holiday file the built-in US list applies; with one, only the
    listed dates are holidays. Weekends are always non-trading.
    """
    if end < start:
        raise ConfigError(f"empty calendar range [{start}, {end}]")
    if holiday_file is not None:
        holidays = frozenset(d for d in _load_holiday_file(holiday_file) if start <= d <= end)
    else:
        # Pad so New Year observed on Dec 31 of the prior year is captured.
        raw = _DefaultUSHolidays().holidays(
            start - timedelta(days=7), end + timedelta(days=7)
        )
        holidays = frozenset(ts.date() for ts in raw if start <= ts.date() <= end)
    return TradingCalendar(start=start, end=end, holidays=holidays)


def annual_rank_day(year: int, cal: TradingCalendar) -> date:
    """May 31, shifted backward to the nearest trading day."""
    return cal.roll_back(date(year, 5, 31))


def _last_friday(year: int, month: int) -> date:
    d = date(year, month, 30 if month in (4, 6, 9, 11) else 31)
    while d.weekday() != 4:
        d -= timedelta(days=1)
    return d


def _third_friday(year: int, month: int) -> date:
    first = date(year, month, 1)
    offset = (4 - first.weekday()) % 7
    return first + timedelta(days=offset + 14)


def annual_rebalance_day(year: int, cal: TradingCalendar) -> date:
    """Last Friday of June, shifted forward to the nearest trading day."""
    return cal.roll_forward(_last_friday(year, 6))


def quarterly_schedule(cycle_year: int, cal: TradingCalendar) -> list[QuarterEvent]:
    """Q3/Q4/Q1 rank and rebalance days for one cycle.

    Rebalance days are the third Fridays of September, December, and March
    (of the following year for Q1); rank days sit 35 calendar days earlier.
    Shifts: rank backward, rebalance forward.
    """
    if cycle_year < QUARTERLY_ADDITIONS_START_YEAR:
        raise ConfigError(
            f"quarterly additions not active before {QUARTERLY_ADDITIONS_START_YEAR}"
            f" (got cycle year {cycle_year})"
        )
    events = []
    for label in QUARTER_LABELS:
        year = cycle_year + 1 if label == "Q1" else cycle_year
        reb_raw = _third_friday(year, _QUARTER_MONTHS[label])
        rank_raw = reb_raw - timedelta(days=RANK_TO_REBALANCE_DAYS)
        events.append(
            QuarterEvent(
                label=label,
                cycle_year=cycle_year,
                rank=cal.roll_back(rank_raw),
                rebalance=cal.roll_forward(reb_raw),
            )
        )
    return events


def rebalance_calendar(cycle_year: int, cal: TradingCalendar) -> RebalanceCalendar:
    """Resolve the full cycle; pre-2004 cycles carry an empty quarter list."""
    quarters: tuple[QuarterEvent, ...] = ()
    if cycle_year >= QUARTERLY_ADDITIONS_START_YEAR:
        quarters = tuple(quarterly_schedule(cycle_year, cal))
    return RebalanceCalendar(
        cycle_year=cycle_year,
        annual_rank=annual_rank_day(cycle_year, cal),
        annual_rebalance=annual_rebalance_day(cycle_year, cal),
        quarters=quarters,
    )
