"""Small calendar-date helpers shared across modules."""

from __future__ import annotations

import calendar as _calendar
from datetime import date


def add_months(d: date, months: int) -> date:
    """Shift `d` by whole calendar months, clamping the day to month end.

    2019-05-31 + 1 month -> 2019-06-30; 2020-01-31 + 1 month -> 2020-02-29.
    """
    total = d.year * 12 + (d.month - 1) + months
    year, month = divmod(total, 12)
    month += 1
    day = min(d.day, _calendar.monthrange(year, month)[1])
    return date(year, month, day)
