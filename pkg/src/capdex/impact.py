"""Event-window price impact around reconstitution dates.

For an event anchored at a rank day, three adjusted prices are read: p0 at
the anchor, p1 one calendar month later, p2 two calendar months later. Each
target date snaps backward to the security's nearest priced bar; a snap of
more than five trading days drops the sample with a reason. The temporary
component is ln(p1) - ln(p2) (the part that reverts in the second month),
the permanent component ln(p2) - ln(p0), so the two always telescope to the
full two-month log return.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date

import numpy as np
import pandas as pd

from .dates import add_months
from .errors import ConfigError
from .market_data import BarTable
from .reconstitution import (
    TIER3,
    Member,
    MembershipSnapshot,
    MembershipTimeline,
    roster_before,
)
from .trading_calendar import TradingCalendar

logger = logging.getLogger(__name__)

MAX_SNAP_TRADING_DAYS = 5

GROUP_ANNUAL_ADDITION = "annual_addition"
GROUP_ANNUAL_DELETION = "annual_deletion"
GROUP_QUARTERLY_RETAINED = "quarterly_addition_retained"
GROUP_NEW_ADDITION = "new_addition"
GROUP_INCUMBENT = "incumbent"
GROUP_QUARTERLY_ADDITION = "quarterly_addition"


@dataclass(frozen=True)
class ImpactSample:
    """Temporary/permanent log-return pair for one security around one event."""

    permno: int
    event_date: date
    p0: float
    p1: float
    p2: float
    r_temp: float
    r_perm: float
    group_tag: str


@dataclass(frozen=True)
class DroppedSample:
    permno: int
    event_date: date
    group_tag: str
    reason: str


@dataclass(frozen=True)
class ImpactRow:
    """One line of the annual impact table; means and SEs are in percent."""

    year: int
    group: str
    mean_temp: float
    se_temp: float
    mean_perm: float
    se_perm: float
    n: int


def _resolve_price(
    bars: BarTable, cal: TradingCalendar, permno: int, target: date
) -> tuple[float | None, str | None]:
    """Adjusted price at the latest priced bar on or before `target`.

    Returns (price, None) or (None, reason). The snap distance is counted in
    trading days between the chosen bar and the target.
    """
    dates = bars.dates_for(permno)
    if dates.size == 0:
        return None, "no bars for permno"
    prices = bars.adjusted_prices_for(permno)
    key = np.datetime64(np.datetime64(target.isoformat()), "ns")
    pos = int(np.searchsorted(dates, key, side="right")) - 1
    while pos >= 0 and math.isnan(prices[pos]):
        pos -= 1
    if pos < 0:
        return None, f"no priced bar at or before {target}"
    snapped = dates[pos].astype("datetime64[D]").astype(date)
    gap = cal.trading_days_between(snapped, target)
    if gap > MAX_SNAP_TRADING_DAYS:
        return None, f"snap from {target} to {snapped} exceeds {MAX_SNAP_TRADING_DAYS} trading days"
    price = float(prices[pos])
    if price <= 0.0:
        return None, f"nonpositive price on {snapped}"
    return price, None


def impact_sample(
    bars: BarTable,
    cal: TradingCalendar,
    permno: int,
    event_date: date,
    group_tag: str,
) -> ImpactSample | DroppedSample:
    """Build one impact sample anchored at `event_date` or explain the drop."""
    prices = []
    for months in (0, 1, 2):
        price, reason = _resolve_price(bars, cal, permno, add_months(event_date, months))
        if price is None:
            return DroppedSample(permno, event_date, group_tag, reason)
        prices.append(price)
    p0, p1, p2 = prices
    return ImpactSample(
        permno=permno,
        event_date=event_date,
        p0=p0,
        p1=p1,
        p2=p2,
        r_temp=math.log(p1) - math.log(p2),
        r_perm=math.log(p2) - math.log(p0),
        group_tag=group_tag,
    )


@dataclass(frozen=True)
class GroupSpec:
    """A comparison group: sampled securities anchored at one event date."""

    tag: str
    event: str
    anchor: date
    permnos: tuple[int, ...]


def collect_samples(
    bars: BarTable, cal: TradingCalendar, group: GroupSpec
) -> tuple[list[ImpactSample], list[DroppedSample]]:
    """Resolve every security in a group into samples and drops."""
    samples: list[ImpactSample] = []
    dropped: list[DroppedSample] = []
    for permno in group.permnos:
        result = impact_sample(bars, cal, permno, group.anchor, group.tag)
        if isinstance(result, ImpactSample):
            samples.append(result)
        else:
            dropped.append(result)
    return samples, dropped


def _member_permnos(members: dict[int, Member], permcos) -> tuple[int, ...]:
    out: list[int] = []
    for pc in sorted(permcos):
        out.extend(members[pc].permnos)
    return tuple(out)


def _t3_permcos(members: dict[int, Member]) -> set[int]:
    return {pc for pc, m in members.items() if TIER3 in m.tiers}


def annual_turnover(
    timeline: MembershipTimeline, year: int
) -> tuple[MembershipSnapshot, set[int], set[int], dict[int, Member]]:
    """Broad-tier additions and deletions at one annual reconstitution.

    Compared against the roster in force just before the rebalance (the last
    quarterly snapshot net of delistings), so quarterly entrants are already
    members and never count as annual additions.
    """
    snap = timeline.annual_snapshot(year)
    before = roster_before(timeline, snap)
    if before is None:
        raise ConfigError(f"{year} is the first cycle in the timeline; no prior roster")
    new_t3 = _t3_permcos(snap.members)
    old_t3 = _t3_permcos(before)
    return snap, new_t3 - old_t3, old_t3 - new_t3, before


def annual_impact_table(
    timeline: MembershipTimeline, bars: BarTable, year: int
) -> tuple[list[ImpactRow], list[ImpactSample], list[DroppedSample]]:
    """Mean temporary/permanent impact for one year's additions and deletions.

    Samples anchor at the annual rank day; additions sample the new
    snapshot's constituents, deletions the prior roster's. Means and
    standard errors are percentages of log returns.
    """
    snap, added, deleted, before = annual_turnover(timeline, year)
    cal = timeline.calendar
    groups = [
        GroupSpec(GROUP_ANNUAL_ADDITION, snap.label, snap.rank_day,
                  _member_permnos(snap.members, added)),
        GroupSpec(GROUP_ANNUAL_DELETION, snap.label, snap.rank_day,
                  _member_permnos(before, deleted)),
    ]
    rows: list[ImpactRow] = []
    all_samples: list[ImpactSample] = []
    all_dropped: list[DroppedSample] = []
    for group, name in zip(groups, ("additions", "deletions")):
        samples, dropped = collect_samples(bars, cal, group)
        all_samples.extend(samples)
        all_dropped.extend(dropped)
        rows.append(_impact_row(year, name, samples))
    return rows, all_samples, all_dropped


def _impact_row(year: int, group: str, samples: list[ImpactSample]) -> ImpactRow:
    n = len(samples)
    if n == 0:
        return ImpactRow(year, group, math.nan, math.nan, math.nan, math.nan, 0)
    temps = np.array([s.r_temp for s in samples])
    perms = np.array([s.r_perm for s in samples])
    se_temp = float(temps.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    se_perm = float(perms.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return ImpactRow(
        year=year,
        group=group,
        mean_temp=100.0 * float(temps.mean()),
        se_temp=100.0 * se_temp,
        mean_perm=100.0 * float(perms.mean()),
        se_perm=100.0 * se_perm,
        n=n,
    )


def annual_groups(
    timeline: MembershipTimeline, year: int
) -> tuple[GroupSpec, GroupSpec]:
    """The two groups compared near an annual reconstitution.

    Retained quarterly additions: companies added at the cycle's three most
    recent quarterly events that are still in the broad tier at this annual
    rebalance. New additions: everything else entering the broad tier this
    year. Both anchor at the annual rank day and are disjoint by
    construction.
    """
    snap, added, _deleted, _before = annual_turnover(timeline, year)
    quarterly_permcos: set[int] = set()
    prev_year = year - 1
    for q_snap in timeline.snapshots:
        if q_snap.origin != "annual" and q_snap.cycle_year == prev_year:
            quarterly_permcos.update(q_snap.added_permcos)
    new_t3 = _t3_permcos(snap.members)
    retained = quarterly_permcos & new_t3
    return (
        GroupSpec(GROUP_QUARTERLY_RETAINED, snap.label, snap.rank_day,
                  _member_permnos(snap.members, retained)),
        GroupSpec(GROUP_NEW_ADDITION, snap.label, snap.rank_day,
                  _member_permnos(snap.members, added)),
    )


def quarterly_groups(
    timeline: MembershipTimeline, year: int, label: str
) -> tuple[GroupSpec, GroupSpec]:
    """The two groups compared near one quarterly event.

    Quarterly additions versus incumbents: members whose tier set is
    identical across the two most recent annual reconstitutions. Companies
    that migrated between tiers (either direction) still carry rebalance
    pressure and are excluded. Windows anchor at the quarterly rank day.
    """
    snap = timeline.quarter_snapshot(year, label)
    additions = GroupSpec(
        GROUP_QUARTERLY_ADDITION,
        snap.label,
        snap.rank_day,
        _member_permnos(snap.members, set(snap.added_permcos)),
    )
    current = timeline.annual_snapshot(year)
    try:
        previous = timeline.annual_snapshot(year - 1)
    except ConfigError:
        logger.warning(
            "%s: no annual snapshot for %d; incumbent group empty", snap.label, year - 1
        )
        return additions, GroupSpec(GROUP_INCUMBENT, snap.label, snap.rank_day, ())
    live = snap.live_members(snap.rank_day)
    incumbents = {
        pc
        for pc in live
        if pc in current.members
        and pc in previous.members
        and current.members[pc].tiers == previous.members[pc].tiers
    }
    incumbents -= set(snap.added_permcos)
    return additions, GroupSpec(
        GROUP_INCUMBENT, snap.label, snap.rank_day, _member_permnos(live, incumbents)
    )


def export_groups_csv(groups: list[GroupSpec], path) -> None:
    """Write group rosters: event,permno,group_tag."""
    rows = [
        {"event": g.event, "permno": permno, "group_tag": g.tag}
        for g in groups
        for permno in g.permnos
    ]
    pd.DataFrame(rows, columns=["event", "permno", "group_tag"]).to_csv(
        path, index=False, lineterminator="\n"
    )


def export_impact_csv(rows: list[ImpactRow], path) -> None:
    """Write impact rows: year,group,mean_temp,se_temp,mean_perm,se_perm,n."""
    records = [
        {
            "year": r.year,
            "group": r.group,
            "mean_temp": r.mean_temp,
            "se_temp": r.se_temp,
            "mean_perm": r.mean_perm,
            "se_perm": r.se_perm,
            "n": r.n,
        }
        for r in rows
    ]
    pd.DataFrame(
        records, columns=["year", "group", "mean_temp", "se_temp", "mean_perm", "se_perm", "n"]
    ).to_csv(path, index=False, lineterminator="\n")
