"""Cap-ranked tier assignment, quarterly IPO additions, and membership timelines.

Tier conventions
    T1  largest-cap tier (top n_tier1 companies)
    T2  the next band, ranks n_tier1+1 .. n_tier3
    T3  union of T1 and T2 (top n_tier3)
    TE  extended universe (top n_tier_e)

Determinism rules (mirrored by the independent oracle in `synth`):
    * company caps sum constituent caps in ascending-permno order;
    * ranking sorts by (cap descending, permco ascending);
    * tier weight denominators sum member caps in rank order;
    * the representative constituent (price/domicile proxy) is the
      largest-cap one, ties to the lowest permno.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date

import pandas as pd

from .dates import add_months
from .errors import ConfigError, DataError
from .market_data import BarTable, MetaTable
from .trading_calendar import (
    QUARTERLY_ADDITIONS_START_YEAR,
    QuarterEvent,
    RebalanceCalendar,
    TradingCalendar,
    annual_rebalance_day,
    rebalance_calendar,
)

logger = logging.getLogger(__name__)

TIER1, TIER2, TIER3, TIERE = "T1", "T2", "T3", "TE"
ALL_TIERS = (TIER1, TIER2, TIER3, TIERE)

DELIST_GAP_TRADING_DAYS = 5  # longer bar gaps read as delistings, shorter as halts


@dataclass(frozen=True)
class IndexParams:
    """Tier sizes and eligibility thresholds.

    Defaults match the flagship large/broad/extended universe sizes; smaller
    values make desk-scale universes testable.
    """

    n_tier1: int = 1000
    n_tier3: int = 3000
    n_tier_e: int = 4000
    min_cap: float = 30_000_000.0
    min_price: float = 1.0

    def __post_init__(self):
        if not (0 < self.n_tier1 < self.n_tier3 <= self.n_tier_e):
            raise ConfigError(
                f"tier sizes must satisfy 0 < n_tier1 < n_tier3 <= n_tier_e, "
                f"got ({self.n_tier1}, {self.n_tier3}, {self.n_tier_e})"
            )
        if self.min_cap <= 0 or self.min_price <= 0:
            raise ConfigError("min_cap and min_price must be positive")


@dataclass(frozen=True)
class Constituent:
    """One security's contribution to its company on a measurement day."""

    permno: int
    price: float  # unadjusted close, absolute value
    shares: float  # raw share count (shrout is in thousands)
    adj_price: float  # price / cfacpr

    @property
    def cap(self) -> float:
        return self.price * self.shares


@dataclass(frozen=True)
class CompanyCap:
    """Company capitalization: the ascending-permno sum over constituents."""

    permco: int
    cap: float
    constituents: tuple[Constituent, ...]

    @property
    def representative(self) -> Constituent:
        """Largest-cap constituent, ties to the lowest permno."""
        return max(self.constituents, key=lambda c: (c.cap, -c.permno))


@dataclass(frozen=True)
class Breakpoints:
    """Annual rank-day cap boundaries used to slot quarterly additions."""

    tier1_floor: float | None
    tier3_floor: float | None
    tier2_ceiling: float | None
    tier2_floor: float | None


@dataclass(frozen=True)
class RankedMember:
    company: CompanyCap
    tiers: frozenset[str]


@dataclass(frozen=True)
class Member:
    """A snapshot roster entry with its per-tier weights."""

    permco: int
    permnos: tuple[int, ...]
    tiers: frozenset[str]
    weights: dict[str, float]
    cap_at_rank: float
    constituents: tuple[Constituent, ...]


@dataclass
class MembershipSnapshot:
    """Roster, weights, and breakpoints in force over [effective_start, effective_end)."""

    origin: str  # "annual" | "Q3" | "Q4" | "Q1"
    cycle_year: int
    rank_day: date
    effective_start: date
    effective_end: date
    members: dict[int, Member]  # permco -> Member, in rank order
    breakpoints: Breakpoints
    skipped_permnos: tuple[int, ...] = ()
    added_permcos: tuple[int, ...] = ()  # quarterly events: the additions
    delistings: dict[int, date] = field(default_factory=dict)

    @property
    def label(self) -> str:
        if self.origin == "annual":
            return f"{self.cycle_year}-annual"
        return f"{self.cycle_year}-{self.origin}"

    def tier_members(self, tier: str) -> list[Member]:
        return [m for m in self.members.values() if tier in m.tiers]

    def live_members(self, as_of: date) -> dict[int, Member]:
        """Roster minus companies delisted strictly before `as_of`."""
        return {
            pc: m
            for pc, m in self.members.items()
            if pc not in self.delistings or self.delistings[pc] >= as_of
        }


@dataclass(frozen=True)
class ChangeRecord:
    event: str
    date: date
    permco: int
    action: str  # add | delete | delist | quarterly_add


@dataclass
class MembershipTimeline:
    """Contiguous sequence of snapshots plus the per-event change log."""

    snapshots: list[MembershipSnapshot]
    change_log: list[ChangeRecord]
    cycles: list[RebalanceCalendar]
    params: IndexParams
    calendar: TradingCalendar

    def annual_snapshot(self, year: int) -> MembershipSnapshot:
        for snap in self.snapshots:
            if snap.origin == "annual" and snap.cycle_year == year:
                return snap
        raise ConfigError(f"no annual snapshot for cycle year {year}")

    def quarter_snapshot(self, year: int, label: str) -> MembershipSnapshot:
        for snap in self.snapshots:
            if snap.origin == label and snap.cycle_year == year:
                return snap
        raise ConfigError(f"no {label} snapshot for cycle year {year}")

    def snapshot_before(self, snap: MembershipSnapshot) -> MembershipSnapshot | None:
        idx = self.snapshots.index(snap)
        return self.snapshots[idx - 1] if idx > 0 else None

    def cycle(self, year: int) -> RebalanceCalendar:
        for cyc in self.cycles:
            if cyc.cycle_year == year:
                return cyc
        raise ConfigError(f"cycle year {year} not in timeline")


def company_caps(
    bars: BarTable, meta: MetaTable, rank_day: date
) -> tuple[list[CompanyCap], list[int]]:
    """Capitalization of every company with priced common stock on `rank_day`.

    Only share codes 10/11 contribute. Securities with a missing price are
    skipped and reported; zero-share rows are excluded from the sum. Returns
    (caps ascending by permco, skipped permno list).
    """
    rows = bars.on_date(rank_day)
    per_company: dict[int, list[Constituent]] = {}
    skipped: list[int] = []
    for row in rows.itertuples():
        m = meta.get(int(row.permno))
        if m is None or not m.is_common:
            continue
        if pd.isna(row.prc):
            skipped.append(int(row.permno))
            continue
        if row.shrout <= 0:
            continue
        const = Constituent(
            permno=int(row.permno),
            price=float(row.prc),
            shares=float(row.shrout) * 1000.0,
            adj_price=float(row.prc) / float(row.cfacpr),
        )
        per_company.setdefault(m.permco, []).append(const)

    caps = []
    for permco in sorted(per_company):
        consts = sorted(per_company[permco], key=lambda c: c.permno)
        cap = sum(c.cap for c in consts)
        if cap <= 0:
            continue
        caps.append(CompanyCap(permco=permco, cap=cap, constituents=tuple(consts)))
    return caps, sorted(skipped)


def eligibility_filter(
    caps: list[CompanyCap],
    bars: BarTable,
    meta: MetaTable,
    params: IndexParams,
) -> list[CompanyCap]:
    """Keep US-domiciled companies above the price and capitalization floors.

    The company-level price and domicile tests use the representative
    (largest-cap) constituent; the price test runs on adjusted prices and is
    strict: adj_price must exceed min_price.
    """
    kept = []
    for company in caps:
        rep = company.representative
        rep_meta = meta.get(rep.permno)
        if rep_meta is None or not rep_meta.domicile_flag:
            continue
        if not rep.adj_price > params.min_price:
            continue
        if company.cap < params.min_cap:
            continue
        kept.append(company)
    return kept


def rank_and_assign(
    eligible: list[CompanyCap], params: IndexParams
) -> tuple[list[RankedMember], Breakpoints]:
    """Sort by cap and cut tiers; record boundary caps as breakpoints.

    When fewer than n_tier_e companies are eligible, everything available is
    assigned. Equal caps rank by ascending permco.
    """
    if not eligible:
        raise DataError("empty eligible set: nothing to rank")
    ranked_caps = sorted(eligible, key=lambda c: (-c.cap, c.permco))
    members = []
    for pos, company in enumerate(ranked_caps[: params.n_tier_e], start=1):
        tiers = {TIERE}
        if pos <= params.n_tier3:
            tiers.add(TIER3)
            tiers.add(TIER1 if pos <= params.n_tier1 else TIER2)
        members.append(RankedMember(company=company, tiers=frozenset(tiers)))

    def cap_at(pos: int) -> float | None:
        return ranked_caps[pos - 1].cap if 0 < pos <= len(ranked_caps) else None

    n1 = min(params.n_tier1, len(ranked_caps))
    n3 = min(params.n_tier3, len(ranked_caps))
    has_t2 = n3 > params.n_tier1
    bp = Breakpoints(
        tier1_floor=cap_at(n1),
        tier3_floor=cap_at(n3),
        tier2_ceiling=cap_at(params.n_tier1 + 1) if has_t2 else None,
        tier2_floor=cap_at(n3) if has_t2 else None,
    )
    return members, bp


def compute_weights(ranked: list[RankedMember]) -> dict[int, Member]:
    """Cap-proportional weights within each tier; members keyed in rank order."""
    totals: dict[str, float] = {}
    for tier in ALL_TIERS:
        totals[tier] = sum(rm.company.cap for rm in ranked if tier in rm.tiers)
    out: dict[int, Member] = {}
    for rm in ranked:
        weights = {tier: rm.company.cap / totals[tier] for tier in rm.tiers}
        out[rm.company.permco] = Member(
            permco=rm.company.permco,
            permnos=tuple(c.permno for c in rm.company.constituents),
            tiers=rm.tiers,
            weights=weights,
            cap_at_rank=rm.company.cap,
            constituents=rm.company.constituents,
        )
    return out


def tiers_for_cap(cap: float, bp: Breakpoints) -> frozenset[str]:
    """Slot a quarterly candidate into tiers by the annual breakpoints.

    Floors are inclusive. A cap below the broad-tier floor joins nothing;
    the extended tier follows the broad tier to preserve the hierarchy.
    """
    if bp.tier1_floor is not None and cap >= bp.tier1_floor:
        return frozenset({TIER1, TIER3, TIERE})
    if bp.tier3_floor is not None and cap >= bp.tier3_floor:
        return frozenset({TIER2, TIER3, TIERE})
    return frozenset()


def quarterly_ipo_additions(
    quarter: QuarterEvent,
    current_members: dict[int, Member],
    annual_bp: Breakpoints,
    bars: BarTable,
    meta: MetaTable,
    params: IndexParams,
) -> list[RankedMember]:
    """New-company IPO additions for one quarterly event.

    Candidates are securities whose first trading date falls inside the
    three calendar months ending on the quarter rank day and whose company
    is not already a member. Candidate companies are measured and filtered
    on the rank day, then slotted by the most recent annual breakpoints.
    Existing members are never displaced.
    """
    if quarter.cycle_year < QUARTERLY_ADDITIONS_START_YEAR:
        raise ConfigError("quarterly additions not active before "
                          f"{QUARTERLY_ADDITIONS_START_YEAR}")
    window_start = add_months(quarter.rank, -3)
    candidate_permcos = set()
    for permno in meta.permnos:
        m = meta.get(permno)
        if window_start < m.begdat <= quarter.rank and m.permco not in current_members:
            candidate_permcos.add(m.permco)
    if not candidate_permcos:
        return []

    caps, _skipped = company_caps(bars, meta, quarter.rank)
    candidate_caps = [c for c in caps if c.permco in candidate_permcos]
    eligible = eligibility_filter(candidate_caps, bars, meta, params)
    additions = []
    for company in sorted(eligible, key=lambda c: c.permco):
        tiers = tiers_for_cap(company.cap, annual_bp)
        if tiers:
            additions.append(RankedMember(company=company, tiers=tiers))
    return additions


@dataclass(frozen=True)
class DelistRecord:
    permco: int
    permnos: tuple[int, ...]
    last_bar: date


def apply_delistings(
    snapshot: MembershipSnapshot,
    bars: BarTable,
    cal: TradingCalendar,
) -> list[DelistRecord]:
    """Mark members whose bars cease during the snapshot's effective range.

    A company is delisted when no constituent has a bar for more than
    DELIST_GAP_TRADING_DAYS trading days before the period end; the delist
    date is the last bar date. Nobody is ever replaced.
    """
    records = []
    for permco in sorted(snapshot.members):
        member = snapshot.members[permco]
        last = None
        for permno in member.permnos:
            d = bars.last_bar_date(permno)
            if d is not None and (last is None or d > last):
                last = d
        if last is None or last >= snapshot.effective_end:
            continue
        gap = cal.trading_days_between(last, snapshot.effective_end)
        if gap > DELIST_GAP_TRADING_DAYS:
            snapshot.delistings[permco] = last
            records.append(DelistRecord(permco=permco, permnos=member.permnos, last_bar=last))
    if records and len(snapshot.delistings) == len(snapshot.members):
        logger.warning("%s: every member delisted during the period", snapshot.label)
    return records


def _day_rows(bars: BarTable, day: date) -> dict[int, tuple[float, float, float]]:
    """permno -> (prc, shrout, cfacpr) for bars with a price on `day`."""
    out = {}
    for row in bars.on_date(day).itertuples():
        if pd.isna(row.prc):
            continue
        out[int(row.permno)] = (float(row.prc), float(row.shrout), float(row.cfacpr))
    return out


def _remeasure(
    member: Member, day_rows: dict[int, tuple[float, float, float]]
) -> tuple[CompanyCap, bool]:
    """Re-price a member's constituents on a day; carry forward when dark.

    Returns (company cap, carried) where carried means no constituent had a
    usable bar and the previous measurement was kept.
    """
    consts = []
    for prev in member.constituents:
        row = day_rows.get(prev.permno)
        if row is None:
            continue
        prc, shrout, cfacpr = row
        if shrout <= 0:
            continue
        consts.append(
            Constituent(
                permno=prev.permno,
                price=prc,
                shares=shrout * 1000.0,
                adj_price=prc / cfacpr,
            )
        )
    if not consts:
        return CompanyCap(member.permco, member.cap_at_rank, member.constituents), True
    cap = sum(c.cap for c in consts)
    return CompanyCap(member.permco, cap, tuple(consts)), False


def membership_timeline(
    years: tuple[int, int],
    bars: BarTable,
    meta: MetaTable,
    params: IndexParams,
    cal: TradingCalendar,
) -> MembershipTimeline:
    """Run the full reconstitution over cycle years [first, last].

    Each cycle contributes an annual snapshot and, from 2004 on, three
    quarterly snapshots. Effective ranges are contiguous: each snapshot ends
    where the next begins, and the last closes at the following cycle's
    annual rebalance day. Identical inputs produce identical timelines.
    """
    first, last = years
    if first > last:
        raise ConfigError(f"invalid cycle-year range {years}")
    cycles = [rebalance_calendar(y, cal) for y in range(first, last + 1)]
    final_close = annual_rebalance_day(last + 1, cal)

    events: list[tuple[str, int, date, date]] = []  # (origin, cycle_year, rank, rebalance)
    for cyc in cycles:
        events.append(("annual", cyc.cycle_year, cyc.annual_rank, cyc.annual_rebalance))
        for q in cyc.quarters:
            events.append((q.label, q.cycle_year, q.rank, q.rebalance))
    events.sort(key=lambda e: e[3])

    if bars.min_date is None:
        raise DataError("no bars loaded")
    need_start, need_end = events[0][2], final_close
    if bars.min_date > need_start or bars.max_date < need_end:
        raise DataError(
            f"insufficient data coverage: need [{need_start}, {need_end}], "
            f"have [{bars.min_date}, {bars.max_date}]"
        )

    snapshots: list[MembershipSnapshot] = []
    change_log: list[ChangeRecord] = []
    annual_bp: Breakpoints | None = None
    prev: MembershipSnapshot | None = None

    for i, (origin, cycle_year, rank_day, reb_day) in enumerate(events):
        effective_end = events[i + 1][3] if i + 1 < len(events) else final_close
        if origin == "annual":
            caps, skipped = company_caps(bars, meta, rank_day)
            eligible = eligibility_filter(caps, bars, meta, params)
            ranked, annual_bp = rank_and_assign(eligible, params)
            members = compute_weights(ranked)
            snap = MembershipSnapshot(
                origin=origin,
                cycle_year=cycle_year,
                rank_day=rank_day,
                effective_start=reb_day,
                effective_end=effective_end,
                members=members,
                breakpoints=annual_bp,
                skipped_permnos=tuple(skipped),
            )
            before = set(prev.live_members(rank_day)) if prev is not None else set()
            for pc in sorted(set(members) - before):
                change_log.append(ChangeRecord(snap.label, reb_day, pc, "add"))
            for pc in sorted(before - set(members)):
                change_log.append(ChangeRecord(snap.label, reb_day, pc, "delete"))
        else:
            if prev is None:
                raise DataError("quarterly event without a preceding annual snapshot")
            quarter = QuarterEvent(origin, cycle_year, rank_day, reb_day)
            base = prev.live_members(rank_day)
            additions = quarterly_ipo_additions(
                quarter, base, annual_bp, bars, meta, params
            )
            day_rows = _day_rows(bars, rank_day)
            remeasured: list[RankedMember] = []
            for pc in base:
                company, carried = _remeasure(base[pc], day_rows)
                if carried:
                    logger.info(
                        "%s-%s: carried forward cap for permco %d (no bar on %s)",
                        cycle_year, origin, pc, rank_day,
                    )
                remeasured.append(RankedMember(company=company, tiers=base[pc].tiers))
            merged = sorted(
                remeasured + additions, key=lambda rm: (-rm.company.cap, rm.company.permco)
            )
            members = compute_weights(merged)
            snap = MembershipSnapshot(
                origin=origin,
                cycle_year=cycle_year,
                rank_day=rank_day,
                effective_start=reb_day,
                effective_end=effective_end,
                members=members,
                breakpoints=annual_bp,
                added_permcos=tuple(rm.company.permco for rm in additions),
            )
            for pc in snap.added_permcos:
                change_log.append(ChangeRecord(snap.label, reb_day, pc, "quarterly_add"))

        for rec in apply_delistings(snap, bars, cal):
            change_log.append(ChangeRecord(snap.label, rec.last_bar, rec.permco, "delist"))
        snapshots.append(snap)
        prev = snap

    return MembershipTimeline(
        snapshots=snapshots,
        change_log=change_log,
        cycles=cycles,
        params=params,
        calendar=cal,
    )


def roster_before(
    timeline: MembershipTimeline, snap: MembershipSnapshot
) -> dict[int, Member] | None:
    """Members in force immediately before `snap`, net of delistings."""
    prev = timeline.snapshot_before(snap)
    if prev is None:
        return None
    return prev.live_members(snap.rank_day)


def export_snapshots_csv(timeline: MembershipTimeline, path) -> None:
    """Write one row per (event, company, security, tier): date,permco,permno,tier,weight,cap."""
    rows = []
    for snap in timeline.snapshots:
        for member in snap.members.values():
            for tier in sorted(member.tiers):
                for permno in member.permnos:
                    rows.append(
                        {
                            "date": snap.effective_start.isoformat(),
                            "permco": member.permco,
                            "permno": permno,
                            "tier": tier,
                            "weight": member.weights[tier],
                            "cap": member.cap_at_rank,
                        }
                    )
    pd.DataFrame(rows, columns=["date", "permco", "permno", "tier", "weight", "cap"]).to_csv(
        path, index=False, lineterminator="\n"
    )


def export_change_log_csv(timeline: MembershipTimeline, path) -> None:
    """Write the change log: event,date,permco,action."""
    rows = [
        {"event": r.event, "date": r.date.isoformat(), "permco": r.permco, "action": r.action}
        for r in timeline.change_log
    ]
    pd.DataFrame(rows, columns=["event", "date", "permco", "action"]).to_csv(
        path, index=False, lineterminator="\n"
    )
