"""Synthetic CRSP-shaped universes and independent brute-force oracles.

The generator scripts IPOs into known quarterly windows, schedules
delistings and splits, and emits bars/meta tables that satisfy the ingestion
contracts. The oracles at the bottom re-derive membership, weights, and
impact means from raw bars with plain loops and stdlib arithmetic; they
deliberately share no logic with `reconstitution` or `impact` (only the data
containers and the trading calendar), so an engine bug cannot hide in both.

Both sides follow the same documented conventions: constituent caps sum in
ascending-permno order, tier totals sum in rank order, and ties rank by
ascending permco.
"""

from __future__ import annotations

import calendar as _stdlib_calendar
import math
import statistics
from dataclasses import asdict, dataclass
from datetime import date

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .market_data import BarTable, MetaTable
from .trading_calendar import (
    TradingCalendar,
    annual_rebalance_day,
    build_trading_calendar,
    rebalance_calendar,
)

_GENERATOR_RETRIES = 20
_ORACLE_DELIST_GAP = 5


@dataclass(frozen=True)
class UniverseConfig:
    """Shape of a generated universe; every field feeds the seeded generator."""

    n_companies: int
    years: tuple[int, int]
    multi_class_fraction: float = 0.10
    ipo_rate: float = 0.5
    delist_rate: float = 0.08
    drift: float = 0.0002
    volatility: float = 0.02
    halt_rate: float = 0.001  # chance a bar loses its price (halted day)
    missing_ret_rate: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.n_companies < 1:
            raise ConfigError("n_companies must be >= 1")
        for name in ("multi_class_fraction", "ipo_rate", "delist_rate",
                     "halt_rate", "missing_ret_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.years[0] > self.years[1]:
            raise ConfigError(f"invalid year range {self.years}")


def _oracle_add_months(d: date, months: int) -> date:
    # Reimplemented here on purpose; the generator and oracles must not lean
    # on the engine's date helper.
    total = d.year * 12 + (d.month - 1) + months
    year, month = divmod(total, 12)
    month += 1
    day = min(d.day, _stdlib_calendar.monthrange(year, month)[1])
    return date(year, month, day)


class _SecuritySpec:
    """Mutable generation record for one security."""

    def __init__(self, permno, permco, beg_pos, end_pos, base_price, shrout,
                 hshrcd, domicile):
        self.permno = permno
        self.permco = permco
        self.beg_pos = beg_pos  # index into the session grid
        self.end_pos = end_pos  # exclusive
        self.base_price = base_price
        self.shrout = shrout  # thousands of shares, pre-split
        self.hshrcd = hshrcd
        self.domicile = domicile
        self.split_pos: int | None = None
        self.split_factor = 2.0


def generate_universe(config: UniverseConfig) -> tuple[BarTable, MetaTable, dict]:
    """Generate (bars, meta, ground-truth event script) for a config.

    Deterministic per (config, seed). Retries with a derived seed when a
    draw leaves an annual rank day without enough eligible companies, so
    downstream pipelines never hit the degenerate-empty path by accident.
    """
    last_error = None
    for attempt in range(_GENERATOR_RETRIES):
        bars, meta, script = _generate_once(config, attempt)
        ok, why = _has_eligible_companies(bars, meta, script["rank_days"])
        if ok:
            script["attempt"] = attempt
            return bars, meta, script
        last_error = why
    raise DataError(f"could not generate an eligible universe: {last_error}")


def _generate_once(config: UniverseConfig, attempt: int) -> tuple[BarTable, MetaTable, dict]:
    rng = np.random.default_rng([config.seed, attempt])
    y0, y1 = config.years
    cal = build_trading_calendar(date(y0, 1, 2), date(y1 + 1, 7, 31))
    sessions = cal.sessions(cal.start, cal.end)
    n_days = len(sessions)
    pos_of = {d: i for i, d in enumerate(sessions)}
    cycles = [rebalance_calendar(y, cal) for y in range(y0, y1 + 1)]
    rank_days = [cyc.annual_rank for cyc in cycles]

    securities: list[_SecuritySpec] = []
    script: dict = {
        "config": {**asdict(config), "years": list(config.years)},
        "companies": [],
        "ipos": [],
        "delistings": [],
        "splits": [],
        "rank_days": [d.isoformat() for d in rank_days],
    }
    next_permno = [10_001]
    next_permco = [1_001]

    base_caps = np.exp(rng.uniform(np.log(15e6), np.log(3e11), size=config.n_companies))

    def new_company(beg_pos: int, cap_target: float, penny: bool,
                    multi_class: bool, domicile: bool) -> list[_SecuritySpec]:
        permco = next_permco[0]
        next_permco[0] += 1
        if penny:
            price = float(rng.uniform(0.2, 0.95))
        else:
            price = float(np.exp(rng.uniform(np.log(5.0), np.log(400.0))))
        classes = []
        shares_split = [1.0]
        if multi_class:
            lead = float(rng.uniform(0.55, 0.85))
            shares_split = [lead, 1.0 - lead]
        for frac in shares_split:
            permno = next_permno[0]
            next_permno[0] += 1
            class_price = price if len(classes) == 0 else float(
                price * rng.uniform(0.4, 1.4)
            )
            shrout = max(1.0, round(cap_target * frac / (class_price * 1000.0)))
            classes.append(
                _SecuritySpec(permno, permco, beg_pos, n_days, class_price, shrout,
                              hshrcd=10 if len(classes) == 0 else 11,
                              domicile=domicile)
            )
        if rng.random() < 0.05:
            permno = next_permno[0]
            next_permno[0] += 1
            classes.append(
                _SecuritySpec(permno, permco, beg_pos, n_days,
                              float(rng.uniform(5, 50)), 100.0,
                              hshrcd=31, domicile=domicile)
            )
        securities.extend(classes)
        script["companies"].append(
            {
                "permco": permco,
                "permnos": [s.permno for s in classes],
                "begdat": sessions[beg_pos].isoformat(),
                "delist_date": None,
            }
        )
        return classes

    # Initial cross-section, alive from the range start.
    for i in range(config.n_companies):
        new_company(
            beg_pos=0,
            cap_target=float(base_caps[i]),
            penny=bool(rng.random() < 0.04),
            multi_class=bool(rng.random() < config.multi_class_fraction),
            domicile=bool(rng.random() >= 0.03),
        )

    # Scripted IPOs: inside quarterly windows post-2004, mid-year otherwise.
    cap_quantiles = np.quantile(base_caps, [0.3, 0.9, 0.97])
    for cyc in cycles:
        windows = []
        if cyc.quarters:
            for q in cyc.quarters:
                start = _oracle_add_months(q.rank, -3)
                windows.append((q.label, start, q.rank))
        else:
            windows.append(("annual", date(cyc.cycle_year, 7, 1), date(cyc.cycle_year, 12, 15)))
        for label, w_start, w_end in windows:
            count = int(rng.binomial(max(2, config.n_companies // 25), config.ipo_rate))
            window_sessions = [d for d in sessions if w_start < d <= w_end]
            if not window_sessions:
                continue
            for _ in range(count):
                beg = window_sessions[int(rng.integers(0, len(window_sessions)))]
                u = rng.random()
                penny = False
                if u < 0.20:
                    target = float(cap_quantiles[2] * rng.uniform(1.0, 2.0))
                elif u < 0.55:
                    target = float(np.exp(rng.uniform(np.log(cap_quantiles[0]),
                                                      np.log(cap_quantiles[1]))))
                elif u < 0.80:
                    target = float(rng.uniform(30e6, max(31e6, cap_quantiles[0])))
                elif u < 0.90:
                    target = float(rng.uniform(5e6, 29e6))
                else:
                    target = float(rng.uniform(40e6, 200e6))
                    penny = True
                classes = new_company(
                    beg_pos=pos_of[beg],
                    cap_target=target,
                    penny=penny,
                    multi_class=bool(rng.random() < config.multi_class_fraction / 2),
                    domicile=True,
                )
                script["ipos"].append(
                    {
                        "permco": classes[0].permco,
                        "permnos": [s.permno for s in classes],
                        "begdat": beg.isoformat(),
                        "window": f"{cyc.cycle_year}-{label}",
                    }
                )

    # Delistings: per company, one draw per cycle year.
    year_positions = {
        y: [i for i, d in enumerate(sessions) if d.year == y] for y in range(y0, y1 + 2)
    }
    for record in script["companies"]:
        beg_pos = pos_of[date.fromisoformat(record["begdat"])]
        for y in range(y0, y1 + 2):
            candidates = [p for p in year_positions.get(y, []) if p > beg_pos + 40]
            if not candidates:
                continue
            if rng.random() < config.delist_rate / (2.0 if y == y1 + 1 else 1.0):
                end_pos = candidates[int(rng.integers(0, len(candidates)))]
                for sec in securities:
                    if sec.permco == record["permco"]:
                        sec.end_pos = end_pos + 1
                record["delist_date"] = sessions[end_pos].isoformat()
                script["delistings"].append(
                    {"permco": record["permco"], "date": sessions[end_pos].isoformat()}
                )
                break

    # Splits on a minority of long-lived securities.
    for sec in securities:
        if sec.hshrcd == 31 or sec.end_pos - sec.beg_pos < 260:
            continue
        if rng.random() < 0.08:
            sec.split_pos = int(rng.integers(sec.beg_pos + 30, sec.end_pos - 30))
            script["splits"].append(
                {"permno": sec.permno, "date": sessions[sec.split_pos].isoformat(),
                 "factor": sec.split_factor}
            )

    # Price paths and bar assembly (one concatenated array per column).
    session_index = pd.DatetimeIndex(pd.to_datetime(sessions))
    columns: dict[str, list[np.ndarray]] = {
        name: [] for name in
        ("permno", "permco", "date", "prc", "midpoint", "shrout", "ret", "cfacpr")
    }
    meta_rows = []
    for sec in securities:
        span = sec.end_pos - sec.beg_pos
        if span <= 0:
            continue
        log_r = rng.normal(config.drift, config.volatility, size=span)
        log_r[0] = 0.0
        adj = sec.base_price * np.exp(np.cumsum(log_r))
        ret = np.expm1(log_r)
        ret[0] = np.nan

        cfacpr = np.ones(span)
        shrout = np.full(span, sec.shrout)
        if sec.split_pos is not None:
            cut = sec.split_pos - sec.beg_pos
            cfacpr[:cut] = sec.split_factor
            shrout[cut:] = sec.shrout * sec.split_factor
        prc = adj * cfacpr

        halted = rng.random(span) < config.halt_rate
        halted[0] = False
        prc = np.where(halted, np.nan, prc)
        ret = np.where(halted, np.nan, ret)
        missing_ret = rng.random(span) < config.missing_ret_rate
        ret = np.where(missing_ret, np.nan, ret)
        midpoint = rng.random(span) < 0.002

        columns["permno"].append(np.full(span, sec.permno, dtype=np.int64))
        columns["permco"].append(np.full(span, sec.permco, dtype=np.int64))
        columns["date"].append(session_index.values[sec.beg_pos : sec.end_pos])
        columns["prc"].append(prc)
        columns["midpoint"].append(midpoint & ~halted)
        columns["shrout"].append(shrout)
        columns["ret"].append(ret)
        columns["cfacpr"].append(cfacpr)
        meta_rows.append(
            {
                "permno": sec.permno,
                "permco": sec.permco,
                "begdat": pd.Timestamp(sessions[sec.beg_pos]),
                "hshrcd": sec.hshrcd,
                "company_name": f"Company {sec.permco}",
                "domicile_flag": sec.domicile,
            }
        )

    bar_frame = pd.DataFrame(
        {name: np.concatenate(parts) for name, parts in columns.items()}
    )
    meta_frame = pd.DataFrame(meta_rows)
    return BarTable(bar_frame), MetaTable(meta_frame), script


def _has_eligible_companies(
    bars: BarTable, meta: MetaTable, rank_days: list[str], minimum: int = 5
) -> tuple[bool, str]:
    probe = _MinimalParams(1, 2, 10**9, 30e6, 1.0)
    for iso in rank_days:
        day = date.fromisoformat(iso)
        assignment = oracle_membership(bars, meta, day, probe)
        if len(assignment.order) < minimum:
            return False, f"only {len(assignment.order)} eligible companies on {day}"
    return True, ""


@dataclass(frozen=True)
class _MinimalParams:
    n_tier1: int
    n_tier3: int
    n_tier_e: int
    min_cap: float
    min_price: float


@dataclass
class OracleAssignment:
    """Brute-force ranking outcome for one rank day."""

    order: list[int]  # permcos, best rank first
    tiers: dict[int, frozenset]
    weights: dict[int, dict[str, float]]
    caps: dict[int, float]
    constituents: dict[int, list[tuple[int, float, float, float]]]
    breakpoints: tuple  # (tier1_floor, tier3_floor, tier2_ceiling, tier2_floor)
    skipped: list[int]


def oracle_membership(bars: BarTable, meta: MetaTable, rank_day: date,
                      params) -> OracleAssignment:
    """Naive full-sort ranking on one day; no incremental structures.

    Written independently of the engine: plain dict loops over the day's
    rows, a literal sort, and literal tier cuts.
    """
    rows = bars.on_date(rank_day)
    constituents: dict[int, list[tuple[int, float, float, float]]] = {}
    skipped: list[int] = []
    for row in rows.itertuples():
        m = meta.get(int(row.permno))
        if m is None or m.hshrcd not in (10, 11):
            continue
        if isinstance(row.prc, float) and math.isnan(row.prc):
            skipped.append(int(row.permno))
            continue
        if row.shrout <= 0:
            continue
        entry = (int(row.permno), float(row.prc), float(row.shrout) * 1000.0,
                 float(row.prc) / float(row.cfacpr))
        constituents.setdefault(m.permco, []).append(entry)

    caps: dict[int, float] = {}
    eligible: list[int] = []
    for permco in sorted(constituents):
        consts = sorted(constituents[permco], key=lambda e: e[0])
        constituents[permco] = consts
        cap = 0.0
        for _permno, price, shares, _adj in consts:
            cap += price * shares
        if cap <= 0:
            continue
        caps[permco] = cap
        rep = consts[0]
        for entry in consts[1:]:
            price_shares = entry[1] * entry[2]
            if price_shares > rep[1] * rep[2]:
                rep = entry
        rep_meta = meta.get(rep[0])
        if not rep_meta.domicile_flag:
            continue
        if not rep[3] > params.min_price:
            continue
        if cap < params.min_cap:
            continue
        eligible.append(permco)

    order = sorted(eligible, key=lambda pc: (-caps[pc], pc))[: params.n_tier_e]
    tiers: dict[int, frozenset] = {}
    for pos, pc in enumerate(order, start=1):
        t = {"TE"}
        if pos <= params.n_tier3:
            t.add("T3")
            t.add("T1" if pos <= params.n_tier1 else "T2")
        tiers[pc] = frozenset(t)

    full_order = sorted(eligible, key=lambda pc: (-caps[pc], pc))

    def cap_at(pos):
        return caps[full_order[pos - 1]] if 0 < pos <= len(full_order) else None

    n1 = min(params.n_tier1, len(full_order))
    n3 = min(params.n_tier3, len(full_order))
    has_t2 = n3 > params.n_tier1
    breakpoints = (
        cap_at(n1),
        cap_at(n3),
        cap_at(params.n_tier1 + 1) if has_t2 else None,
        cap_at(n3) if has_t2 else None,
    )

    weights = _oracle_weights(order, tiers, caps)
    return OracleAssignment(
        order=order,
        tiers=tiers,
        weights=weights,
        caps=caps,
        constituents={pc: constituents[pc] for pc in order},
        breakpoints=breakpoints,
        skipped=sorted(skipped),
    )


def _oracle_weights(order, tiers, caps):
    weights: dict[int, dict[str, float]] = {pc: {} for pc in order}
    for tier in ("T1", "T2", "T3", "TE"):
        total = 0.0
        for pc in order:
            if tier in tiers[pc]:
                total = total + caps[pc]
        for pc in order:
            if tier in tiers[pc]:
                weights[pc][tier] = caps[pc] / total
    return weights


@dataclass
class OracleEvent:
    """One reconstitution event as the brute-force replay sees it."""

    origin: str
    cycle_year: int
    rank_day: date
    start: date
    end: date
    order: list[int]
    tiers: dict[int, frozenset]
    weights: dict[int, dict[str, float]]
    caps: dict[int, float]
    constituents: dict[int, list[int]]  # permco -> permnos carried
    added: list[int]
    delistings: dict[int, date]


def oracle_timeline(bars: BarTable, meta: MetaTable, params, cal: TradingCalendar,
                    years: tuple[int, int]) -> list[OracleEvent]:
    """Replay the full multi-year reconstitution with brute force."""
    y0, y1 = years
    cycles = [rebalance_calendar(y, cal) for y in range(y0, y1 + 1)]
    final_close = annual_rebalance_day(y1 + 1, cal)
    raw_events = []
    for cyc in cycles:
        raw_events.append(("annual", cyc.cycle_year, cyc.annual_rank, cyc.annual_rebalance))
        for q in cyc.quarters:
            raw_events.append((q.label, q.cycle_year, q.rank, q.rebalance))
    raw_events.sort(key=lambda e: e[3])

    events: list[OracleEvent] = []
    annual_bp = None
    prev: OracleEvent | None = None
    for i, (origin, cycle_year, rank_day, reb_day) in enumerate(raw_events):
        end = raw_events[i + 1][3] if i + 1 < len(raw_events) else final_close
        if origin == "annual":
            assign = oracle_membership(bars, meta, rank_day, params)
            annual_bp = assign.breakpoints
            event = OracleEvent(
                origin=origin, cycle_year=cycle_year, rank_day=rank_day,
                start=reb_day, end=end,
                order=assign.order, tiers=assign.tiers, weights=assign.weights,
                caps=assign.caps,
                constituents={pc: [e[0] for e in assign.constituents[pc]]
                              for pc in assign.order},
                added=[], delistings={},
            )
        else:
            live = {
                pc: prev.tiers[pc]
                for pc in prev.order
                if pc not in prev.delistings or prev.delistings[pc] >= rank_day
            }
            carried = {pc: prev.constituents[pc] for pc in live}
            # Remeasure incumbents on the quarterly rank day.
            day_rows = {}
            for row in bars.on_date(rank_day).itertuples():
                day_rows[int(row.permno)] = row
            caps = {}
            consts_now = {}
            for pc in live:
                total = 0.0
                fresh = []
                for permno in carried[pc]:
                    row = day_rows.get(permno)
                    if row is None:
                        continue
                    if isinstance(row.prc, float) and math.isnan(row.prc):
                        continue
                    if row.shrout <= 0:
                        continue
                    # Same association as the engine: price * (shrout * 1000).
                    total += float(row.prc) * (float(row.shrout) * 1000.0)
                    fresh.append(permno)
                if fresh:
                    caps[pc] = total
                    consts_now[pc] = fresh
                else:
                    caps[pc] = prev.caps[pc]
                    consts_now[pc] = carried[pc]

            # New-company IPO candidates for the window.
            window_start = _oracle_add_months(rank_day, -3)
            candidate_permcos = set()
            for permno in meta.permnos:
                m = meta.get(permno)
                if window_start < m.begdat <= rank_day and m.permco not in live:
                    candidate_permcos.add(m.permco)
            added = []
            if candidate_permcos:
                day_assign = oracle_membership(bars, meta, rank_day, _AllParams(params))
                for pc in sorted(candidate_permcos):
                    if pc not in day_assign.caps:
                        continue
                    cap = day_assign.caps[pc]
                    if pc not in day_assign.order:
                        continue  # failed eligibility in the naive pass
                    t1f, t3f, _c2, _f2 = annual_bp
                    if t1f is not None and cap >= t1f:
                        t = frozenset({"T1", "T3", "TE"})
                    elif t3f is not None and cap >= t3f:
                        t = frozenset({"T2", "T3", "TE"})
                    else:
                        continue
                    added.append(pc)
                    live[pc] = t
                    caps[pc] = cap
                    consts_now[pc] = [e[0] for e in day_assign.constituents[pc]]

            order = sorted(live, key=lambda pc: (-caps[pc], pc))
            tiers = {pc: live[pc] for pc in order}
            weights = _oracle_weights(order, tiers, caps)
            event = OracleEvent(
                origin=origin, cycle_year=cycle_year, rank_day=rank_day,
                start=reb_day, end=end,
                order=order, tiers=tiers, weights=weights, caps=caps,
                constituents=consts_now, added=added, delistings={},
            )

        # Brute-force delist scan over the effective period.
        for pc in sorted(event.order):
            last = None
            for permno in event.constituents[pc]:
                d = bars.last_bar_date(permno)
                if d is not None and (last is None or d > last):
                    last = d
            if last is None or last >= event.end:
                continue
            if cal.trading_days_between(last, event.end) > _ORACLE_DELIST_GAP:
                event.delistings[pc] = last
        events.append(event)
        prev = event
    return events


class _AllParams:
    """Pass-through eligibility with tier caps wide open (oracle helper)."""

    def __init__(self, params):
        self.n_tier1 = 1
        self.n_tier3 = 2
        self.n_tier_e = 10**9
        self.min_cap = params.min_cap
        self.min_price = params.min_price


@dataclass
class OracleImpactStats:
    mean_temp: float
    se_temp: float
    mean_perm: float
    se_perm: float
    n: int
    dropped: int


def oracle_impact_means(
    groups: dict[str, list[tuple[int, date]]],
    bars: BarTable,
    cal: TradingCalendar,
    max_snap: int = 5,
) -> dict[str, OracleImpactStats]:
    """Direct enumeration of impact means/SEs for anchored (permno, date) groups.

    Uses its own backward-snapping walk and stdlib statistics, so it checks
    the impact engine arithmetic end to end. Values are in percent.
    """
    out = {}
    for tag, anchored in groups.items():
        temps, perms = [], []
        dropped = 0
        for permno, anchor in anchored:
            prices = []
            for k in (0, 1, 2):
                target = _oracle_add_months(anchor, k)
                price = _oracle_price_before(bars, cal, permno, target, max_snap)
                if price is None:
                    break
                prices.append(price)
            if len(prices) != 3:
                dropped += 1
                continue
            p0, p1, p2 = prices
            temps.append(math.log(p1) - math.log(p2))
            perms.append(math.log(p2) - math.log(p0))
        n = len(temps)
        if n == 0:
            out[tag] = OracleImpactStats(math.nan, math.nan, math.nan, math.nan, 0, dropped)
            continue
        se_t = 100.0 * statistics.stdev(temps) / math.sqrt(n) if n > 1 else math.nan
        se_p = 100.0 * statistics.stdev(perms) / math.sqrt(n) if n > 1 else math.nan
        out[tag] = OracleImpactStats(
            mean_temp=100.0 * statistics.fmean(temps),
            se_temp=se_t,
            mean_perm=100.0 * statistics.fmean(perms),
            se_perm=se_p,
            n=n,
            dropped=dropped,
        )
    return out


def _oracle_price_before(bars, cal, permno, target, max_snap):
    dates = bars.dates_for(permno)
    if dates.size == 0:
        return None
    rows = None
    chosen = None
    for i in range(dates.size - 1, -1, -1):
        d = dates[i].astype("datetime64[D]").astype(date)
        if d > target:
            continue
        bar = bars.get(permno, d)
        if bar.prc is None:
            continue
        chosen = (d, abs(bar.prc) / bar.cfacpr)
        break
    if chosen is None:
        return None
    snapped, price = chosen
    if cal.trading_days_between(snapped, target) > max_snap:
        return None
    if price <= 0:
        return None
    return price


def write_script_json(script: dict, path) -> None:
    """Persist the ground-truth event script."""
    import json

    with open(path, "w") as fh:
        json.dump(script, fh, indent=2, sort_keys=True)
        fh.write("\n")
