"""Shared fixtures: CSV writers and a hand-scripted multi-year universe.

The scripted universe is built from piecewise-constant adjusted price paths
so every rank, weight, and impact number is hand-derivable. It exercises:
annual ranking with ineligible companies (low cap, penny price, foreign,
non-common share codes), quarterly IPO additions in all three quarters, a
delisted quarterly addition, tier migrants in both directions, a 2:1 split,
a multi-class company, and a second-class IPO from an index member.
"""

from __future__ import annotations

from datetime import date

import numpy as np
import pandas as pd
import pytest

from capdex.market_data import BarTable, MetaTable
from capdex.reconstitution import IndexParams, membership_timeline
from capdex.trading_calendar import build_trading_calendar


def write_csv(path, header, rows):
    lines = [header] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


class SecSpec:
    def __init__(self, permno, permco, begdat, shrout, segments, end=None,
                 hshrcd=10, domicile=True, split=None, midpoint=False):
        self.permno = permno
        self.permco = permco
        self.begdat = begdat
        self.end = end  # last bar date (inclusive); None = data end
        self.shrout = shrout  # thousands, pre-split
        self.segments = segments  # [(start_date, adjusted_price)], ascending
        self.hshrcd = hshrcd
        self.domicile = domicile
        self.split = split  # (date, factor) or None
        self.midpoint = midpoint  # store prices with the negative convention


def build_universe(specs, sessions):
    """Materialize SecSpecs into (BarTable, MetaTable) over a session grid."""
    frames = []
    meta_rows = []
    for spec in specs:
        days = [d for d in sessions if d >= spec.begdat and (spec.end is None or d <= spec.end)]
        adj = np.empty(len(days))
        for i, d in enumerate(days):
            price = spec.segments[0][1]
            for seg_start, seg_price in spec.segments:
                if d >= seg_start:
                    price = seg_price
            adj[i] = price
        ret = np.empty(len(days))
        ret[0] = np.nan
        ret[1:] = adj[1:] / adj[:-1] - 1.0

        cfacpr = np.ones(len(days))
        shrout = np.full(len(days), float(spec.shrout))
        if spec.split is not None:
            split_date, factor = spec.split
            pre = np.array([d < split_date for d in days])
            cfacpr[pre] = factor
            shrout[~pre] = spec.shrout * factor
        prc = adj * cfacpr

        frames.append(pd.DataFrame({
            "permno": np.full(len(days), spec.permno, dtype=np.int64),
            "permco": np.full(len(days), spec.permco, dtype=np.int64),
            "date": pd.to_datetime(days),
            "prc": prc,
            "midpoint": np.full(len(days), bool(spec.midpoint)),
            "shrout": shrout,
            "ret": ret,
            "cfacpr": cfacpr,
        }))
        meta_rows.append({
            "permno": spec.permno,
            "permco": spec.permco,
            "begdat": pd.Timestamp(spec.begdat),
            "hshrcd": spec.hshrcd,
            "company_name": f"Company {spec.permco}",
            "domicile_flag": spec.domicile,
        })
    bars = BarTable(pd.concat(frames, ignore_index=True))
    meta = MetaTable(pd.DataFrame(meta_rows))
    return bars, meta


# Permco/permno handles for the scripted universe.
A, B, C, D, E, K, F, G, L, N, M, U, P, P2 = (
    1001, 1002, 1003, 1004, 1005, 1006, 1007, 1008, 1009, 1011, 1010, 1012, 1013, 1014
)


def scripted_specs(start):
    return [
        # Stable large caps. A also carries a non-common (code 31) security
        # that must never contribute to its capitalization.
        SecSpec(10001, A, start, 1000, [(start, 200.0)]),
        SecSpec(10014, A, start, 5000, [(start, 20.0)], hshrcd=31),
        SecSpec(10002, B, start, 1000, [(start, 100.0)]),
        # Second class of B, issued inside the Q3-2010 window: member
        # companies never gain quarterly additions.
        SecSpec(10012, B, date(2010, 7, 20), 100, [(date(2010, 7, 20), 95.0)]),
        # C migrates T2 -> T1 (cap step in Feb 2010) and splits 2:1 later.
        SecSpec(10003, C, start, 250,
                [(start, 100.0), (date(2010, 2, 1), 260.0)],
                split=(date(2010, 9, 1), 2.0)),
        # D grows from 5M (ineligible) to a 70M annual addition; its price
        # path around the 2010 annual rank day gives nonzero impacts.
        SecSpec(10004, D, start, 100,
                [(start, 50.0), (date(2010, 3, 1), 700.0),
                 (date(2010, 6, 16), 720.0), (date(2010, 7, 21), 710.0)]),
        # Quarterly IPO additions of the 2009 cycle.
        SecSpec(10005, E, date(2009, 8, 3), 100, [(date(2009, 8, 3), 600.0)]),
        SecSpec(10006, K, date(2009, 8, 5), 100, [(date(2009, 8, 5), 580.0)],
                end=date(2010, 4, 30)),  # delists before the 2010 annual
        SecSpec(10007, F, date(2009, 10, 5), 100,
                [(date(2009, 10, 5), 550.0), (date(2010, 6, 16), 570.0),
                 (date(2010, 7, 21), 540.0)]),
        SecSpec(10008, G, date(2010, 1, 5), 100,
                [(date(2010, 1, 5), 520.0), (date(2010, 6, 16), 530.0),
                 (date(2010, 7, 21), 525.0)]),
        # Q3-2010 IPO addition.
        SecSpec(10009, L, date(2010, 7, 15), 100, [(date(2010, 7, 15), 650.0)]),
        # IPO too old for any window inside the timeline.
        SecSpec(10013, N, date(2011, 4, 11), 1000, [(date(2011, 4, 11), 80.0)]),
        # Multi-class company, stable, near the bottom of the ranking.
        SecSpec(10010, M, start, 500, [(start, 40.0)]),
        SecSpec(10011, M, start, 400, [(start, 30.0)]),
        # Never eligible: foreign, sub-$1 (with midpoint convention), $1 exact.
        SecSpec(10015, U, start, 1000, [(start, 90.0)], domicile=False),
        SecSpec(10016, P, start, 100000, [(start, 0.80)], midpoint=True),
        SecSpec(10017, P2, start, 40000, [(start, 1.00)]),
    ]


def assert_timeline_matches_oracle(timeline, events):
    """Event-by-event equality of the engine timeline and the oracle replay."""
    assert len(timeline.snapshots) == len(events)
    for snap, event in zip(timeline.snapshots, events):
        where = f"{snap.label}"
        assert (snap.origin, snap.cycle_year) == (event.origin, event.cycle_year), where
        assert snap.rank_day == event.rank_day, where
        assert (snap.effective_start, snap.effective_end) == (event.start, event.end), where
        assert list(snap.members) == event.order, where
        assert list(snap.added_permcos) == event.added, where
        assert snap.delistings == event.delistings, where
        for pc, member in snap.members.items():
            assert member.tiers == event.tiers[pc], (where, pc)
            assert list(member.permnos) == event.constituents[pc], (where, pc)
            assert member.cap_at_rank == pytest.approx(
                event.caps[pc], rel=1e-12, abs=1e-12
            ), (where, pc)
            assert set(member.weights) == set(event.weights[pc]), (where, pc)
            for tier, weight in member.weights.items():
                assert weight == pytest.approx(
                    event.weights[pc][tier], abs=1e-12
                ), (where, pc, tier)


@pytest.fixture(scope="session")
def scripted():
    start = date(2009, 1, 2)
    cal = build_trading_calendar(date(2008, 1, 1), date(2011, 12, 31))
    sessions = cal.sessions(start, date(2011, 7, 29))
    bars, meta = build_universe(scripted_specs(start), sessions)
    params = IndexParams(n_tier1=2, n_tier3=6, n_tier_e=8)
    timeline = membership_timeline((2009, 2010), bars, meta, params, cal)
    return {
        "bars": bars,
        "meta": meta,
        "cal": cal,
        "params": params,
        "timeline": timeline,
        "sessions": sessions,
    }
