"""Config-driven batch frontend for the full pipeline.

Usage:
    capdex <subcommand> --config run.cfg [overrides]

Subcommands: ingest, validate, calendar, reconstitute, returns, compare,
impact, test, synth. The config file is simple ``key = value`` lines with
``#`` comments; command-line flags override config values. Exit codes:
0 ok, 1 user/config error, 2 data-contract error.

Every artifact is deterministic: identical config and inputs produce
byte-identical files (no timestamps anywhere). All reported numbers come
straight from module operations; the CLI only formats.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from . import impact as impact_mod
from . import index_series, market_data, reconstitution, stats, synth
from .errors import CapdexError, ConfigError, DataError
from .trading_calendar import build_trading_calendar, rebalance_calendar

logger = logging.getLogger(__name__)

_CONFIG_KEYS = {
    "bars": str,
    "meta": str,
    "holidays": str,
    "reference": str,
    "out_dir": str,
    "year_start": int,
    "year_end": int,
    "n_tier1": int,
    "n_tier3": int,
    "n_tier_e": int,
    "min_cap": float,
    "min_price": float,
    "t3m_window": int,
    "max_lag": int,
    "boot_n": int,
    "seed": int,
    "alpha": float,
    "n_companies": int,
    "multi_class_fraction": float,
    "ipo_rate": float,
    "delist_rate": float,
    "drift": float,
    "volatility": float,
}


@dataclass
class RunConfig:
    """Resolved run configuration; see README for the key schema."""

    bars: str | None = None
    meta: str | None = None
    holidays: str | None = None
    reference: str | None = None
    out_dir: str = "out"
    year_start: int | None = None
    year_end: int | None = None
    n_tier1: int = 1000
    n_tier3: int = 3000
    n_tier_e: int = 4000
    min_cap: float = 30_000_000.0
    min_price: float = 1.0
    t3m_window: int = index_series.DEFAULT_T3M_WINDOW
    max_lag: int = index_series.DEFAULT_MAX_LAG
    boot_n: int = stats.DEFAULT_BOOTSTRAP_REPS
    seed: int = 0
    alpha: float = 0.05
    n_companies: int = 200
    multi_class_fraction: float = 0.1
    ipo_rate: float = 0.5
    delist_rate: float = 0.08
    drift: float = 0.0002
    volatility: float = 0.02

    def index_params(self) -> reconstitution.IndexParams:
        return reconstitution.IndexParams(
            n_tier1=self.n_tier1,
            n_tier3=self.n_tier3,
            n_tier_e=self.n_tier_e,
            min_cap=self.min_cap,
            min_price=self.min_price,
        )

    def years(self) -> tuple[int, int]:
        if self.year_start is None or self.year_end is None:
            raise ConfigError("year_start and year_end are required for this command")
        return self.year_start, self.year_end


def parse_config(path: str | Path) -> RunConfig:
    """Parse a key = value config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
        key, _, raw = text.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if raw == "":
            continue
        try:
            values[key] = _CONFIG_KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from exc
    return RunConfig(**values)


class _RunLog:
    """Deterministic decision log written for every subcommand."""

    def __init__(self, command: str):
        self.lines = [f"command: {command}"]

    def note(self, message: str) -> None:
        self.lines.append(message)

    def write(self, out_dir: Path) -> None:
        (out_dir / "run.log").write_text("\n".join(self.lines) + "\n")


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_inputs(cfg: RunConfig):
    if not cfg.bars or not cfg.meta:
        raise ConfigError("config must set 'bars' and 'meta' paths")
    bars = market_data.load_daily_bars(cfg.bars)
    meta = market_data.load_security_meta(cfg.meta)
    return bars, meta


def _calendar_for(cfg: RunConfig, pad_years: int = 1):
    y0, y1 = cfg.years()
    return build_trading_calendar(
        date(y0 - 1, 1, 1), date(y1 + pad_years, 12, 31), cfg.holidays
    )


def _build_timeline(cfg: RunConfig):
    bars, meta = _load_inputs(cfg)
    cal = _calendar_for(cfg)
    timeline = reconstitution.membership_timeline(
        cfg.years(), bars, meta, cfg.index_params(), cal
    )
    return bars, meta, cal, timeline


def _cmd_ingest(cfg: RunConfig, args, out_dir: Path, log: _RunLog) -> int:
    bars, meta = _load_inputs(cfg)
    payload = {
        "bars": bars.report.to_dict(),
        "meta": meta.report.to_dict(),
        "n_bars": len(bars),
        "n_securities": len(meta),
        "n_companies": len(meta.permcos),
    }
    _write_json(out_dir / "ingest_report.json", payload)
    log.note(f"bars loaded: {len(bars)} rows, rejected {bars.report.rows_rejected}")
    log.note(f"meta loaded: {len(meta)} rows, rejected {meta.report.rows_rejected}")
    print(f"loaded {len(bars)} bars ({bars.report.rows_rejected} rejected), "
          f"{len(meta)} securities")
    return 0


def _cmd_validate(cfg: RunConfig, args, out_dir: Path, log: _RunLog) -> int:
    bars, meta = _load_inputs(cfg)
    report = market_data.validate_universe(bars, meta)
    _write_json(out_dir / "validation_report.json", report.to_dict())
    log.note(f"orphans: {len(report.orphan_permnos)}, "
             f"begdat violations: {len(report.begdat_violations)}, "
             f"gaps: {len(report.gaps)}")
    print("validation clean" if report.is_clean else "validation findings written")
    return 0


def _cmd_calendar(cfg: RunConfig, args, out_dir: Path, log: _RunLog) -> int:
    year = args.year
    if year is None:
        raise ConfigError("calendar requires --year")
    start = date(year - 1, 1, 1)
    end = date(year + 2, 12, 31)
    cal = build_trading_calendar(start, end, cfg.holidays)
    cyc = rebalance_calendar(year, cal)
    payload = {
        "cycle_year": cyc.cycle_year,
        "annual_rank": cyc.annual_rank.isoformat(),
        "annual_rebalance": cyc.annual_rebalance.isoformat(),
        "quarters": [
            {"label": q.label, "rank": q.rank.isoformat(),
             "rebalance": q.rebalance.isoformat()}
            for q in cyc.quarters
        ],
    }
    _write_json(out_dir / f"calendar_{year}.json", payload)
    print(f"cycle {year}: annual rank {cyc.annual_rank}, "
          f"rebalance {cyc.annual_rebalance}")
    for q in cyc.quarters:
        print(f"  {q.label}: rank {q.rank}, rebalance {q.rebalance}")
    log.note(f"calendar {year} resolved")
    return 0


def _cmd_reconstitute(cfg: RunConfig, args, out_dir: Path, log: _RunLog) -> int:
    bars, meta, cal, timeline = _build_timeline(cfg)
    reconstitution.export_snapshots_csv(timeline, out_dir / "snapshots.csv")
    reconstitution.export_change_log_csv(timeline, out_dir / "change_log.csv")
    summary = {
        "snapshots": [
            {
                "label": snap.label,
                "rank_day": snap.rank_day.isoformat(),
                "effective_start": snap.effective_start.isoformat(),
                "effective_end": snap.effective_end.isoformat(),
                "members": len(snap.members),
                "delistings": len(snap.delistings),
                "added": list(snap.added_permcos),
            }
            for snap in timeline.snapshots
        ]
    }
    _write_json(out_dir / "timeline_summary.json", summary)
    for snap in timeline.snapshots:
        if snap.skipped_permnos:
            log.note(f"{snap.label}: skipped unpriced permnos {list(snap.skipped_permnos)}")
        for pc, d in sorted(snap.delistings.items()):
            log.note(f"{snap.label}: permco {pc} delisted as of {d}")
    print(f"{len(timeline.snapshots)} snapshots, "
          f"{len(timeline.change_log)} change-log entries")
    return 0


def _cmd_returns(cfg: RunConfig, args, out_dir: Path, log: _RunLog) -> int:
    bars, meta, cal, timeline = _build_timeline(cfg)
    tiers = [args.tier] if args.tier else list(reconstitution.ALL_TIERS)
    for tier in tiers:
        series = index_series.index_daily_returns(timeline, bars, tier)
        index_series.write_series_csv(series, out_dir / f"returns_{tier}.csv")
        gross = index_series.t3m_gross_returns(series, cfg.t3m_window)
        index_series.write_series_csv(gross, out_dir / f"t3m_{tier}.csv")
        log.note(f"{tier}: {len(series)} return days, {len(gross)} trailing windows")
    print(f"wrote daily returns and trailing gross series for {', '.join(tiers)}")
    return 0


def _cmd_compare(cfg: RunConfig, args, out_dir: Path, log: _RunLog) -> int:
    if not cfg.reference:
        raise ConfigError("compare requires a 'reference' series path in the config")
    reference = index_series.read_series_csv(cfg.reference)
    tier = args.tier or "T3"
    bars, meta, cal, timeline = _build_timeline(cfg)
    replica = index_series.index_daily_returns(timeline, bars, tier)
    corr = index_series.cross_correlation_report(replica, reference, cfg.max_lag)
    dist = index_series.distribution_report(replica, reference)
    _write_json(out_dir / "correlation_report.json", corr.to_dict())
    _write_json(out_dir / "distribution_report.json", dist.to_dict())
    log.note(f"compared {tier} against {cfg.reference} on {corr.n} common days")
    print(f"lag-0 correlation {corr.lag0_corr:.4f} "
          f"(n={corr.n}, limit ±{corr.sig_limit:.4f})")
    return 0


def _interior_years(cfg: RunConfig) -> list[int]:
    y0, y1 = cfg.years()
    return list(range(y0 + 1, y1 + 1))


def _fmt_pct(value: float, se: float) -> str:
    if value != value:  # NaN
        return "-"
    return f"{value:.1f} ({se:.1f})" if se == se else f"{value:.1f} (-)"


def _cmd_impact(cfg: RunConfig, args, out_dir: Path, log: _RunLog) -> int:
    bars, meta, cal, timeline = _build_timeline(cfg)
    years = [args.year] if args.year else _interior_years(cfg)
    all_rows: list[impact_mod.ImpactRow] = []
    groups: list[impact_mod.GroupSpec] = []
    for year in years:
        rows, samples, dropped = impact_mod.annual_impact_table(timeline, bars, year)
        all_rows.extend(rows)
        for d in dropped:
            log.note(f"{year}: dropped {d.group_tag} sample permno {d.permno}: {d.reason}")
        retained, new = impact_mod.annual_groups(timeline, year)
        groups.extend([retained, new])
    impact_mod.export_impact_csv(all_rows, out_dir / "impact_table.csv")
    impact_mod.export_groups_csv(groups, out_dir / "groups.csv")
    header = f"{'year':<6}{'group':<11}{'R_temp':>14}{'R_perm':>14}{'N':>6}"
    print(header)
    for r in all_rows:
        print(f"{r.year:<6}{r.group:<11}{_fmt_pct(r.mean_temp, r.se_temp):>14}"
              f"{_fmt_pct(r.mean_perm, r.se_perm):>14}{r.n:>6}")
    return 0


def _family_values(samples: list[impact_mod.ImpactSample], family: str) -> list[float]:
    if family == "permanent":
        return [s.r_perm for s in samples]
    return [s.r_temp for s in samples]


def _run_group_test(bars, cal, group_z, group_y, family, n_reps, seed, log):
    """Bootstrap test of group_z against group_y; None when a side is too small."""
    z_samples, z_dropped = impact_mod.collect_samples(bars, cal, group_z)
    y_samples, y_dropped = impact_mod.collect_samples(bars, cal, group_y)
    for d in z_dropped + y_dropped:
        log.note(f"{d.group_tag} sample permno {d.permno} dropped: {d.reason}")
    z = _family_values(z_samples, family)
    y = _family_values(y_samples, family)
    if len(z) < 2 or len(y) < 2:
        log.note(f"{group_z.event}: skipped (group sizes {len(z)}, {len(y)})")
        return None
    result = stats.bootstrap_test(z, y, n_reps=n_reps, seed=seed)
    return result, len(z), len(y)


def _cmd_test(cfg: RunConfig, args, out_dir: Path, log: _RunLog) -> int:
    family = args.family
    scope = args.scope
    bars, meta, cal, timeline = _build_timeline(cfg)

    def finalize(rows, results):
        raw_p = [r.p_two_tailed for r in results]
        adj = stats.bh_adjust(raw_p, cfg.alpha)
        cis = stats.fcr_adjusted_cis([r.boot_ts for r in results], raw_p, cfg.alpha)
        for row, result, p_bh, ci in zip(rows, results, adj.adjusted_p, cis):
            row.update(
                {
                    "p_bh": p_bh,
                    "ci_lo": ci.lo,
                    "ci_hi": ci.hi,
                    "ci_coverage": ci.coverage,
                    "ci_adjusted": ci.adjusted,
                }
            )
        return {"alpha": cfg.alpha, "k": adj.k, "alpha_prime": adj.alpha_prime}

    if scope == "annual":
        rows, results = [], []
        for year in _interior_years(cfg):
            retained, new = impact_mod.annual_groups(timeline, year)
            outcome = _run_group_test(
                bars, cal, retained, new, family, cfg.boot_n,
                cfg.seed + year, log,
            )
            if outcome is None:
                continue
            result, n_z, n_y = outcome
            rows.append(
                {
                    "year": year,
                    "family": family,
                    "t_obs": result.t_obs,
                    "p_raw": result.p_two_tailed,
                    "mean_t": result.mean_t,
                    "N": result.n_reps,
                    "seed": result.seed,
                    "n_z": n_z,
                    "n_y": n_y,
                }
            )
            results.append(result)
        meta_info = finalize(rows, results)
        payload = {"scope": "annual", "family": family, "tests": rows, **meta_info}
        _write_json(out_dir / f"tests_annual_{family}.json", payload)
        print(f"{'Years':<8}{'t_obs':>10}{'p':>10}")
        for row in rows:
            print(f"{row['year']:<8}{row['t_obs']:>10.3f}{row['p_bh']:>10.3f}")
    else:
        payload = {"scope": "quarterly", "family": family, "labels": {}}
        for label in ("Q3", "Q4", "Q1"):
            rows, results = [], []
            for year in _interior_years(cfg):
                try:
                    additions, incumbents = impact_mod.quarterly_groups(
                        timeline, year, label
                    )
                except ConfigError:
                    continue
                outcome = _run_group_test(
                    bars, cal, additions, incumbents, family, cfg.boot_n,
                    cfg.seed + 100 * year + {"Q3": 1, "Q4": 2, "Q1": 3}[label], log,
                )
                if outcome is None:
                    continue
                result, n_z, n_y = outcome
                rows.append(
                    {
                        "year": year,
                        "label": label,
                        "family": family,
                        "t_obs": result.t_obs,
                        "p_raw": result.p_two_tailed,
                        "mean_t": result.mean_t,
                        "N": result.n_reps,
                        "seed": result.seed,
                        "n_z": n_z,
                        "n_y": n_y,
                    }
                )
                results.append(result)
            meta_info = finalize(rows, results)
            payload["labels"][label] = {"tests": rows, **meta_info}
            print(f"{label}: {len(rows)} tests, k={meta_info['k']}")
        _write_json(out_dir / f"tests_quarterly_{family}.json", payload)
    return 0


def _cmd_synth(cfg: RunConfig, args, out_dir: Path, log: _RunLog) -> int:
    config = synth.UniverseConfig(
        n_companies=cfg.n_companies,
        years=cfg.years(),
        multi_class_fraction=cfg.multi_class_fraction,
        ipo_rate=cfg.ipo_rate,
        delist_rate=cfg.delist_rate,
        drift=cfg.drift,
        volatility=cfg.volatility,
        seed=cfg.seed,
    )
    bars, meta, script = synth.generate_universe(config)
    market_data.write_daily_bars(bars, out_dir / "bars.csv")
    market_data.write_security_meta(meta, out_dir / "meta.csv")
    synth.write_script_json(script, out_dir / "events.json")
    log.note(f"generated {len(bars)} bars for {len(meta.permcos)} companies "
             f"(seed {cfg.seed}, attempt {script['attempt']})")
    print(f"wrote bars.csv ({len(bars)} rows), meta.csv ({len(meta)} securities), "
          "events.json")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "validate": _cmd_validate,
    "calendar": _cmd_calendar,
    "reconstitute": _cmd_reconstitute,
    "returns": _cmd_returns,
    "compare": _cmd_compare,
    "impact": _cmd_impact,
    "test": _cmd_test,
    "synth": _cmd_synth,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capdex",
        description="Cap-weighted index reconstitution and impact-analysis pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--alpha", type=float, help="override config alpha")
        p.add_argument("--boot-n", type=int, dest="boot_n",
                       help="override bootstrap repetitions")
        if name == "calendar":
            p.add_argument("--year", type=int, help="cycle year to resolve")
        if name == "impact":
            p.add_argument("--year", type=int, help="restrict to one cycle year")
        if name in ("returns", "compare"):
            p.add_argument("--tier", choices=list(reconstitution.ALL_TIERS))
        if name == "test":
            p.add_argument("--family", choices=["permanent", "temporary"],
                           required=True)
            p.add_argument("--scope", choices=["annual", "quarterly"],
                           default="annual")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = parse_config(args.config)
        for key in ("seed", "alpha", "boot_n"):
            value = getattr(args, key, None)
            if value is not None:
                setattr(cfg, key, value)
        if args.out:
            cfg.out_dir = args.out
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log = _RunLog(args.command)
        code = _COMMANDS[args.command](cfg, args, out_dir, log)
        log.write(out_dir)
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except CapdexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
