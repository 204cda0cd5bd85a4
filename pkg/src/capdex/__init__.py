"""capdex: deterministic cap-weighted index reconstitution and event-impact analysis.

The package is organised around a batch pipeline:

    market_data  -> trading_calendar -> reconstitution -> index_series
                                                       -> impact -> stats

`synth` generates CRSP-shaped synthetic universes and carries independent
brute-force oracles used to cross-check the engine. `cli` wires everything
into a config-driven command-line frontend.
"""

__version__ = "0.1.0"

from .errors import CapdexError, ConfigError, DataError
from .impact import annual_groups, annual_impact_table, impact_sample, quarterly_groups
from .index_series import (
    cross_correlation_report,
    distribution_report,
    index_daily_returns,
    t3m_gross_returns,
)
from .market_data import (
    adjusted_price,
    load_daily_bars,
    load_security_meta,
    validate_universe,
    write_daily_bars,
    write_security_meta,
)
from .reconstitution import IndexParams, membership_timeline
from .stats import bh_adjust, bootstrap_test, fcr_adjusted_cis, percentile_ci, welch_t
from .synth import UniverseConfig, generate_universe
from .trading_calendar import (
    annual_rank_day,
    annual_rebalance_day,
    build_trading_calendar,
    quarterly_schedule,
    rebalance_calendar,
)

__all__ = [
    "CapdexError",
    "ConfigError",
    "DataError",
    "IndexParams",
    "UniverseConfig",
    "__version__",
    "adjusted_price",
    "annual_groups",
    "annual_impact_table",
    "annual_rank_day",
    "annual_rebalance_day",
    "bh_adjust",
    "bootstrap_test",
    "build_trading_calendar",
    "cross_correlation_report",
    "distribution_report",
    "fcr_adjusted_cis",
    "generate_universe",
    "impact_sample",
    "index_daily_returns",
    "load_daily_bars",
    "load_security_meta",
    "membership_timeline",
    "percentile_ci",
    "quarterly_groups",
    "quarterly_schedule",
    "rebalance_calendar",
    "t3m_gross_returns",
    "validate_universe",
    "welch_t",
    "write_daily_bars",
    "write_security_meta",
]
