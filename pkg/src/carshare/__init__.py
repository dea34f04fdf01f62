"""Analytics toolkit for free-floating car sharing availability data.

Turns availability snapshots into trips, per-cell demand series, demand
forecasts, usage-pattern clusters, spatial-autocorrelation tests,
demand-vs-indicator regressions and maintenance-facility rankings.
"""

__version__ = "0.1.0"
