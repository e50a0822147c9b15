"""geomatch: data-driven landing-location decision helper.

Per-location boosted-tree earnings models, a multinomial-logit preference
proxy, preference-constrained top-k recommendations, a seeded Monte Carlo
compliance backtest, and an empirical selection-bias audit, all runnable on
a synthetic administrative population with known potential outcomes.
"""

__version__ = "0.1.0"
