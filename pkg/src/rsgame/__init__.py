"""Risk-sensitive nonzero-sum stochastic differential games on finite control grids."""

__version__ = "0.1.0"
