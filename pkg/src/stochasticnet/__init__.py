"""Deep networks formed as random-graph realizations: sparse, stochastic,
permanent connectivity fixed before training."""

__version__ = "0.1.0"
