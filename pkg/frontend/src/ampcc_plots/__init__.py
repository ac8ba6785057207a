"""ampcc-plots: deterministic figure rendering for ampcc bench artifacts."""

__version__ = "0.1.0"
