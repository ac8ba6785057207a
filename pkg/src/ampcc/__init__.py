"""ampcc: compressed coding with AMP/GAMP decoding, state evolution,
area-theorem rate analysis and analog spatial coupling."""

__version__ = "0.1.0"
