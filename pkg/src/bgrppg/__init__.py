"""Remote heart-rate estimation from facial and background spatio-temporal maps."""

__version__ = "0.1.0"
