"""Evaluation of feature attributions by pixel removal and imputation."""

__version__ = "0.1.0"
