"""Partitioned FSI coupling with quasi-Newton acceleration and ROM-based predictors."""

__version__ = "0.1.0"
