"""Neural quantum propagators for driven-dissipative dynamics."""

__version__ = "0.1.0"
