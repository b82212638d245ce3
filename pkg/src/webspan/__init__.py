"""Structure-aware span extraction from web pages."""

__version__ = "0.1.0"
