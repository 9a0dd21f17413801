"""Turn single-arm robot + human collaborative demonstrations into synthetic
bimanual-robot demonstration datasets."""

__version__ = "0.1.0"
