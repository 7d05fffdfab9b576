"""Plug-and-play image restoration with learned dilated CNN denoisers."""

__version__ = "0.1.0"
