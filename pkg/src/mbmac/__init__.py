"""Simulator and analysis toolkit for multi-band multi-radio MAC scheduling."""

__version__ = "0.1.0"
