"""Robust semantic communication for text: transceiver, channel, baseline and metrics."""

__version__ = "0.1.0"
