"""Symbolic synthesis for two-player games over linear arithmetic with LTL objectives."""
from __future__ import annotations

__version__ = "0.1.0"
