"""Data-driven p-y curves for laterally loaded monopiles in sand."""

from __future__ import annotations

__version__ = "0.1.0"
