"""Locatability-guided geo-localization rewards, curation and toy GRPO training."""

__version__ = "0.1.0"
