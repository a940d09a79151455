"""Experiment runner: catalog, per-seed execution, CSV and manifest output."""
from .cli import main
from .experiments import EXPERIMENTS, UsageError, catalog
from .runner import execute

__all__ = ["main", "EXPERIMENTS", "UsageError", "catalog", "execute"]
