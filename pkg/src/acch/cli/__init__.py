"""Configuration, experiment drivers, and file output."""

from .config import RunConfig, load_config
from .drivers import SimulationResult, simulate

__all__ = ["RunConfig", "load_config", "SimulationResult", "simulate"]
