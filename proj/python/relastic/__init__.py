"""Density reconstruction in elastic media from resonant inclusions."""

import json as _json

from ._relastic import (
    ConfigError,
    Medium,
    canonical_config,
    kelvin,
    kupradze,
    spectrum,
    wavenumbers,
)
from . import _relastic


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def config_hash(config):
    return _relastic.config_hash(_text(config))


def run(config):
    """Run simulate + invert for a config given as a dict or JSON text."""
    return _relastic.run(_text(config))


__all__ = [
    "ConfigError",
    "Medium",
    "canonical_config",
    "config_hash",
    "kelvin",
    "kupradze",
    "run",
    "spectrum",
    "wavenumbers",
]
