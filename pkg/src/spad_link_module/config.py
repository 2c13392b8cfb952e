"""
This module provides the toolkit settings: built-in defaults, the key-value
config file and the environment.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment::

    profile = epitaxx-60
    frep = 2e6
    skip = 14

Settings resolve as built-in defaults < config file < explicit values.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any

from dotenv import dotenv_values, find_dotenv, load_dotenv

from .base import ConfigurationError

__all__ = [
    "CONFIG_ENV",
    "DEFAULT_SETTINGS",
    "FILE_KEYS",
    "load_environment",
    "load_config",
    "resolve_settings",
]

logger = logging.getLogger(__name__)

CONFIG_ENV = "SPAD_LINK_CONFIG"
"""Environment variable naming a default config file."""

DEFAULT_SETTINGS: dict[str, Any] = {
    "profile": "epitaxx-60",
    "f_rep": 1e6,
    "n_skip": 0,
    "mu": 0.1,
    "attenuation": 0.25,
    "receiver_transmission": 0.5,
    "budget": 0.01,
    "sig_figs": None,
    "jobs": 1,
    "seed": 0,
    "profile_dir": None,
}


def _count(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError(f"expected a non-negative integer, got {text}")
    return value


def _optional_int(text: str) -> int | None:
    return int(text) if text.strip() else None


# config-file key -> (settings key, parser)
FILE_KEYS: dict[str, tuple[str, Callable[[str], Any]]] = {
    "profile": ("profile", str),
    "frep": ("f_rep", float),
    "skip": ("n_skip", _count),
    "mu": ("mu", float),
    "attenuation": ("attenuation", float),
    "receiver_transmission": ("receiver_transmission", float),
    "budget": ("budget", float),
    "sig_figs": ("sig_figs", _optional_int),
    "jobs": ("jobs", _count),
    "seed": ("seed", _count),
    "profile_dir": ("profile_dir", str),
}


def load_environment() -> bool:
    """Load a ``.env`` file from the working directory, if there is one."""
    path = find_dotenv(usecwd=True)
    return bool(path) and load_dotenv(path, override=False)


def load_config(path: str | os.PathLike[str] | None = None) -> dict[str, Any]:
    """
    Read a config file into settings keys.

    Args:
        path: The file; when None, ``$SPAD_LINK_CONFIG`` is used if set.

    Returns:
        The settings the file defines; empty when there is no file.

    Raises:
        ConfigurationError: If the file is missing or a value is malformed.
    """
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    if not Path(path).is_file():
        raise ConfigurationError(f"Config file '{path}' does not exist")

    settings: dict[str, Any] = {}
    for key, raw in dotenv_values(path, interpolate=False).items():
        if key not in FILE_KEYS:
            logger.warning(f"{path}: ignoring unknown key '{key}'")
            continue
        name, parse = FILE_KEYS[key]
        if raw is None:
            raise ConfigurationError(f"{path}: '{key}' has no value")
        try:
            settings[name] = parse(raw)
        except ValueError as e:
            raise ConfigurationError(f"{path}: bad value for '{key}': {e}") from e
    logger.debug(f"Loaded {len(settings)} settings from {path}")
    return settings


def resolve_settings(
    file_settings: Mapping[str, Any] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """
    Merge defaults, config-file settings and explicit overrides; None
    overrides are ignored.

    Raises:
        ConfigurationError: For keys that are not settings.
    """
    settings = dict(DEFAULT_SETTINGS)
    for layer in (file_settings or {}, overrides or {}):
        unknown = sorted(set(layer) - set(DEFAULT_SETTINGS))
        if unknown:
            raise ConfigurationError(f"Unknown settings: {', '.join(unknown)}")
        settings.update({k: v for k, v in layer.items() if v is not None})
    return settings
