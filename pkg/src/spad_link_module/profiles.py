"""
This module provides the detector profile registry and its plain-text format.

A profile document holds one profile per block; blocks are separated by blank
lines and every line is a ``key = value`` pair (``#`` starts a comment)::

    name = epitaxx-60
    temperature_c = -60
    efficiency = 0.1
    dark_p10 = 2.8e-05
    dark_slope = 30
    gate_width_ns = 2.4
    afterpulse = 0.012:0.1, 0.0058:1.6, 0.0004:18
    afterpulse_horizon_us = 100
    jitter = 0.05:500, 0.1:450, 0.25:300
    notes = "measured dark anchor"

Afterpulse terms are ``amplitude:lifetime_us`` pairs and jitter anchors are
``efficiency:fwhm_ps`` pairs.
"""

from __future__ import annotations

import hashlib
import io
import logging
import os
import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import replace
from pathlib import Path

from dotenv import dotenv_values

from .base import ConfigurationError, ProfileNotFoundError, SpadLinkError
from .detector_model import (
    DEFAULT_DARK_SLOPE,
    DEFAULT_HORIZON,
    AfterpulseModel,
    DarkCountModel,
    DetectorProfile,
    JitterModel,
    builtin_profiles,
)

__all__ = [
    "PROFILE_DIR_ENV",
    "PROFILE_SUFFIX",
    "ProfileRegistry",
    "format_profile",
    "dump_profiles",
    "parse_profiles",
    "load_profile_file",
    "profile_fingerprint",
    "canonical_profile",
    "default_registry",
]

logger = logging.getLogger(__name__)

PROFILE_DIR_ENV = "SPAD_LINK_PROFILE_DIR"
"""Environment variable naming a directory of extra ``*.profile`` files."""

PROFILE_SUFFIX = ".profile"

_REQUIRED_KEYS = ("name", "efficiency", "dark_p10")
_KNOWN_KEYS = {
    "name",
    "temperature_c",
    "efficiency",
    "dark_p10",
    "dark_slope",
    "dark_reference_efficiency",
    "gate_width_ns",
    "afterpulse",
    "afterpulse_horizon_us",
    "jitter",
    "jitter_reference_ps",
    "notes",
}


def _num(value: float) -> str:
    return f"{value:.12g}"


def _pairs(text: str, key: str) -> list[tuple[float, float]]:
    pairs = []
    for item in filter(None, (part.strip() for part in text.split(","))):
        left, sep, right = item.partition(":")
        if not sep:
            raise ConfigurationError(
                f"'{key}' entries must be 'x:y' pairs, got '{item}'"
            )
        try:
            pairs.append((float(left), float(right)))
        except ValueError as e:
            raise ConfigurationError(f"Bad number in '{key}': {e}") from e
    return pairs


def format_profile(profile: DetectorProfile) -> str:
    """
    Render one profile as a text block.

    Args:
        profile: The profile to render.

    Returns:
        The block, newline terminated, without a trailing blank line.
    """
    lines = [f"name = {profile.name}"]
    if profile.temperature is not None:
        lines.append(f"temperature_c = {_num(profile.temperature)}")
    lines += [
        f"efficiency = {_num(profile.efficiency)}",
        f"dark_p10 = {_num(profile.dark.p10)}",
        f"dark_slope = {_num(profile.dark.slope)}",
    ]
    if profile.dark.reference_efficiency != 0.10:
        lines.append(
            "dark_reference_efficiency = "
            f"{_num(profile.dark.reference_efficiency)}"
        )
    lines.append(f"gate_width_ns = {_num(profile.gate_width * 1e9)}")
    terms = ", ".join(
        f"{_num(a)}:{_num(tau * 1e6)}"
        for a, tau in profile.afterpulse.to_pairs()
    )
    lines.append(f"afterpulse = {terms}")
    lines.append(
        f"afterpulse_horizon_us = {_num(profile.afterpulse.horizon * 1e6)}"
    )
    anchors = ", ".join(
        f"{_num(e)}:{_num(w * 1e12)}" for e, w in profile.jitter.anchors
    )
    lines.append(f"jitter = {anchors}")
    lines.append(
        "jitter_reference_ps = "
        f"{_num(profile.jitter.fwhm_at_reference * 1e12)}"
    )
    if profile.notes:
        notes = profile.notes.replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'notes = "{notes}"')
    return "\n".join(lines) + "\n"


def dump_profiles(profiles: Iterable[DetectorProfile]) -> str:
    """Render several profiles as one document."""
    return "\n".join(format_profile(p) for p in profiles)


def _profile_from_values(values: Mapping[str, str | None]) -> DetectorProfile:
    missing = [k for k in _REQUIRED_KEYS if not values.get(k)]
    if missing:
        raise ConfigurationError(
            f"Profile block is missing required keys: {', '.join(missing)}"
        )
    unknown = sorted(set(values) - _KNOWN_KEYS)
    if unknown:
        logger.warning(f"Ignoring unknown profile keys: {unknown}")

    def optional(key: str) -> float | None:
        raw = values.get(key)
        if raw is None or raw == "":
            return None
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigurationError(
                f"'{key}' must be a number, got '{raw}'"
            ) from e

    def number(key: str, default: float) -> float:
        value = optional(key)
        return default if value is None else value

    name = str(values["name"])
    try:
        afterpulse = AfterpulseModel.from_pairs(
            [
                (a, tau_us / 1e6)
                for a, tau_us in _pairs(
                    values.get("afterpulse") or "", "afterpulse"
                )
            ],
            horizon=number("afterpulse_horizon_us", DEFAULT_HORIZON * 1e6)
            / 1e6,
        )
        jitter = JitterModel()
        if values.get("jitter") is not None:
            jitter = replace(
                jitter,
                anchors=tuple(
                    (e, w_ps / 1e12)
                    for e, w_ps in _pairs(values.get("jitter") or "", "jitter")
                ),
            )
        reference_ps = optional("jitter_reference_ps")
        if reference_ps is not None:
            jitter = replace(jitter, fwhm_at_reference=reference_ps / 1e12)
        dark = DarkCountModel(
            p10=number("dark_p10", 0.0),
            slope=number("dark_slope", DEFAULT_DARK_SLOPE),
            reference_efficiency=number("dark_reference_efficiency", 0.10),
        )
        return DetectorProfile(
            name=name,
            efficiency=number("efficiency", 0.0),
            dark=dark,
            temperature=optional("temperature_c"),
            gate_width=number("gate_width_ns", 2.4) / 1e9,
            afterpulse=afterpulse,
            jitter=jitter,
            notes=values.get("notes") or "",
        )
    except ConfigurationError:
        raise
    except SpadLinkError as e:
        raise ConfigurationError(f"Invalid profile '{name}': {e}") from e


def parse_profiles(text: str) -> list[DetectorProfile]:
    """
    Parse a profile document.

    Args:
        text: The document.

    Returns:
        Profiles in document order.

    Raises:
        ConfigurationError: If a block is malformed.
    """
    profiles = []
    for block in re.split(r"\n\s*\n", text):
        if not any(
            line.strip() and not line.strip().startswith("#")
            for line in block.splitlines()
        ):
            continue
        values = dotenv_values(stream=io.StringIO(block), interpolate=False)
        profiles.append(_profile_from_values(values))
    return profiles


def load_profile_file(path: str | os.PathLike[str]) -> list[DetectorProfile]:
    """Read and parse a profile document from disk."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return parse_profiles(text)
    except ConfigurationError as e:
        raise ConfigurationError(f"{path}: {e}") from e


def profile_fingerprint(profile: DetectorProfile) -> str:
    """SHA-256 of the canonical text block; identifies a profile in manifests."""
    return hashlib.sha256(format_profile(profile).encode("utf-8")).hexdigest()


def canonical_profile(profile: DetectorProfile) -> DetectorProfile:
    """
    The profile as read back from its own text block.

    Runs recorded in a manifest use this form, so that rebuilding the profile
    from the manifest gives bit-identical parameters.
    """
    (parsed,) = parse_profiles(format_profile(profile))
    return parsed


class ProfileRegistry(Mapping[str, DetectorProfile]):
    """
    Name-indexed collection of detector profiles.

    Later additions replace earlier profiles of the same name, so directory
    profiles can override built-ins.
    """

    def __init__(self, profiles: Iterable[DetectorProfile] = ()):
        self._profiles: dict[str, DetectorProfile] = {}
        for profile in profiles:
            self.add(profile)

    @classmethod
    def builtin(cls) -> ProfileRegistry:
        return cls(builtin_profiles())

    def add(self, profile: DetectorProfile) -> None:
        if profile.name in self._profiles:
            logger.info(f"Profile '{profile.name}' overridden")
        self._profiles[profile.name] = profile

    def load_directory(self, directory: str | os.PathLike[str]) -> int:
        """
        Add every ``*.profile`` file from a directory.

        Returns:
            The number of profiles loaded.

        Raises:
            ConfigurationError: If the directory does not exist or a file is
                malformed.
        """
        root = Path(directory)
        if not root.is_dir():
            raise ConfigurationError(
                f"Profile directory '{root}' does not exist"
            )
        count = 0
        for path in sorted(root.glob(f"*{PROFILE_SUFFIX}")):
            for profile in load_profile_file(path):
                self.add(profile)
                count += 1
        logger.debug(f"Loaded {count} profiles from {root}")
        return count

    def __getitem__(self, name: str) -> DetectorProfile:
        try:
            return self._profiles[name]
        except KeyError:
            raise ProfileNotFoundError(name, list(self._profiles)) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._profiles)

    def __len__(self) -> int:
        return len(self._profiles)


def default_registry(
    profile_dir: str | os.PathLike[str] | None = None,
) -> ProfileRegistry:
    """
    Built-in profiles plus those found in ``profile_dir`` or, when not given,
    in the directory named by ``$SPAD_LINK_PROFILE_DIR``.
    """
    registry = ProfileRegistry.builtin()
    directory = profile_dir or os.environ.get(PROFILE_DIR_ENV)
    if directory:
        registry.load_directory(directory)
    return registry
