# src/spad_link_module/__init__.py
"""
SPAD Link Module
================

Models, simulation and data reduction for gated InGaAs/InP single-photon
avalanche diodes used as receivers in fiber QKD links.

**Version:** {version}

This module provides parametric detector models (afterpulsing, dark counts,
timing jitter), the analytic link budget with its QBER decomposition, a
gate-by-gate Monte Carlo simulator, characterization data reduction and model
calibration.

Attributes:
    __version__ (str): The version of the module.
"""

import os
from typing import Any

from .base import (
    ConfigurationError,
    FitFailureError,
    InfeasibleTargetsError,
    InvalidArgumentError,
    InvalidDataError,
    NoPeakError,
    ProfileNotFoundError,
    SpadLinkError,
    UnboundedDistanceError,
    UnreachableTargetError,
    ZeroSignalError,
)
from .config import DEFAULT_SETTINGS, resolve_settings
from .detector_model import DetectorProfile
from .profiles import ProfileRegistry, default_registry


def _get_version() -> str:
    """
    Return the package version.

    First tries importlib.metadata (works for installed packages),
    then falls back to reading pyproject.toml (for development).

    Returns:
        str: The version of the module.
    """
    try:
        from importlib.metadata import version

        return version("spad-link-module")
    except Exception:
        pass

    import re

    # __init__.py -> spad_link_module -> src -> project_root
    pyproject_path = os.path.join(
        os.path.dirname(os.path.dirname(os.path.dirname(__file__))),
        "pyproject.toml",
    )
    try:
        with open(pyproject_path, encoding="utf-8") as f:
            match = re.search(
                r'^version\s*=\s*["\']([^"\']+)["\']', f.read(), re.MULTILINE
            )
            if match:
                return match.group(1)
    except FileNotFoundError:
        pass

    return "0.0.0"


__version__ = _get_version()
"""The version of the module, recorded in run manifests."""

__doc__ = __doc__.format(version=__version__)


class SpadLinkToolkit:
    """
    Main entry point of the toolkit.
    Holds the detector profile registry and the shared settings, and exposes
    one API object per domain.
    """

    def __init__(
        self,
        registry: ProfileRegistry | None = None,
        profile_dir: str | os.PathLike[str] | None = None,
        **settings: Any,
    ):
        """
        Initialize the toolkit.

        Args:
            registry: Profile registry; built-ins plus ``profile_dir`` (or
                ``$SPAD_LINK_PROFILE_DIR``) when not given.
            profile_dir: Directory of extra ``*.profile`` files.
            **settings: Overrides of DEFAULT_SETTINGS, e.g. ``f_rep=2e6``.

        Raises:
            ConfigurationError: For unknown settings or a bad profile
                directory.
        """
        self.settings = resolve_settings(overrides=settings)
        """Resolved settings; see config.DEFAULT_SETTINGS."""

        if registry is None:
            registry = default_registry(
                profile_dir or self.settings.get("profile_dir")
            )
        self.registry = registry
        """Profiles available by name."""

        from . import calibration, characterize, detector_model, gated_sim
        from . import link_model

        self.detectors = detector_model.DetectorsAPI(self)
        self.links = link_model.LinksAPI(self)
        self.simulator = gated_sim.SimulatorAPI(self)
        self.characterize = characterize.CharacterizeAPI(self)
        self.calibration = calibration.CalibrationAPI(self)

    @property
    def profile(self) -> DetectorProfile:
        """The default profile named by the ``profile`` setting."""
        return self.detectors.get_profile(self.settings["profile"])


__all__ = [
    "__version__",
    "DEFAULT_SETTINGS",
    "SpadLinkToolkit",
    "ConfigurationError",
    "FitFailureError",
    "InfeasibleTargetsError",
    "InvalidArgumentError",
    "InvalidDataError",
    "NoPeakError",
    "ProfileNotFoundError",
    "SpadLinkError",
    "UnboundedDistanceError",
    "UnreachableTargetError",
    "ZeroSignalError",
]
