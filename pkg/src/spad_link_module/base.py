"""
This module provides the base API class and the exception hierarchy for the
spad_link_module package.
The BaseAPI class serves as the foundation for all toolkit API objects and can
be used to create custom API objects that extend the functionality of the package.
"""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .detector_model import DetectorProfile


class SpadLinkError(Exception):
    """Base exception class for spad_link_module errors."""

    pass


class InvalidArgumentError(SpadLinkError, ValueError):
    """Raised when an argument is outside the domain of an operation."""

    def __init__(
        self,
        message: str,
        parameter: str | None = None,
        value: Any = None,
    ):
        super().__init__(message)
        self.parameter = parameter
        self.value = value


class ConfigurationError(SpadLinkError):
    """Raised when a model, profile or config file is malformed."""

    pass


class ZeroSignalError(SpadLinkError, ArithmeticError):
    """Raised when a ratio over the signal probability has no signal."""

    pass


class UnreachableTargetError(SpadLinkError):
    """Raised when a QBER target cannot be reached at any distance."""

    def __init__(
        self,
        message: str,
        target: float | None = None,
        floor: float | None = None,
    ):
        super().__init__(message)
        self.target = target
        self.floor = floor


class UnboundedDistanceError(SpadLinkError):
    """Raised when QBER never reaches the target because p_dc is zero."""

    pass


class InvalidDataError(SpadLinkError, ValueError):
    """Raised when measurement data cannot be reduced."""

    pass


class NoPeakError(InvalidDataError):
    """Raised when a timing histogram has no discernible peak."""

    pass


class FitFailureError(SpadLinkError):
    """Raised when a fit does not converge; carries the best result so far."""

    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best


class InfeasibleTargetsError(SpadLinkError):
    """Raised when no model satisfies every calibration target."""

    def __init__(
        self,
        message: str,
        violations: list[str] | None = None,
        model: Any = None,
    ):
        super().__init__(message)
        self.violations = violations or []
        self.model = model


class ProfileNotFoundError(SpadLinkError, KeyError):
    """Raised when a detector profile name is not in the registry."""

    def __init__(self, name: str, available: list[str] | None = None):
        self.name = name
        self.available = sorted(available or [])
        super().__init__(
            f"Unknown profile '{name}'. Available: "
            + ", ".join(self.available)
        )

    def __str__(self) -> str:
        # KeyError would otherwise repr() the message
        return str(self.args[0])


def require(
    condition: bool, message: str, parameter: str | None = None, value: Any = None
) -> None:
    """Raise InvalidArgumentError with ``message`` unless ``condition`` holds."""
    if not condition:
        raise InvalidArgumentError(message, parameter=parameter, value=value)


def require_probability(
    value: float,
    parameter: str,
    *,
    open_low: bool = False,
    open_high: bool = False,
) -> None:
    """
    Validate that ``value`` is a finite probability.

    Args:
        value: The number to check.
        parameter: Name used in the error message.
        open_low: Exclude 0 from the allowed range.
        open_high: Exclude 1 from the allowed range.

    Raises:
        InvalidArgumentError: If the value is outside the range.
    """
    low_ok = value > 0.0 if open_low else value >= 0.0
    high_ok = value < 1.0 if open_high else value <= 1.0
    if not (math.isfinite(value) and low_ok and high_ok):
        low = "(0" if open_low else "[0"
        high = "1)" if open_high else "1]"
        raise InvalidArgumentError(
            f"{parameter} must be in {low}, {high}, got {value!r}",
            parameter=parameter,
            value=value,
        )


class BaseAPI:
    """
    Base class for all toolkit API objects.
    This class provides access to the owning toolkit's settings and profile
    registry. It can be inherited by custom API objects to extend the
    package's functionality.
    """

    def __init__(self, client: Any):
        """
        Initialize the base API class with a client instance.

        Args:
            client: The SpadLinkToolkit instance
        """
        self.client = client
        self.logger = logging.getLogger(__name__)

    def _resolve_profile(
        self, profile: str | DetectorProfile
    ) -> DetectorProfile:
        """
        Resolve a profile name through the client's registry.

        Args:
            profile: A profile name or an already constructed profile.

        Returns:
            The DetectorProfile instance.

        Raises:
            ProfileNotFoundError: If the name is not registered.
        """
        if isinstance(profile, str):
            registry = self.client.registry
            if profile not in registry:
                raise ProfileNotFoundError(profile, list(registry))
            self.logger.debug(f"Resolved profile '{profile}'")
            return registry[profile]
        return profile

    def _setting(self, name: str, override: Any = None) -> Any:
        """
        Return ``override`` unless it is None, else the client's setting.

        Args:
            name: Key in the client's settings mapping.
            override: Value supplied by the caller.

        Returns:
            The effective value.
        """
        if override is not None:
            return override
        settings = getattr(self.client, "settings", None) or {}
        return settings.get(name)
