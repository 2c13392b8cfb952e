"""
This module provides parametric models of a gated InGaAs/InP single-photon
detector: afterpulse decay, dark count probability versus efficiency, timing
jitter versus efficiency, and the built-in registry of detector profiles.

All model types are frozen dataclasses; every operation is a pure function of
its arguments. Times are in seconds and probabilities are per gate.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Any, overload

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .base import (
    BaseAPI,
    ConfigurationError,
    InvalidArgumentError,
    require,
    require_probability,
)

__all__ = [
    "REFERENCE_EFFICIENCY",
    "DEFAULT_HORIZON",
    "DEFAULT_DARK_SLOPE",
    "DEFAULT_GATE_WIDTH",
    "FWHM_PER_SIGMA",
    "AfterpulseTerm",
    "AfterpulseModel",
    "JitterModel",
    "DarkCountModel",
    "DetectorProfile",
    "afterpulse_probability",
    "cumulative_afterpulse",
    "min_skip_gates",
    "holdoff_throughput_loss",
    "dark_count_at",
    "jitter_at",
    "builtin_profiles",
    "epitaxx_afterpulse",
    "DetectorsAPI",
]

logger = logging.getLogger(__name__)

REFERENCE_EFFICIENCY = 0.10
"""Detection efficiency at which dark anchors and jitter are quoted."""

DEFAULT_HORIZON = 100e-6
"""Afterpulse memory horizon; p_ap is defined as 0 at and beyond it."""

DEFAULT_DARK_SLOPE = 30.0
"""Default exponential coefficient of p_dc versus efficiency (per unit eta)."""

DEFAULT_GATE_WIDTH = 2.4e-9
"""FWHM of the short gate pulses."""

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
"""Ratio FWHM / sigma of a Gaussian (about 2.3548)."""

MAX_JITTER_FWHM = 2e-9


@dataclass(frozen=True)
class AfterpulseTerm:
    """One trap level: ``amplitude * exp(-dt / lifetime)``."""

    amplitude: float
    lifetime: float

    def __post_init__(self) -> None:
        require(
            math.isfinite(self.amplitude) and self.amplitude >= 0.0,
            f"amplitude must be >= 0, got {self.amplitude!r}",
            "amplitude",
            self.amplitude,
        )
        require(
            math.isfinite(self.lifetime) and self.lifetime > 0.0,
            f"lifetime must be > 0, got {self.lifetime!r}",
            "lifetime",
            self.lifetime,
        )


@dataclass(frozen=True)
class AfterpulseModel:
    """
    Sum-of-exponentials afterpulse probability p_ap(dt).

    Attributes:
        terms: Trap levels, in any order.
        horizon: Delay at and beyond which p_ap is exactly 0.
    """

    terms: tuple[AfterpulseTerm, ...] = ()
    horizon: float = DEFAULT_HORIZON

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))
        require(
            self.horizon > 0.0,
            f"horizon must be > 0, got {self.horizon!r}",
            "horizon",
            self.horizon,
        )
        total = sum(t.amplitude for t in self.terms)
        require(
            total <= 1.0,
            f"sum of afterpulse amplitudes must be <= 1, got {total:.6g}",
            "terms",
            total,
        )

    @classmethod
    def from_pairs(
        cls,
        pairs: Sequence[tuple[float, float]],
        horizon: float = DEFAULT_HORIZON,
    ) -> AfterpulseModel:
        """Build a model from ``(amplitude, lifetime)`` pairs."""
        return cls(
            terms=tuple(AfterpulseTerm(a, tau) for a, tau in pairs),
            horizon=horizon,
        )

    @property
    def amplitudes(self) -> NDArray[np.float64]:
        return np.array([t.amplitude for t in self.terms], dtype=float)

    @property
    def lifetimes(self) -> NDArray[np.float64]:
        return np.array([t.lifetime for t in self.terms], dtype=float)

    def horizon_gates(self, f_rep: float) -> int:
        """Number of gates after an avalanche that can still afterpulse."""
        return int(math.ceil(self.horizon * f_rep))

    def scaled(
        self, amplitude_factor: float = 1.0, lifetime_factor: float = 1.0
    ) -> AfterpulseModel:
        """
        Return a variant with every amplitude and lifetime rescaled.

        Used to derive "lower and faster" decay curves for diodes whose
        afterpulse data was only published qualitatively.
        """
        return AfterpulseModel(
            terms=tuple(
                AfterpulseTerm(
                    t.amplitude * amplitude_factor,
                    t.lifetime * lifetime_factor,
                )
                for t in self.terms
            ),
            horizon=self.horizon,
        )

    def cumulative_curve(
        self, f_rep: float, n_skips: Sequence[int]
    ) -> list[tuple[int, float]]:
        """Cumulative afterpulse probability for several hold-off settings."""
        return [(n, cumulative_afterpulse(self, f_rep, n)) for n in n_skips]

    def to_pairs(self) -> list[tuple[float, float]]:
        return [(t.amplitude, t.lifetime) for t in self.terms]


@dataclass(frozen=True)
class JitterModel:
    """
    Timing jitter FWHM versus detection efficiency.

    Attributes:
        fwhm_at_reference: FWHM at the reference efficiency (0.10).
        anchors: ``(efficiency, fwhm)`` points, interpolated piecewise-linearly.
    """

    fwhm_at_reference: float = 450e-12
    anchors: tuple[tuple[float, float], ...] = (
        (0.05, 500e-12),
        (0.10, 450e-12),
        (0.25, 300e-12),
    )

    def __post_init__(self) -> None:
        anchors = tuple(
            sorted((float(e), float(w)) for e, w in self.anchors)
        )
        object.__setattr__(self, "anchors", anchors)
        for _, fwhm in (*anchors, (None, self.fwhm_at_reference)):
            require(
                0.0 <= fwhm <= MAX_JITTER_FWHM,
                f"jitter FWHM must be in [0, 2 ns], got {fwhm!r}",
                "fwhm",
                fwhm,
            )
        widths = [w for _, w in anchors]
        require(
            all(b <= a for a, b in zip(widths, widths[1:], strict=False)),
            "jitter FWHM must be non-increasing in efficiency",
            "anchors",
            anchors,
        )

    def sigma_at(self, efficiency: float) -> float:
        """Gaussian standard deviation corresponding to the interpolated FWHM."""
        return jitter_at(self, efficiency) / FWHM_PER_SIGMA

    def fwhm_at(self, efficiency: float) -> float:
        """Interpolated FWHM without range checks on the efficiency."""
        if not self.anchors:
            raise ConfigurationError("jitter model has no anchor points")
        eff = [e for e, _ in self.anchors]
        fwhm = [w for _, w in self.anchors]
        return float(np.interp(efficiency, eff, fwhm))


@dataclass(frozen=True)
class DarkCountModel:
    """
    Dark count probability per gate, ``p10 * exp(slope * (eta - eta_ref))``.

    Attributes:
        p10: Dark probability per gate at the reference efficiency.
        slope: Exponential coefficient per unit efficiency.
        reference_efficiency: Efficiency at which ``p10`` is quoted.
    """

    p10: float
    slope: float = DEFAULT_DARK_SLOPE
    reference_efficiency: float = REFERENCE_EFFICIENCY

    def __post_init__(self) -> None:
        require_probability(self.p10, "p10", open_high=True)
        require(
            math.isfinite(self.slope) and self.slope > 0.0,
            f"dark slope must be > 0, got {self.slope!r}",
            "slope",
            self.slope,
        )
        require_probability(
            self.reference_efficiency,
            "reference_efficiency",
            open_low=True,
            open_high=True,
        )

    def probability_at(self, efficiency: float) -> float:
        """p_dc at ``efficiency`` clamped to <= 1, without range checks."""
        p = self.p10 * math.exp(
            self.slope * (efficiency - self.reference_efficiency)
        )
        return min(p, 1.0)


@dataclass(frozen=True)
class DetectorProfile:
    """One diode at one operating point."""

    name: str
    efficiency: float
    dark: DarkCountModel
    temperature: float | None = None
    gate_width: float = DEFAULT_GATE_WIDTH
    afterpulse: AfterpulseModel = field(default_factory=AfterpulseModel)
    jitter: JitterModel = field(default_factory=JitterModel)
    notes: str = ""

    def __post_init__(self) -> None:
        require(bool(self.name.strip()), "profile name must not be empty")
        require_probability(self.efficiency, "efficiency")
        require(
            self.gate_width > 0.0,
            f"gate_width must be > 0, got {self.gate_width!r}",
            "gate_width",
            self.gate_width,
        )
        p = self.dark.p10 * math.exp(
            self.dark.slope
            * (self.efficiency - self.dark.reference_efficiency)
        )
        require(
            0.0 <= p < 1.0,
            f"dark probability at the profile efficiency must be in [0, 1), "
            f"got {p:.6g}",
            "dark",
            p,
        )

    @property
    def dark_probability(self) -> float:
        """p_dc evaluated at the profile's own efficiency."""
        return self.dark.probability_at(self.efficiency)

    @property
    def jitter_fwhm(self) -> float:
        return self.jitter.fwhm_at(self.efficiency)

    @property
    def jitter_sigma(self) -> float:
        return self.jitter_fwhm / FWHM_PER_SIGMA

    def with_efficiency(self, efficiency: float) -> DetectorProfile:
        """Same diode at another bias point."""
        return replace(self, efficiency=efficiency)

    def with_dark(self, p10: float) -> DetectorProfile:
        return replace(self, dark=replace(self.dark, p10=p10))


@overload
def afterpulse_probability(model: AfterpulseModel, dt: float) -> float: ...


@overload
def afterpulse_probability(
    model: AfterpulseModel, dt: NDArray[np.float64]
) -> NDArray[np.float64]: ...


def afterpulse_probability(model: AfterpulseModel, dt: Any) -> Any:
    """
    Probability of an afterpulse in a gate ``dt`` after an avalanche.

    Args:
        model: The afterpulse model.
        dt: Delay in seconds; a scalar or an array.

    Returns:
        ``sum(a_i * exp(-dt / tau_i))`` clamped to [0, 1], and 0 for
        ``dt >= model.horizon``. Same shape as ``dt``.

    Raises:
        InvalidArgumentError: If any delay is <= 0.

    Example:
        >>> model = AfterpulseModel.from_pairs([(0.01, 1e-6)])
        >>> round(afterpulse_probability(model, 1e-6), 6)
        0.003679
    """
    delays = np.asarray(dt, dtype=float)
    if np.any(~(delays > 0.0)):
        raise InvalidArgumentError(
            "afterpulse delay must be > 0", parameter="dt", value=dt
        )
    if model.terms:
        p = np.exp(-np.multiply.outer(delays, 1.0 / model.lifetimes)) @ (
            model.amplitudes
        )
    else:
        p = np.zeros_like(delays)
    p = np.where(delays >= model.horizon, 0.0, np.clip(p, 0.0, 1.0))
    if np.ndim(dt) == 0:
        return float(p)
    return p


def _gate_terms(
    model: AfterpulseModel, f_rep: float, first: int = 1
) -> NDArray[np.float64]:
    """p_ap at gate offsets first, first+1, ... up to the horizon."""
    require(
        f_rep > 0.0, f"f_rep must be > 0, got {f_rep!r}", "f_rep", f_rep
    )
    last = int(math.ceil(model.horizon * f_rep)) + 1
    if first > last:
        return np.zeros(0)
    n = np.arange(first, last + 1, dtype=float)
    return afterpulse_probability(model, n / f_rep)


def cumulative_afterpulse(
    model: AfterpulseModel, f_rep: float, n_skip: int = 0
) -> float:
    """
    Cumulated afterpulse probability seen by the first counted gate onwards.

    Sums ``p_ap(n / f_rep)`` for ``n = n_skip + 1, n_skip + 2, ...`` up to the
    model horizon. Contributions at and beyond the horizon are 0, so the sum
    is exact.

    Args:
        model: The afterpulse model.
        f_rep: Gate repetition frequency in Hz.
        n_skip: Gates suppressed after each detection (hold-off).

    Returns:
        The cumulative probability.

    Raises:
        InvalidArgumentError: If ``f_rep <= 0`` or ``n_skip < 0``.
    """
    require(n_skip >= 0, f"n_skip must be >= 0, got {n_skip!r}", "n_skip")
    return float(np.sum(_gate_terms(model, f_rep, n_skip + 1)))


def min_skip_gates(
    model: AfterpulseModel, f_rep: float, budget: float = 0.01
) -> int:
    """
    Smallest hold-off that keeps the cumulated afterpulse probability
    strictly below ``budget``.

    Args:
        model: The afterpulse model.
        f_rep: Gate repetition frequency in Hz.
        budget: Tolerated QBER increase from afterpulses.

    Returns:
        The number of gates to skip after each detection.

    Example:
        >>> min_skip_gates(epitaxx_afterpulse(), 1e6, 0.01)
        2
    """
    require_probability(budget, "budget", open_low=True, open_high=True)
    terms = _gate_terms(model, f_rep)
    # tails[n] = sum(terms[n:]), the cumulative probability for hold-off n
    tails = np.concatenate([np.cumsum(terms[::-1])[::-1], [0.0]])
    n = int(np.argmax(tails < budget))
    # Settle ties on exactly the values cumulative_afterpulse reports
    while n > 0 and cumulative_afterpulse(model, f_rep, n - 1) < budget:
        n -= 1
    while cumulative_afterpulse(model, f_rep, n) >= budget:
        n += 1
    return n


def holdoff_throughput_loss(count_probability: float, n_skip: int) -> float:
    """
    Fraction of gates lost to hold-off.

    Each recorded count consumes its own gate plus ``n_skip`` suppressed ones,
    so with a count probability ``c`` per active gate the lost fraction is
    ``c * n / (1 + c * n)``.
    """
    require_probability(count_probability, "count_probability")
    require(n_skip >= 0, f"n_skip must be >= 0, got {n_skip!r}", "n_skip")
    lost = count_probability * n_skip
    return lost / (1.0 + lost)


def dark_count_at(model: DarkCountModel, efficiency: float) -> float:
    """
    Dark count probability per gate at a detection efficiency.

    Args:
        model: The dark count model.
        efficiency: Detection efficiency in (0, 1).

    Returns:
        ``p10 * exp(slope * (efficiency - reference))``, clamped to <= 1.

    Raises:
        InvalidArgumentError: If the efficiency is outside (0, 1).
    """
    require_probability(efficiency, "efficiency", open_low=True, open_high=True)
    return model.probability_at(efficiency)


def jitter_at(model: JitterModel, efficiency: float) -> float:
    """
    Timing jitter FWHM at a detection efficiency.

    Piecewise-linear interpolation over the anchors, clamped to the end
    anchors outside their range.

    Raises:
        InvalidArgumentError: If the efficiency is outside (0, 1).
        ConfigurationError: If the model has no anchors.
    """
    require_probability(efficiency, "efficiency", open_low=True, open_high=True)
    return model.fwhm_at(efficiency)


def epitaxx_afterpulse() -> AfterpulseModel:
    """
    Three-term afterpulse curve of the Epitaxx diode with short gates.

    The coefficients are not published. They were produced by a constrained
    fit (calibration.fit_to_constraints on calibration.published_targets()) to:
    p_ap(100 ns) ~ 1e-2; cumulated probability 1.4 % at 1 MHz; hold-off of 2
    gates at 1 MHz and 14 gates at 2 MHz for a 1 % budget; negligible
    afterpulsing at 10 kHz; at most 0.85 % left after the 2-gate hold-off at
    1 MHz. Resulting values: sum at 1 MHz = 1.365 %, 0.815 % after 2 gates,
    p_ap(100 ns) = 1.03e-2.
    """
    return AfterpulseModel.from_pairs(
        [(0.012, 100e-9), (0.0058, 1.6e-6), (0.0004, 18e-6)]
    )


def builtin_profiles() -> list[DetectorProfile]:
    """
    The built-in detector profiles, all quoted at 10 % efficiency.

    Returns:
        Profiles for the Epitaxx diode at -60 and -40 C, the EG&G/NEC diodes,
        the Fujitsu and passive-quench comparison points, and a hypothetical
        diode with ten times fewer dark counts.
    """
    epitaxx = epitaxx_afterpulse()
    # Lower and faster decay; only the qualitative ordering is published
    egg_nec = epitaxx.scaled(amplitude_factor=0.5, lifetime_factor=0.5)

    def profile(
        name: str,
        p10: float,
        temperature: float | None,
        notes: str,
        afterpulse: AfterpulseModel = epitaxx,
        gate_width: float = DEFAULT_GATE_WIDTH,
    ) -> DetectorProfile:
        return DetectorProfile(
            name=name,
            efficiency=REFERENCE_EFFICIENCY,
            dark=DarkCountModel(p10=p10),
            temperature=temperature,
            gate_width=gate_width,
            afterpulse=afterpulse,
            notes=notes,
        )

    return [
        profile(
            "epitaxx-60",
            2.8e-5,
            -60.0,
            "Epitaxx InGaAs/InP, short gates; measured dark anchor",
        ),
        profile(
            "epitaxx-40",
            6e-5,
            -40.0,
            "Epitaxx InGaAs/InP, short gates; measured dark anchor",
        ),
        profile(
            "egg-nec-60",
            3.5e-4,
            -60.0,
            "EG&G / NEC diodes; afterpulse curve approximate "
            "(Epitaxx curve at half amplitude and half lifetime)",
            afterpulse=egg_nec,
        ),
        profile(
            "fujitsu-196",
            1e-4,
            -196.0,
            "Fujitsu, liquid nitrogen, 2.5 ns window; afterpulse unmeasured, "
            "Epitaxx curve reused",
            gate_width=2.5e-9,
        ),
        profile(
            "fujitsu-ribordy-80",
            1e-4,
            -80.0,
            "Fujitsu at its optimal temperature; afterpulse unmeasured, "
            "Epitaxx curve reused",
        ),
        profile(
            "passive-quench",
            2.5e-3,
            None,
            "EG&G / NEC with passive quenching, uncorrected for afterpulsing "
            "from dark counts; afterpulse curve approximate as for egg-nec-60",
            afterpulse=egg_nec,
        ),
        profile(
            "passive-quench-corrected",
            5e-4,
            None,
            "passive-quench dark probability corrected for afterpulsing "
            "(lower bound)",
            afterpulse=egg_nec,
        ),
        profile(
            "long-gate-50",
            1e-4,
            -50.0,
            "Epitaxx with 20 ns gates, counts in a 2 ns window; afterpulse "
            "approximate (Epitaxx curve at ten times the amplitude)",
            afterpulse=epitaxx.scaled(amplitude_factor=10.0),
            gate_width=20e-9,
        ),
        profile(
            "improved-hypothetical",
            2.8e-6,
            -60.0,
            "hypothetical diode with ten times fewer dark counts than "
            "epitaxx-60",
        ),
    ]


class DetectorsAPI(BaseAPI):
    """
    API for evaluating detector models.

    Methods accept either a profile name known to the toolkit's registry or a
    DetectorProfile instance.
    """

    def list_profiles(self) -> list[DetectorProfile]:
        """
        Get all registered profiles, sorted by name.

        Returns:
            List of DetectorProfile instances.
        """
        registry = self.client.registry
        return [registry[name] for name in sorted(registry)]

    def get_profile(self, profile: str | DetectorProfile) -> DetectorProfile:
        """
        Get a profile by name.

        Raises:
            ProfileNotFoundError: If the name is not registered.
        """
        return self._resolve_profile(profile)

    def afterpulse_probability(
        self, profile: str | DetectorProfile, dt: ArrayLike
    ) -> Any:
        """p_ap of the profile at delay(s) ``dt``."""
        return afterpulse_probability(
            self._resolve_profile(profile).afterpulse, dt
        )

    def cumulative_afterpulse(
        self,
        profile: str | DetectorProfile,
        f_rep: float | None = None,
        n_skip: int | None = None,
    ) -> float:
        """
        Cumulated afterpulse probability of the profile.

        Example:
            >>> toolkit.detectors.cumulative_afterpulse("epitaxx-60", 1e6)
        """
        f_rep = self._setting("f_rep", f_rep)
        n_skip = self._setting("n_skip", n_skip) or 0
        result = cumulative_afterpulse(
            self._resolve_profile(profile).afterpulse, f_rep, n_skip
        )
        self.logger.debug(
            f"cumulative afterpulse at {f_rep:g} Hz, skip {n_skip}: {result:.6g}"
        )
        return result

    def min_skip_gates(
        self,
        profile: str | DetectorProfile,
        f_rep: float | None = None,
        budget: float | None = None,
    ) -> int:
        """Hold-off needed to keep afterpulsing below the budget."""
        return min_skip_gates(
            self._resolve_profile(profile).afterpulse,
            self._setting("f_rep", f_rep),
            self._setting("budget", budget),
        )

    def dark_count_at(
        self, profile: str | DetectorProfile, efficiency: float | None = None
    ) -> float:
        """p_dc of the profile at ``efficiency`` (default: its own)."""
        resolved = self._resolve_profile(profile)
        return dark_count_at(
            resolved.dark,
            resolved.efficiency if efficiency is None else efficiency,
        )

    def jitter_at(
        self, profile: str | DetectorProfile, efficiency: float | None = None
    ) -> float:
        """Jitter FWHM of the profile at ``efficiency`` (default: its own)."""
        resolved = self._resolve_profile(profile)
        return jitter_at(
            resolved.jitter,
            resolved.efficiency if efficiency is None else efficiency,
        )
