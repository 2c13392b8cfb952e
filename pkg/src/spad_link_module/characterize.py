"""
This module provides the data reduction for detector characterization: dark
count probability, Poisson-corrected detection efficiency, double-gate
afterpulse extraction, timing jitter deconvolution and counting uncertainty
planning.
"""

from __future__ import annotations

import logging
import math
import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.stats import chi2

from .base import (
    BaseAPI,
    InvalidArgumentError,
    InvalidDataError,
    NoPeakError,
    require,
    require_probability,
)

__all__ = [
    "DEFAULT_LASER_FWHM",
    "MEASUREMENT_COLUMNS",
    "DOUBLE_GATE_COLUMNS",
    "HISTOGRAM_COLUMNS",
    "REPORT_COLUMNS",
    "MeasurementRecord",
    "DoubleGateRecord",
    "TimingHistogram",
    "Estimate",
    "dark_probability",
    "detection_efficiency",
    "afterpulse_point",
    "afterpulse_curve",
    "jitter_fwhm",
    "deconvolve_jitter",
    "counts_needed",
    "integration_time_for",
    "read_measurements",
    "read_double_gate",
    "read_histogram",
    "write_report",
    "read_report",
    "CharacterizeAPI",
]

logger = logging.getLogger(__name__)

DEFAULT_LASER_FWHM = 350e-12

MEASUREMENT_COLUMNS = [
    "shutter",
    "counts",
    "integration_time_s",
    "f_rep_hz",
    "mu_bar",
]
DOUBLE_GATE_COLUMNS = ["dt_us", "n_first", "n_coinc", "dark_prob"]
HISTOGRAM_COLUMNS = ["bin_start_ps", "counts"]
REPORT_COLUMNS = ["quantity", "dt_s", "value", "std_error", "flags"]

# One-sided 95 % upper limit on a Poisson mean after observing zero events
ZERO_COUNT_UPPER = float(chi2.ppf(0.95, 2) / 2.0)

MIN_PEAK_PROMINENCE = 5.0

FLAG_ZERO_COUNTS = "zero-counts"
FLAG_NO_SIGNAL = "no-signal"
FLAG_BELOW_DARK_FLOOR = "below-dark-floor"


@dataclass(frozen=True)
class MeasurementRecord:
    """
    Counts recorded over an integration time with the laser on or off.

    Attributes:
        counts: Recorded detections.
        integration_time: Measurement duration in seconds.
        f_rep: Gate frequency in Hz.
        shutter_open: Whether light reached the detector.
        mean_photons_per_pulse: Mean photon number per pulse at the diode;
            required when the shutter is open.
    """

    counts: int
    integration_time: float
    f_rep: float
    shutter_open: bool = False
    mean_photons_per_pulse: float | None = None

    def __post_init__(self) -> None:
        require(self.counts >= 0, "counts must be >= 0", "counts", self.counts)
        require(
            self.integration_time > 0.0,
            "integration_time must be > 0",
            "integration_time",
            self.integration_time,
        )
        require(self.f_rep > 0.0, "f_rep must be > 0", "f_rep", self.f_rep)
        if self.shutter_open:
            require(
                self.mean_photons_per_pulse is not None
                and self.mean_photons_per_pulse > 0.0,
                "mean_photons_per_pulse must be > 0 when the shutter is open",
                "mean_photons_per_pulse",
                self.mean_photons_per_pulse,
            )

    @property
    def n_gates(self) -> float:
        return self.f_rep * self.integration_time

    @property
    def probability(self) -> float:
        """Counts per gate."""
        return self.counts / self.n_gates

    @property
    def std_error(self) -> float:
        """Poisson uncertainty of ``probability``."""
        return math.sqrt(self.counts) / self.n_gates


@dataclass(frozen=True)
class DoubleGateRecord:
    """Counts from the two-gate afterpulse experiment at one delay."""

    n_first_gate_counts: int
    n_coincidences: int
    dt: float
    dark_probability: float

    def __post_init__(self) -> None:
        require(
            self.n_first_gate_counts >= 0,
            "n_first_gate_counts must be >= 0",
            "n_first_gate_counts",
        )
        require(
            0 <= self.n_coincidences <= self.n_first_gate_counts,
            "n_coincidences must be in [0, n_first_gate_counts], got "
            f"{self.n_coincidences!r}",
            "n_coincidences",
            self.n_coincidences,
        )
        require(self.dt > 0.0, "dt must be > 0", "dt", self.dt)
        require_probability(self.dark_probability, "dark_probability")


@dataclass(frozen=True)
class TimingHistogram:
    """
    Start-stop time spectrum of photon detections.

    Attributes:
        bin_width: Width of every bin in seconds.
        bins: Counts per bin.
        laser_fwhm: FWHM of the laser pulses in seconds.
        bin_start: Left edge of the first bin in seconds.
    """

    bin_width: float
    bins: tuple[float, ...]
    laser_fwhm: float = DEFAULT_LASER_FWHM
    bin_start: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "bins", tuple(float(b) for b in self.bins))
        require(self.bin_width > 0.0, "bin_width must be > 0", "bin_width")
        require(self.laser_fwhm >= 0.0, "laser_fwhm must be >= 0", "laser_fwhm")
        require(
            all(b >= 0.0 for b in self.bins),
            "histogram bins must be >= 0",
            "bins",
        )
        if not any(self.bins):
            raise InvalidDataError("histogram has no nonzero bin")

    @property
    def counts(self) -> NDArray[np.float64]:
        return np.asarray(self.bins, dtype=float)

    @property
    def centers(self) -> NDArray[np.float64]:
        return self.bin_start + (np.arange(len(self.bins)) + 0.5) * self.bin_width


@dataclass(frozen=True)
class Estimate:
    """
    A reduced quantity with its uncertainty.

    Attributes:
        quantity: What was estimated.
        value: The reported value, after any clamping.
        std_error: One standard error.
        flags: Diagnostics such as ``below-dark-floor``.
        raw_value: The value before clamping, when it differs.
        upper_bound: One-sided 95 % bound, reported for zero counts.
        dt: Delay of an afterpulse point in seconds.
    """

    quantity: str
    value: float
    std_error: float
    flags: tuple[str, ...] = field(default=())
    raw_value: float | None = None
    upper_bound: float | None = None
    dt: float | None = None

    def as_row(self) -> dict[str, object]:
        return {
            "quantity": self.quantity,
            "dt_s": self.dt,
            "value": self.value,
            "std_error": self.std_error,
            "flags": ";".join(self.flags),
        }


def dark_probability(rec: MeasurementRecord) -> Estimate:
    """
    Dark count probability per gate from a shuttered measurement.

    Returns:
        ``counts / (f_rep * integration_time)`` with its Poisson error. For
        zero counts the value is 0 and ``upper_bound`` holds the one-sided
        95 % limit ``-ln(0.05) / (f_rep * integration_time)``, about
        ``2.996 / (f_rep * integration_time)``.

    Raises:
        InvalidArgumentError: If the shutter was open.

    Example:
        >>> est = dark_probability(MeasurementRecord(1000, 100.0, 1e4))
        >>> est.value, round(est.std_error, 7)
        (0.001, 3.16e-05)
    """
    if rec.shutter_open:
        raise InvalidArgumentError(
            "dark probability needs a measurement with the shutter closed",
            parameter="shutter_open",
            value=True,
        )
    if rec.counts == 0:
        return Estimate(
            quantity="dark_probability",
            value=0.0,
            std_error=0.0,
            flags=(FLAG_ZERO_COUNTS,),
            upper_bound=ZERO_COUNT_UPPER / rec.n_gates,
        )
    return Estimate(
        quantity="dark_probability",
        value=rec.probability,
        std_error=rec.std_error,
    )


def detection_efficiency(
    light: MeasurementRecord, dark: MeasurementRecord
) -> Estimate:
    """
    Detection efficiency corrected for the Poisson photon statistics.

    With ``p = 1 - (1 - p_dark) * exp(-mu * eta)`` the efficiency is::

        eta = -ln[(1 - p_light) / (1 - p_dark)] / mu

    and its error propagates both Poisson errors through the logarithm.

    Args:
        light: Measurement with the shutter open and a known mean photon
            number.
        dark: Shuttered measurement at the same gate frequency.

    Returns:
        The efficiency. When ``p_light <= p_dark`` the value is 0 with a
        ``no-signal`` flag and a logged warning.

    Raises:
        InvalidArgumentError: For mismatched shutter states or frequencies,
            or if ``p_light >= 1`` or ``p_dark >= 1``.
    """
    require(
        light.shutter_open,
        "light measurement must have the shutter open",
        "light",
    )
    require(
        not dark.shutter_open,
        "dark measurement must have the shutter closed",
        "dark",
    )
    require(
        math.isclose(light.f_rep, dark.f_rep),
        f"gate frequencies differ: {light.f_rep:g} Hz vs {dark.f_rep:g} Hz",
        "f_rep",
    )
    p_light = light.probability
    p_dark = dark.probability
    require(
        p_light < 1.0,
        f"light count probability must be < 1, got {p_light!r}",
        "light",
        p_light,
    )
    require(
        p_dark < 1.0,
        f"dark count probability must be < 1, got {p_dark!r}",
        "dark",
        p_dark,
    )
    mu = float(light.mean_photons_per_pulse or 0.0)

    eta = -math.log((1.0 - p_light) / (1.0 - p_dark)) / mu
    std_error = (
        math.hypot(
            light.std_error / (1.0 - p_light),
            dark.std_error / (1.0 - p_dark),
        )
        / mu
    )
    if p_light <= p_dark:
        logger.warning(
            f"light count probability {p_light:.4g} is not above the dark "
            f"probability {p_dark:.4g}; efficiency reported as 0"
        )
        return Estimate(
            quantity="detection_efficiency",
            value=0.0,
            std_error=std_error,
            flags=(FLAG_NO_SIGNAL,),
            raw_value=eta,
        )
    return Estimate(
        quantity="detection_efficiency", value=eta, std_error=std_error
    )


def afterpulse_point(rec: DoubleGateRecord) -> Estimate:
    """
    Afterpulse probability at one delay from the two-gate experiment.

    The coincidence fraction ``n_coinc / n_first`` minus the dark
    probability; negative results are clamped to 0 with a
    ``below-dark-floor`` flag and the unclamped value kept in ``raw_value``.
    The error is the binomial error of the coincidence fraction.

    Raises:
        InvalidArgumentError: If there are no first-gate counts.

    Example:
        >>> est = afterpulse_point(DoubleGateRecord(10000, 150, 1e-6, 5e-3))
        >>> round(est.value, 6)
        0.01
    """
    if rec.n_first_gate_counts == 0:
        raise InvalidArgumentError(
            "afterpulse point needs at least one first-gate count",
            parameter="n_first_gate_counts",
            value=0,
        )
    fraction = rec.n_coincidences / rec.n_first_gate_counts
    raw = fraction - rec.dark_probability
    std_error = math.sqrt(fraction * (1.0 - fraction) / rec.n_first_gate_counts)
    if raw < 0.0:
        logger.warning(
            f"afterpulse estimate at dt={rec.dt:g} s is below the dark floor "
            f"({raw:.3g}); clamped to 0"
        )
        return Estimate(
            quantity="afterpulse_probability",
            value=0.0,
            std_error=std_error,
            flags=(FLAG_BELOW_DARK_FLOOR,),
            raw_value=raw,
            dt=rec.dt,
        )
    return Estimate(
        quantity="afterpulse_probability",
        value=raw,
        std_error=std_error,
        raw_value=raw,
        dt=rec.dt,
    )


def afterpulse_curve(records: Iterable[DoubleGateRecord]) -> list[Estimate]:
    """afterpulse_point for every record, sorted by delay."""
    return [afterpulse_point(r) for r in sorted(records, key=lambda r: r.dt)]


def deconvolve_jitter(measured: float, laser: float) -> float:
    """
    Detector jitter FWHM from a measured FWHM and the laser pulse FWHM,
    assuming both are Gaussian.

    Raises:
        InvalidDataError: If the measured width is below the laser width.

    Example:
        >>> round(deconvolve_jitter(570e-12, 350e-12) * 1e12, 3)
        449.889
    """
    if measured < laser:
        raise InvalidDataError(
            f"measured FWHM {measured:g} s is below the laser FWHM {laser:g} s"
        )
    return math.sqrt(measured**2 - laser**2)


def _half_max_crossing(
    net: NDArray[np.float64],
    centers: NDArray[np.float64],
    peak: int,
    level: float,
    step: int,
) -> float:
    i = peak
    while 0 <= i + step < len(net) and net[i + step] >= level:
        i += step
    j = i + step
    if not 0 <= j < len(net):
        raise NoPeakError("peak is not resolved inside the histogram range")
    # linear interpolation between the last bin above and the first below
    frac = (net[i] - level) / (net[i] - net[j])
    return float(centers[i] + frac * (centers[j] - centers[i]))


def jitter_fwhm(hist: TimingHistogram) -> Estimate:
    """
    Detector timing jitter from a time spectrum.

    The pedestal is the median of the bins further than three FWHM from the
    peak maximum and is subtracted before the half-maximum crossings are
    located by linear interpolation. The laser contribution is removed in
    quadrature.

    Returns:
        The jitter FWHM in seconds with an error of half a bin width;
        ``raw_value`` holds the measured FWHM.

    Raises:
        NoPeakError: If the peak does not rise at least five pedestal
            standard deviations above the pedestal.
        InvalidDataError: If the measured FWHM is below the laser FWHM.
    """
    counts = hist.counts
    centers = hist.centers
    peak = int(np.argmax(counts))

    # first pass against the median of all bins to size the exclusion zone
    rough = _measure_fwhm(counts, centers, peak, float(np.median(counts)))
    off_peak = counts[np.abs(centers - centers[peak]) > 3.0 * rough]
    if off_peak.size < 3:
        raise InvalidDataError(
            "histogram range is too narrow to estimate the pedestal"
        )
    pedestal = float(np.median(off_peak))
    noise = float(np.std(off_peak, ddof=1)) or math.sqrt(pedestal)
    prominence = counts[peak] - pedestal
    if prominence <= 0.0 or prominence < MIN_PEAK_PROMINENCE * noise:
        raise NoPeakError(
            f"no discernible peak: prominence {prominence:.3g} against "
            f"pedestal noise {noise:.3g}"
        )
    measured = _measure_fwhm(counts, centers, peak, pedestal)
    logger.debug(
        f"pedestal {pedestal:.3g} counts/bin, measured FWHM {measured:.4g} s"
    )
    return Estimate(
        quantity="jitter_fwhm",
        value=deconvolve_jitter(measured, hist.laser_fwhm),
        std_error=hist.bin_width / 2.0,
        raw_value=measured,
    )


def _measure_fwhm(
    counts: NDArray[np.float64],
    centers: NDArray[np.float64],
    peak: int,
    pedestal: float,
) -> float:
    net = counts - pedestal
    level = net[peak] / 2.0
    if level <= 0.0:
        raise NoPeakError("peak does not rise above the pedestal")
    left = _half_max_crossing(net, centers, peak, level, -1)
    right = _half_max_crossing(net, centers, peak, level, +1)
    return right - left


def counts_needed(rel_err: float) -> int:
    """
    Counts required for a relative Poisson uncertainty of ``rel_err``.

    Example:
        >>> counts_needed(0.1)
        100
    """
    require(0.0 < rel_err < 1.0, "rel_err must be in (0, 1)", "rel_err", rel_err)
    return math.ceil(round(1.0 / rel_err**2, 9))


def integration_time_for(
    rel_err: float, probability: float, f_rep: float
) -> float:
    """Seconds of integration needed to reach ``rel_err`` at a count probability."""
    require_probability(probability, "probability", open_low=True)
    require(f_rep > 0.0, "f_rep must be > 0", "f_rep", f_rep)
    return counts_needed(rel_err) / (probability * f_rep)


def _read_csv(
    path: str | os.PathLike[str], columns: Sequence[str]
) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InvalidDataError(f"{path}: missing columns {missing}")
    if frame.empty:
        raise InvalidDataError(f"{path}: no data rows")
    return frame


def read_measurements(path: str | os.PathLike[str]) -> list[MeasurementRecord]:
    """
    Read count measurements.

    ``shutter`` is ``open`` or ``closed``; ``mu_bar`` may be empty for
    closed rows.
    """
    frame = _read_csv(path, MEASUREMENT_COLUMNS)
    records = []
    for row in frame.itertuples(index=False):
        shutter = str(row.shutter).strip().lower()
        if shutter not in ("open", "closed"):
            raise InvalidDataError(
                f"{path}: shutter must be 'open' or 'closed', got '{row.shutter}'"
            )
        mu = None if pd.isna(row.mu_bar) else float(row.mu_bar)
        records.append(
            MeasurementRecord(
                counts=int(row.counts),
                integration_time=float(row.integration_time_s),
                f_rep=float(row.f_rep_hz),
                shutter_open=shutter == "open",
                mean_photons_per_pulse=mu,
            )
        )
    return records


def read_double_gate(path: str | os.PathLike[str]) -> list[DoubleGateRecord]:
    """Read two-gate experiment counts; ``dt_us`` is in microseconds."""
    frame = _read_csv(path, DOUBLE_GATE_COLUMNS)
    return [
        DoubleGateRecord(
            n_first_gate_counts=int(row.n_first),
            n_coincidences=int(row.n_coinc),
            dt=float(row.dt_us) * 1e-6,
            dark_probability=float(row.dark_prob),
        )
        for row in frame.itertuples(index=False)
    ]


def read_histogram(
    path: str | os.PathLike[str], laser_fwhm: float = DEFAULT_LASER_FWHM
) -> TimingHistogram:
    """
    Read a time spectrum; bins must be contiguous and equally wide.
    """
    frame = _read_csv(path, HISTOGRAM_COLUMNS)
    starts = frame["bin_start_ps"].to_numpy(dtype=float) * 1e-12
    if starts.size < 2:
        raise InvalidDataError(f"{path}: need at least two bins")
    widths = np.diff(starts)
    if widths.min() <= 0.0 or not np.allclose(widths, widths[0], rtol=1e-6):
        raise InvalidDataError(f"{path}: bins must be equally spaced")
    return TimingHistogram(
        bin_width=float(widths[0]),
        bins=tuple(frame["counts"].to_numpy(dtype=float)),
        laser_fwhm=laser_fwhm,
        bin_start=float(starts[0]),
    )


def write_report(
    estimates: Iterable[Estimate],
    path: str | os.PathLike[str] | TextIO,
    sig_figs: int | None = None,
) -> None:
    """Write estimates with the REPORT_COLUMNS header."""
    frame = pd.DataFrame([e.as_row() for e in estimates], columns=REPORT_COLUMNS)
    frame.to_csv(
        path,
        index=False,
        float_format=f"%.{sig_figs}g" if sig_figs else None,
    )


def read_report(path: str | os.PathLike[str]) -> list[Estimate]:
    """Read a report written by write_report."""
    frame = _read_csv(path, REPORT_COLUMNS)
    return [
        Estimate(
            quantity=str(row.quantity),
            value=float(row.value),
            std_error=float(row.std_error),
            flags=tuple(
                f for f in ("" if pd.isna(row.flags) else str(row.flags)).split(";")
                if f
            ),
            dt=None if pd.isna(row.dt_s) else float(row.dt_s),
        )
        for row in frame.itertuples(index=False)
    ]


class CharacterizeAPI(BaseAPI):
    """
    API for reducing characterization measurements.
    """

    def dark(self, records: Iterable[MeasurementRecord]) -> list[Estimate]:
        """Dark probability of every shuttered record."""
        return [dark_probability(r) for r in records if not r.shutter_open]

    def efficiency(
        self, records: Sequence[MeasurementRecord]
    ) -> list[Estimate]:
        """
        Efficiency of every open-shutter record against the first closed one.

        Raises:
            InvalidDataError: If there is no closed or no open record.
        """
        darks = [r for r in records if not r.shutter_open]
        lights = [r for r in records if r.shutter_open]
        if not darks or not lights:
            raise InvalidDataError(
                "efficiency needs at least one closed and one open measurement"
            )
        self.logger.debug(
            f"Efficiency from {len(lights)} light records against "
            f"{darks[0].counts} dark counts"
        )
        return [detection_efficiency(light, darks[0]) for light in lights]

    def afterpulse(self, records: Iterable[DoubleGateRecord]) -> list[Estimate]:
        """Afterpulse curve of two-gate records."""
        return afterpulse_curve(records)

    def jitter(self, hist: TimingHistogram) -> Estimate:
        """Detector jitter from a time spectrum."""
        return jitter_fwhm(hist)

    def integration_time(
        self, rel_err: float, probability: float, f_rep: float | None = None
    ) -> float:
        """Integration time needed for ``rel_err`` at ``probability``."""
        return integration_time_for(
            rel_err, probability, self._setting("f_rep", f_rep)
        )
