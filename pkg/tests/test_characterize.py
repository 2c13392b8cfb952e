"""
Tests for the characterize module: reduction of count, two-gate and timing
measurements, plus the CSV readers and report writer.
"""

import logging
import math
from pathlib import Path

import numpy as np
import pytest

from spad_link_module import SpadLinkToolkit
from spad_link_module.base import (
    InvalidArgumentError,
    InvalidDataError,
    NoPeakError,
)
from spad_link_module.characterize import (
    REPORT_COLUMNS,
    CharacterizeAPI,
    DoubleGateRecord,
    Estimate,
    MeasurementRecord,
    TimingHistogram,
    afterpulse_curve,
    afterpulse_point,
    counts_needed,
    dark_probability,
    deconvolve_jitter,
    detection_efficiency,
    integration_time_for,
    jitter_fwhm,
    read_double_gate,
    read_histogram,
    read_measurements,
    read_report,
    write_report,
)

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def gaussian_histogram(
    jitter: float = 450e-12,
    laser: float = 350e-12,
    amplitude: float = 1e4,
    pedestal: float = 20.0,
    bin_width: float = 10e-12,
    n_bins: int = 1000,
) -> TimingHistogram:
    sigma = math.hypot(jitter, laser) / FWHM_PER_SIGMA
    centers = (np.arange(n_bins) + 0.5) * bin_width
    mean = n_bins * bin_width / 2.0
    bins = pedestal + amplitude * np.exp(-0.5 * ((centers - mean) / sigma) ** 2)
    return TimingHistogram(bin_width=bin_width, bins=tuple(bins), laser_fwhm=laser)


@pytest.fixture
def dark_record() -> MeasurementRecord:
    return MeasurementRecord(counts=1000, integration_time=100.0, f_rep=1e4)


class TestMeasurementRecord:
    """Test suite for MeasurementRecord validation."""

    def test_probability(self, dark_record: MeasurementRecord) -> None:
        assert dark_record.n_gates == pytest.approx(1e6)
        assert dark_record.probability == pytest.approx(1e-3)
        assert dark_record.std_error == pytest.approx(math.sqrt(1000) / 1e6)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"counts": -1, "integration_time": 1.0, "f_rep": 1e4},
            {"counts": 1, "integration_time": 0.0, "f_rep": 1e4},
            {"counts": 1, "integration_time": 1.0, "f_rep": 0.0},
            {"counts": 1, "integration_time": 1.0, "f_rep": 1e4, "shutter_open": True},
        ],
    )
    def test_validation(self, kwargs: dict[str, object]) -> None:
        with pytest.raises(InvalidArgumentError):
            MeasurementRecord(**kwargs)  # type: ignore[arg-type]


class TestDarkAndEfficiency:
    """Test suite for dark probability and detection efficiency."""

    def test_dark_probability(self, dark_record: MeasurementRecord) -> None:
        est = dark_probability(dark_record)
        assert est.value == pytest.approx(1e-3)
        assert est.std_error == pytest.approx(3.162e-5, rel=1e-3)
        assert est.flags == ()

    def test_dark_zero_counts(self) -> None:
        est = dark_probability(MeasurementRecord(0, 100.0, 1e4))
        assert est.value == 0.0
        assert "zero-counts" in est.flags
        assert est.upper_bound == pytest.approx(2.9957e-6, rel=1e-4)

    def test_dark_needs_closed_shutter(self) -> None:
        with pytest.raises(InvalidArgumentError):
            dark_probability(MeasurementRecord(10, 1.0, 1e4, True, 0.1))

    def test_efficiency(self, dark_record: MeasurementRecord) -> None:
        light = MeasurementRecord(10940, 100.0, 1e4, True, 0.1)
        est = detection_efficiency(light, dark_record)
        assert est.value == pytest.approx(0.1, rel=1e-3)
        assert est.std_error == pytest.approx(1.1e-3, rel=0.02)
        assert est.flags == ()

    def test_efficiency_no_signal(
        self, dark_record: MeasurementRecord, caplog: pytest.LogCaptureFixture
    ) -> None:
        light = MeasurementRecord(500, 100.0, 1e4, True, 0.1)
        with caplog.at_level(logging.WARNING):
            est = detection_efficiency(light, dark_record)
        assert est.value == 0.0
        assert "no-signal" in est.flags
        assert est.raw_value is not None and est.raw_value < 0.0
        assert "efficiency reported as 0" in caplog.text

    def test_efficiency_frequency_mismatch(
        self, dark_record: MeasurementRecord
    ) -> None:
        light = MeasurementRecord(10940, 100.0, 2e4, True, 0.1)
        with pytest.raises(InvalidArgumentError, match="frequencies"):
            detection_efficiency(light, dark_record)

    def test_efficiency_saturated_dark(self) -> None:
        light = MeasurementRecord(5000, 100.0, 1e4, True, 0.1)
        dark = MeasurementRecord(1_000_000, 100.0, 1e4)
        with pytest.raises(InvalidArgumentError, match="dark count probability"):
            detection_efficiency(light, dark)

    def test_dark_error_scales_with_counts(self) -> None:
        short = dark_probability(MeasurementRecord(1000, 100.0, 1e4))
        long = dark_probability(MeasurementRecord(100_000, 10_000.0, 1e4))
        assert long.value == pytest.approx(short.value)
        assert short.std_error / long.std_error == pytest.approx(10.0)

    def test_efficiency_error_scales_with_counts(self) -> None:
        short = detection_efficiency(
            MeasurementRecord(10940, 100.0, 1e4, True, 0.1),
            MeasurementRecord(1000, 100.0, 1e4),
        )
        long = detection_efficiency(
            MeasurementRecord(1_094_000, 10_000.0, 1e4, True, 0.1),
            MeasurementRecord(100_000, 10_000.0, 1e4),
        )
        assert long.value == pytest.approx(short.value)
        assert short.std_error / long.std_error == pytest.approx(10.0)

    def test_efficiency_shutter_states(
        self, dark_record: MeasurementRecord
    ) -> None:
        with pytest.raises(InvalidArgumentError):
            detection_efficiency(dark_record, dark_record)


class TestAfterpulse:
    """Test suite for the two-gate afterpulse reduction."""

    def test_point(self) -> None:
        est = afterpulse_point(DoubleGateRecord(10000, 150, 1e-6, 5e-3))
        assert est.value == pytest.approx(0.01)
        assert est.std_error == pytest.approx(
            math.sqrt(0.015 * 0.985 / 10000)
        )
        assert est.dt == 1e-6

    def test_below_dark_floor(self) -> None:
        est = afterpulse_point(DoubleGateRecord(10000, 40, 1e-6, 5e-3))
        assert est.value == 0.0
        assert est.raw_value == pytest.approx(-1e-3)
        assert "below-dark-floor" in est.flags

    def test_no_first_gate_counts(self) -> None:
        with pytest.raises(InvalidArgumentError):
            afterpulse_point(DoubleGateRecord(0, 0, 1e-6, 5e-3))

    def test_coincidences_bounded(self) -> None:
        with pytest.raises(InvalidArgumentError):
            DoubleGateRecord(10, 11, 1e-6, 5e-3)

    def test_curve_sorted(self) -> None:
        curve = afterpulse_curve(
            [
                DoubleGateRecord(10000, 60, 5e-6, 5e-3),
                DoubleGateRecord(10000, 150, 1e-6, 5e-3),
            ]
        )
        assert [e.dt for e in curve] == [1e-6, 5e-6]


class TestJitter:
    """Test suite for the timing histogram reduction."""

    def test_deconvolve(self) -> None:
        assert deconvolve_jitter(570e-12, 350e-12) == pytest.approx(
            449.889e-12, rel=1e-5
        )

    def test_deconvolve_below_laser(self) -> None:
        with pytest.raises(InvalidDataError):
            deconvolve_jitter(300e-12, 350e-12)

    def test_recovers_jitter(self) -> None:
        est = jitter_fwhm(gaussian_histogram())
        assert est.value == pytest.approx(450e-12, abs=5e-12)
        assert est.std_error == pytest.approx(5e-12)
        assert est.raw_value == pytest.approx(math.hypot(450e-12, 350e-12), abs=5e-12)

    def test_pedestal_does_not_bias(self) -> None:
        low = jitter_fwhm(gaussian_histogram(pedestal=0.0)).value
        high = jitter_fwhm(gaussian_histogram(pedestal=500.0)).value
        assert high == pytest.approx(low, abs=2e-12)

    def test_flat_histogram(self) -> None:
        with pytest.raises(NoPeakError):
            jitter_fwhm(TimingHistogram(10e-12, (20.0,) * 500))

    def test_all_zero_histogram(self) -> None:
        with pytest.raises(InvalidDataError):
            TimingHistogram(10e-12, (0.0,) * 10)

    def test_peak_at_edge(self) -> None:
        bins = [1000.0, 600.0] + [10.0] * 200
        with pytest.raises(NoPeakError):
            jitter_fwhm(TimingHistogram(10e-12, tuple(bins)))


class TestPlanning:
    """Test suite for integration-time planning."""

    @pytest.mark.parametrize("rel_err, counts", [(0.1, 100), (0.01, 10000), (0.3, 12)])
    def test_counts_needed(self, rel_err: float, counts: int) -> None:
        assert counts_needed(rel_err) == counts

    def test_integration_time(self) -> None:
        assert integration_time_for(0.1, 1e-3, 1e4) == pytest.approx(10.0)

    @pytest.mark.parametrize("rel_err", [0.0, 1.0])
    def test_counts_needed_range(self, rel_err: float) -> None:
        with pytest.raises(InvalidArgumentError):
            counts_needed(rel_err)


class TestFiles:
    """Test suite for the CSV readers and the report writer."""

    def test_read_measurements(self, tmp_path: Path) -> None:
        path = tmp_path / "counts.csv"
        path.write_text(
            "shutter,counts,integration_time_s,f_rep_hz,mu_bar\n"
            "closed,1000,100,10000,\n"
            "open,10940,100,10000,0.1\n"
        )
        dark, light = read_measurements(path)
        assert not dark.shutter_open
        assert dark.mean_photons_per_pulse is None
        assert light.shutter_open
        assert light.mean_photons_per_pulse == 0.1

    def test_read_measurements_bad_shutter(self, tmp_path: Path) -> None:
        path = tmp_path / "counts.csv"
        path.write_text(
            "shutter,counts,integration_time_s,f_rep_hz,mu_bar\n"
            "ajar,1,1,1,\n"
        )
        with pytest.raises(InvalidDataError, match="shutter"):
            read_measurements(path)

    def test_read_missing_columns(self, tmp_path: Path) -> None:
        path = tmp_path / "counts.csv"
        path.write_text("shutter,counts\nclosed,1\n")
        with pytest.raises(InvalidDataError, match="missing columns"):
            read_measurements(path)

    def test_read_double_gate(self, tmp_path: Path) -> None:
        path = tmp_path / "ap.csv"
        path.write_text("dt_us,n_first,n_coinc,dark_prob\n1,10000,150,0.005\n")
        (record,) = read_double_gate(path)
        assert record.dt == pytest.approx(1e-6)
        assert record.n_coincidences == 150

    def test_read_histogram(self, tmp_path: Path) -> None:
        path = tmp_path / "hist.csv"
        path.write_text("bin_start_ps,counts\n0,1\n10,5\n20,1\n")
        hist = read_histogram(path, 300e-12)
        assert hist.bin_width == pytest.approx(10e-12)
        assert hist.laser_fwhm == 300e-12
        assert hist.bins == (1.0, 5.0, 1.0)

    def test_read_histogram_uneven(self, tmp_path: Path) -> None:
        path = tmp_path / "hist.csv"
        path.write_text("bin_start_ps,counts\n0,1\n10,5\n25,1\n")
        with pytest.raises(InvalidDataError, match="equally spaced"):
            read_histogram(path)

    def test_report_round_trip(self, tmp_path: Path) -> None:
        estimates = [
            Estimate("dark_probability", 1e-3, 3e-5),
            Estimate(
                "afterpulse_probability",
                0.0,
                1e-4,
                flags=("below-dark-floor",),
                dt=1e-6,
            ),
        ]
        path = tmp_path / "report.csv"
        write_report(estimates, path)
        assert path.read_text().splitlines()[0] == ",".join(REPORT_COLUMNS)
        dark, ap = read_report(path)
        assert dark.dt is None and dark.flags == ()
        assert ap.flags == ("below-dark-floor",)
        assert ap.dt == pytest.approx(1e-6)


class TestCharacterizeAPI:
    """Test suite for CharacterizeAPI."""

    @pytest.fixture
    def api(self) -> CharacterizeAPI:
        return SpadLinkToolkit().characterize

    def test_efficiency_pairs_records(
        self, api: CharacterizeAPI, dark_record: MeasurementRecord
    ) -> None:
        light = MeasurementRecord(10940, 100.0, 1e4, True, 0.1)
        (est,) = api.efficiency([dark_record, light])
        assert est.value == pytest.approx(0.1, rel=1e-3)

    def test_efficiency_needs_dark(self, api: CharacterizeAPI) -> None:
        light = MeasurementRecord(10940, 100.0, 1e4, True, 0.1)
        with pytest.raises(InvalidDataError):
            api.efficiency([light])

    def test_dark(self, api: CharacterizeAPI, dark_record: MeasurementRecord) -> None:
        (est,) = api.dark([dark_record])
        assert est.value == pytest.approx(1e-3)

    def test_integration_time_uses_f_rep(self, api: CharacterizeAPI) -> None:
        assert api.integration_time(0.1, 1e-4) == pytest.approx(1.0)
