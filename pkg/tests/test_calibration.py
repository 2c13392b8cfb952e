"""
Tests for the calibration module: afterpulse fits to points and to
constraint targets, and dark-count exponential fits.
"""

import math
from pathlib import Path
from typing import TYPE_CHECKING
from unittest.mock import Mock

import numpy as np
import pytest

from spad_link_module import SpadLinkToolkit
from spad_link_module.base import (
    FitFailureError,
    InfeasibleTargetsError,
    InvalidArgumentError,
    InvalidDataError,
)
from spad_link_module.calibration import (
    AfterpulseDataset,
    CalibrationAPI,
    ConstraintTargets,
    check_targets,
    dataset_from_estimates,
    fit_afterpulse,
    fit_dark_exponential,
    fit_dark_joint,
    fit_to_constraints,
    published_targets,
    read_dark_series,
)
from spad_link_module.characterize import Estimate
from spad_link_module.detector_model import (
    AfterpulseModel,
    afterpulse_probability,
    cumulative_afterpulse,
    epitaxx_afterpulse,
    min_skip_gates,
)

if TYPE_CHECKING:
    from pytest_mock.plugin import MockerFixture


def synthetic_dataset(
    model: AfterpulseModel,
    n_points: int = 20,
    rel_err: float = 0.05,
    noise: float = 0.0,
    seed: int = 0,
) -> AfterpulseDataset:
    delays = np.geomspace(50e-9, 50e-6, n_points)
    values = afterpulse_probability(model, delays)
    if noise:
        rng = np.random.default_rng(seed)
        values = values * (1.0 + noise * rng.standard_normal(n_points))
    return AfterpulseDataset(
        points=tuple(
            (float(dt), float(p), float(p * rel_err))
            for dt, p in zip(delays, values, strict=True)
        )
    )


def dark_points(p10: float, slope: float = 30.0) -> list[tuple[float, float]]:
    return [
        (eta, p10 * math.exp(slope * (eta - 0.1)))
        for eta in (0.05, 0.10, 0.15, 0.20, 0.25)
    ]


class TestAfterpulseDataset:
    """Test suite for AfterpulseDataset."""

    def test_sorted(self) -> None:
        data = AfterpulseDataset(((2e-6, 0.001, None), (1e-6, 0.002, None)))
        assert data.dt.tolist() == [1e-6, 2e-6]
        assert data.values.tolist() == [0.002, 0.001]

    def test_duplicate_delays(self) -> None:
        with pytest.raises(InvalidArgumentError, match="distinct"):
            AfterpulseDataset(((1e-6, 0.002, None), (1e-6, 0.001, None)))

    @pytest.mark.parametrize(
        "point", [(0.0, 0.1, None), (1e-6, 1.5, None), (1e-6, 0.1, -1.0)]
    )
    def test_point_validation(
        self, point: tuple[float, float, float | None]
    ) -> None:
        with pytest.raises(InvalidArgumentError):
            AfterpulseDataset((point,))

    def test_weights(self) -> None:
        weighted = AfterpulseDataset(((1e-6, 0.002, 1e-4), (2e-6, 0.001, 2e-4)))
        assert weighted.weights().tolist() == pytest.approx([1e4, 5e3])
        unweighted = AfterpulseDataset(((1e-6, 0.002, 1e-4), (2e-6, 0.001, None)))
        assert unweighted.weights().tolist() == [1.0, 1.0]

    def test_from_estimates(self) -> None:
        data = dataset_from_estimates(
            [
                Estimate("dark_probability", 1e-5, 1e-6),
                Estimate("afterpulse_probability", 0.002, 1e-4, dt=1e-6),
                Estimate("afterpulse_probability", 0.001, 0.0, dt=2e-6),
            ]
        )
        assert data.points == ((1e-6, 0.002, 1e-4), (2e-6, 0.001, None))

    def test_from_estimates_without_points(self) -> None:
        with pytest.raises(InvalidDataError):
            dataset_from_estimates([Estimate("dark_probability", 1e-5, 1e-6)])


class TestFitAfterpulse:
    """Test suite for the weighted multi-exponential fit."""

    @pytest.fixture
    def data(self) -> AfterpulseDataset:
        return synthetic_dataset(epitaxx_afterpulse())

    def test_recovers_curve(self, data: AfterpulseDataset) -> None:
        fit = fit_afterpulse(data, 3)
        fitted = afterpulse_probability(fit.model, data.dt)
        assert fitted == pytest.approx(data.values, rel=0.02)
        assert fit.relative_chi2 < 1e-10
        assert fit.dof == 14
        assert fit.converged
        assert fit.starts == 24
        assert len(fit.start_chi2) == 24

    def test_recovers_parameters(self, data: AfterpulseDataset) -> None:
        truth = epitaxx_afterpulse()
        model = fit_afterpulse(data, 3).model
        assert model.amplitudes == pytest.approx(truth.amplitudes, rel=1e-3)
        assert model.lifetimes == pytest.approx(truth.lifetimes, rel=1e-3)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_recovers_parameters_from_noisy_points(self, seed: int) -> None:
        """One percent scatter moves amplitudes < 10 % and lifetimes < 15 %."""
        truth = epitaxx_afterpulse()
        data = synthetic_dataset(
            truth, n_points=40, rel_err=0.01, noise=0.01, seed=seed
        )
        model = fit_afterpulse(data, 3).model
        assert model.amplitudes == pytest.approx(truth.amplitudes, rel=0.10)
        assert model.lifetimes == pytest.approx(truth.lifetimes, rel=0.15)

    def test_point_order_irrelevant(self, data: AfterpulseDataset) -> None:
        reversed_data = AfterpulseDataset(tuple(reversed(data.points)))
        assert fit_afterpulse(reversed_data, 2) == fit_afterpulse(data, 2)

    def test_lifetimes_ascending(self, data: AfterpulseDataset) -> None:
        lifetimes = fit_afterpulse(data, 3).model.lifetimes
        assert np.all(np.diff(lifetimes) >= 0)

    def test_more_terms_fit_better(self, data: AfterpulseDataset) -> None:
        one = fit_afterpulse(data, 1)
        three = fit_afterpulse(data, 3)
        assert three.chi2 <= one.chi2
        assert one.reduced_chi2 > 1.0

    def test_reproducible(self, data: AfterpulseDataset) -> None:
        assert fit_afterpulse(data, 2, seed=3) == fit_afterpulse(data, 2, seed=3)

    def test_too_few_points(self) -> None:
        data = synthetic_dataset(epitaxx_afterpulse(), n_points=5)
        with pytest.raises(InvalidArgumentError, match="at least 6"):
            fit_afterpulse(data, 3)

    def test_reduced_chi2_without_dof(self) -> None:
        data = synthetic_dataset(epitaxx_afterpulse(), n_points=2)
        assert math.isnan(fit_afterpulse(data, 1).reduced_chi2)

    def test_no_start_converges(
        self, data: AfterpulseDataset, mocker: "MockerFixture"
    ) -> None:
        mocker.patch(
            "spad_link_module.calibration.least_squares",
            return_value=Mock(x=np.log([1e-7, 1e-6, 1e-5]), status=0),
        )
        with pytest.raises(FitFailureError) as excinfo:
            fit_afterpulse(data, 3)
        assert excinfo.value.best is not None
        assert not excinfo.value.best.converged


class TestConstraintTargets:
    """Test suite for target checking and the constrained fit."""

    def test_builtin_curve_meets_targets(self) -> None:
        assert check_targets(epitaxx_afterpulse(), published_targets()) == []

    def test_violations_listed(self) -> None:
        model = AfterpulseModel.from_pairs([(0.05, 1e-6)])
        violations = check_targets(model, published_targets())
        assert any("cumulative" in v for v in violations)
        assert any("skip" in v for v in violations)

    def test_holdoff_ceiling(self) -> None:
        model = epitaxx_afterpulse()
        left = cumulative_afterpulse(model, 1e6, 2)
        assert check_targets(
            model, ConstraintTargets(holdoff_ceilings=((1e6, 2, left * 1.01),))
        ) == []
        (violation,) = check_targets(
            model, ConstraintTargets(holdoff_ceilings=((1e6, 2, left * 0.99),))
        )
        assert "after 2 gates" in violation

    def test_builtin_curve_leaves_margin_after_hold_off(self) -> None:
        assert cumulative_afterpulse(epitaxx_afterpulse(), 1e6, 2) <= 0.0085

    def test_horizon_bound(self) -> None:
        model = AfterpulseModel.from_pairs([(0.01, 50e-6)])
        targets = ConstraintTargets(horizon_bound=(100e-6, 1e-4))
        (violation,) = check_targets(model, targets)
        assert "exceeds" in violation

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"short_dt_value": (0.0, 0.01)},
            {"cumulative_at": ((0.0, 0.01),)},
            {"skip_targets": ((1e6, 0.0, 2),)},
            {"horizon_bound": (1e-4, 1.0)},
            {"holdoff_ceilings": ((1e6, -1, 0.01),)},
            {"holdoff_ceilings": ((1e6, 2, 0.0),)},
        ],
    )
    def test_validation(self, kwargs: dict[str, object]) -> None:
        with pytest.raises(InvalidArgumentError):
            ConstraintTargets(**kwargs)  # type: ignore[arg-type]

    def test_infeasible(self) -> None:
        targets = ConstraintTargets(short_dt_value=(100e-9, 0.5))
        with pytest.raises(InfeasibleTargetsError) as excinfo:
            fit_to_constraints(targets, n_terms=1, maxiter=30)
        assert excinfo.value.violations
        assert isinstance(excinfo.value.model, AfterpulseModel)

    @pytest.mark.slow
    def test_fit_meets_published_targets(self) -> None:
        model = fit_to_constraints(published_targets())
        assert check_targets(model, published_targets()) == []
        assert min_skip_gates(model, 1e6) == 2
        assert min_skip_gates(model, 2e6) == 14
        assert cumulative_afterpulse(model, 1e6, 2) <= 0.0085
        assert np.all(np.diff(model.lifetimes) >= 0)


class TestDarkFits:
    """Test suite for dark count fits."""

    def test_single_series(self) -> None:
        model = fit_dark_exponential(dark_points(2.8e-5))
        assert model.p10 == pytest.approx(2.8e-5, rel=1e-9)
        assert model.slope == pytest.approx(30.0, rel=1e-9)

    def test_joint_shares_slope(self) -> None:
        models = fit_dark_joint(
            {"-60": dark_points(2.8e-5), "-40": dark_points(6e-5)}
        )
        assert models["-60"].slope == pytest.approx(30.0)
        assert models["-40"].slope == models["-60"].slope
        assert models["-40"].p10 == pytest.approx(6e-5)

    def test_joint_averages_slopes(self) -> None:
        models = fit_dark_joint(
            {"a": dark_points(1e-5, 20.0), "b": dark_points(1e-5, 40.0)}
        )
        assert models["a"].slope == pytest.approx(30.0)

    def test_non_positive_probability(self) -> None:
        with pytest.raises(InvalidDataError):
            fit_dark_exponential([(0.1, 0.0), (0.2, 1e-4)])

    def test_decreasing_probability(self) -> None:
        with pytest.raises(InvalidDataError, match="slope"):
            fit_dark_exponential([(0.1, 1e-4), (0.2, 1e-5)])

    def test_single_efficiency(self) -> None:
        with pytest.raises(InvalidArgumentError):
            fit_dark_exponential([(0.1, 1e-4), (0.1, 2e-4)])

    def test_read_dark_series(self, tmp_path: Path) -> None:
        path = tmp_path / "dark.csv"
        path.write_text(
            "efficiency,dark_prob,series\n0.1,2.8e-5,a\n0.2,5.6e-4,a\n"
            "0.1,6e-5,b\n0.2,1.2e-3,b\n"
        )
        series = read_dark_series(path)
        assert list(series) == ["a", "b"]
        assert series["a"] == [(0.1, 2.8e-5), (0.2, 5.6e-4)]

    def test_read_dark_series_without_label(self, tmp_path: Path) -> None:
        path = tmp_path / "dark.csv"
        path.write_text("efficiency,dark_prob\n0.1,2.8e-5\n0.2,5.6e-4\n")
        assert list(read_dark_series(path)) == ["default"]

    def test_read_dark_series_missing_column(self, tmp_path: Path) -> None:
        path = tmp_path / "dark.csv"
        path.write_text("efficiency\n0.1\n")
        with pytest.raises(InvalidDataError, match="dark_prob"):
            read_dark_series(path)


class TestCalibrationAPI:
    """Test suite for CalibrationAPI."""

    @pytest.fixture
    def api(self) -> CalibrationAPI:
        return SpadLinkToolkit().calibration

    def test_afterpulse_from_estimates(self, api: CalibrationAPI) -> None:
        data = synthetic_dataset(epitaxx_afterpulse(), n_points=8)
        estimates = [
            Estimate("afterpulse_probability", p, se or 0.0, dt=dt)
            for dt, p, se in data.points
        ]
        fit = api.afterpulse(estimates, n_terms=2)
        assert fit.dof == 4

    def test_dark_single_and_joint(self, api: CalibrationAPI) -> None:
        single = api.dark({"only": dark_points(2.8e-5)})
        assert list(single) == ["only"]
        joint = api.dark({"a": dark_points(1e-5), "b": dark_points(2e-5)})
        assert joint["a"].slope == joint["b"].slope
