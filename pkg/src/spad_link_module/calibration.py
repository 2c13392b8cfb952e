"""
This module provides fits of the detector model families to data: the
multi-exponential afterpulse decay, fitted either to measured points or to a
set of published constraint values, and the exponential growth of the dark
count probability with efficiency.
"""

from __future__ import annotations

import logging
import math
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.optimize import differential_evolution, least_squares, nnls

from .base import (
    BaseAPI,
    FitFailureError,
    InfeasibleTargetsError,
    InvalidDataError,
    require,
)
from .characterize import Estimate
from .detector_model import (
    DEFAULT_HORIZON,
    REFERENCE_EFFICIENCY,
    AfterpulseModel,
    AfterpulseTerm,
    DarkCountModel,
    cumulative_afterpulse,
    min_skip_gates,
)

__all__ = [
    "DARK_SERIES_COLUMNS",
    "LIFETIME_RANGE",
    "AfterpulseDataset",
    "ConstraintTargets",
    "FitResult",
    "fit_afterpulse",
    "fit_to_constraints",
    "check_targets",
    "published_targets",
    "fit_dark_exponential",
    "fit_dark_joint",
    "dataset_from_estimates",
    "read_dark_series",
    "CalibrationAPI",
]

logger = logging.getLogger(__name__)

LIFETIME_RANGE = (10e-9, 100e-6)
"""Lifetimes of the multistart grid, drawn log-uniformly, in seconds."""

STARTS_PER_TERM = 8

# lifetime search bounds, wider than the start grid
_LOG_TAU_BOUNDS = (math.log(1e-9), math.log(1e-3))

# amplitude snapped to 0 below this value
AMPLITUDE_FLOOR = 1e-9

DARK_SERIES_COLUMNS = ["efficiency", "dark_prob"]


@dataclass(frozen=True)
class AfterpulseDataset:
    """
    Measured afterpulse points ``(dt, p_ap, std_error)``; ``std_error`` may
    be None. Points are stored sorted by delay.
    """

    points: tuple[tuple[float, float, float | None], ...]

    def __post_init__(self) -> None:
        points = tuple(
            sorted(
                (
                    (float(dt), float(p), None if se is None else float(se))
                    for dt, p, se in self.points
                ),
                key=lambda point: point[0],
            )
        )
        object.__setattr__(self, "points", points)
        for dt, p, se in points:
            require(dt > 0.0, f"dt must be > 0, got {dt!r}", "points", dt)
            require(
                0.0 <= p <= 1.0, f"p_ap must be in [0, 1], got {p!r}", "points", p
            )
            require(se is None or se >= 0.0, "std_error must be >= 0", "points")
        delays = [dt for dt, _, _ in points]
        require(
            all(b > a for a, b in zip(delays, delays[1:], strict=False)),
            "delays must be distinct",
            "points",
        )

    @property
    def dt(self) -> NDArray[np.float64]:
        return np.array([p[0] for p in self.points])

    @property
    def values(self) -> NDArray[np.float64]:
        return np.array([p[1] for p in self.points])

    def weights(self) -> NDArray[np.float64]:
        """Inverse standard errors when every point has one, else ones."""
        errors = [p[2] for p in self.points]
        if all(se is not None and se > 0.0 for se in errors):
            return 1.0 / np.array(errors, dtype=float)
        return np.ones(len(self.points))


@dataclass(frozen=True)
class ConstraintTargets:
    """
    Published properties an afterpulse model must reproduce.

    Attributes:
        short_dt_value: ``(dt, p)``; p_ap(dt) within ``short_tolerance``
            relative.
        cumulative_at: ``(f_rep, sigma)`` pairs; cumulated probability with no
            hold-off within ``cumulative_tolerance`` absolute.
        skip_targets: ``(f_rep, budget, n)``; min_skip_gates must equal n.
        horizon_bound: ``(t, max_p)``; the decay curve, without the horizon
            cut, must not exceed ``max_p`` at ``t`` and beyond.
        holdoff_ceilings: ``(f_rep, n_skip, max_sigma)``; the cumulated
            probability left after a hold-off of ``n_skip`` gates must not
            exceed ``max_sigma``.
    """

    short_dt_value: tuple[float, float] | None = None
    cumulative_at: tuple[tuple[float, float], ...] = ()
    skip_targets: tuple[tuple[float, float, int], ...] = ()
    holdoff_ceilings: tuple[tuple[float, int, float], ...] = ()
    horizon_bound: tuple[float, float] | None = None
    short_tolerance: float = 0.20
    cumulative_tolerance: float = 0.001

    def __post_init__(self) -> None:
        object.__setattr__(self, "cumulative_at", tuple(self.cumulative_at))
        object.__setattr__(self, "skip_targets", tuple(self.skip_targets))
        object.__setattr__(
            self, "holdoff_ceilings", tuple(self.holdoff_ceilings)
        )
        if self.short_dt_value is not None:
            dt, p = self.short_dt_value
            require(dt > 0.0 and 0.0 < p < 1.0, "bad short_dt_value", "short_dt_value")
        for f_rep, sigma in self.cumulative_at:
            require(
                f_rep > 0.0 and 0.0 <= sigma < 1.0,
                f"bad cumulative target ({f_rep!r}, {sigma!r})",
                "cumulative_at",
            )
        for f_rep, budget, n in self.skip_targets:
            require(
                f_rep > 0.0 and 0.0 < budget < 1.0 and n >= 0,
                f"bad skip target ({f_rep!r}, {budget!r}, {n!r})",
                "skip_targets",
            )
        for f_rep, n, max_sigma in self.holdoff_ceilings:
            require(
                f_rep > 0.0 and n >= 0 and 0.0 < max_sigma < 1.0,
                f"bad hold-off ceiling ({f_rep!r}, {n!r}, {max_sigma!r})",
                "holdoff_ceilings",
            )
        if self.horizon_bound is not None:
            t, max_p = self.horizon_bound
            require(t > 0.0 and 0.0 < max_p < 1.0, "bad horizon_bound", "horizon_bound")


@dataclass(frozen=True)
class FitResult:
    """Fitted afterpulse model with goodness-of-fit diagnostics."""

    model: AfterpulseModel
    chi2: float
    dof: int
    relative_chi2: float
    starts: int
    converged: bool = True
    start_chi2: tuple[float, ...] = field(default=())

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan


def published_targets() -> ConstraintTargets:
    """
    Published afterpulse properties of the Epitaxx diode with short gates:
    p_ap(100 ns) about 1e-2, 1.4 % cumulated at 1 MHz, hold-offs of 2 gates
    at 1 MHz and 14 gates at 2 MHz for a 1 % budget, and negligible
    afterpulsing 100 us after an avalanche.

    The 1 MHz hold-off must also leave at most 0.85 %, so that afterpulses
    following dark counts and other afterpulses still stay within the 1 %
    budget.
    """
    return ConstraintTargets(
        short_dt_value=(100e-9, 1e-2),
        cumulative_at=((1e6, 0.014),),
        skip_targets=((1e6, 0.01, 2), (2e6, 0.01, 14)),
        holdoff_ceilings=((1e6, 2, 0.0085),),
        horizon_bound=(100e-6, 1e-4),
    )


def _design(dt: NDArray[np.float64], lifetimes: NDArray[np.float64]) -> NDArray:
    return np.exp(-np.divide.outer(dt, lifetimes))


def _decay_at(model: AfterpulseModel, dt: float) -> float:
    """Sum of the exponentials at dt, ignoring the horizon cut."""
    if not model.terms:
        return 0.0
    return float(_design(np.array([dt]), model.lifetimes)[0] @ model.amplitudes)


def fit_afterpulse(
    data: AfterpulseDataset,
    n_terms: int = 3,
    *,
    starts_per_term: int = STARTS_PER_TERM,
    seed: int = 0,
    horizon: float = DEFAULT_HORIZON,
) -> FitResult:
    """
    Weighted least-squares fit of ``sum(a_i * exp(-dt / tau_i))``.

    For fixed lifetimes the non-negative amplitudes are solved exactly with
    NNLS; the log-lifetimes are then optimized from ``starts_per_term *
    n_terms`` starts drawn log-uniformly over 10 ns to 100 us. The best
    start is returned with lifetimes in ascending order.

    Args:
        data: Points to fit; weighted by inverse variance when every point
            has a standard error.
        n_terms: Number of exponential terms.
        starts_per_term: Multistart budget per term.
        seed: Seed of the start generator.
        horizon: Horizon of the returned model.

    Returns:
        The best fit and its diagnostics.

    Raises:
        InvalidArgumentError: If ``n_terms < 1`` or there are fewer than
            ``2 * n_terms`` points.
        FitFailureError: If no start converged; ``best`` holds the best
            result found.
    """
    require(n_terms >= 1, "n_terms must be >= 1", "n_terms", n_terms)
    require(
        len(data.points) >= 2 * n_terms,
        f"need at least {2 * n_terms} points for {n_terms} terms, "
        f"got {len(data.points)}",
        "data",
    )
    dt = data.dt
    w = data.weights()
    target = w * data.values
    scale = float(target @ target)

    def solve(log_tau: NDArray[np.float64]) -> tuple[NDArray, NDArray]:
        design = w[:, None] * _design(dt, np.exp(log_tau))
        amplitudes, _ = nnls(design, target)
        return amplitudes, design @ amplitudes - target

    rng = np.random.default_rng(seed)
    low, high = (math.log(t) for t in LIFETIME_RANGE)
    n_starts = starts_per_term * n_terms
    best: tuple[float, NDArray, NDArray, bool] | None = None
    start_chi2 = []
    any_converged = False
    for _ in range(n_starts):
        x0 = np.sort(rng.uniform(low, high, n_terms))
        result = least_squares(
            lambda x: solve(x)[1],
            x0,
            bounds=_LOG_TAU_BOUNDS,
            xtol=1e-12,
            ftol=1e-12,
            gtol=1e-12,
            max_nfev=1000,
        )
        any_converged |= result.status > 0
        amplitudes, residual = solve(result.x)
        chi2_value = float(residual @ residual)
        start_chi2.append(chi2_value)
        if best is None or chi2_value < best[0]:
            best = (chi2_value, result.x, amplitudes, result.status > 0)
    assert best is not None

    chi2_value, log_tau, amplitudes, converged = best
    order = np.argsort(log_tau)
    amplitudes = np.where(amplitudes < AMPLITUDE_FLOOR, 0.0, amplitudes)
    model = AfterpulseModel(
        terms=tuple(
            AfterpulseTerm(float(amplitudes[i]), float(np.exp(log_tau[i])))
            for i in order
        ),
        horizon=horizon,
    )
    fit = FitResult(
        model=model,
        chi2=chi2_value,
        dof=len(data.points) - 2 * n_terms,
        relative_chi2=chi2_value / scale if scale > 0.0 else 0.0,
        starts=n_starts,
        converged=converged,
        start_chi2=tuple(start_chi2),
    )
    logger.info(
        f"Afterpulse fit with {n_terms} terms: chi2 {fit.chi2:.4g}, "
        f"dof {fit.dof}, best of {n_starts} starts"
    )
    if not any_converged:
        raise FitFailureError(
            f"afterpulse fit did not converge in {n_starts} starts", best=fit
        )
    return fit


class _ConstraintObjective:
    """Penalty of a candidate model against ConstraintTargets."""

    def __init__(self, targets: ConstraintTargets, n_terms: int):
        self.targets = targets
        self.n_terms = n_terms
        self._gates: dict[float, NDArray[np.float64]] = {}
        rates = {f for f, _ in targets.cumulative_at}
        rates |= {f for f, _, _ in targets.skip_targets}
        rates |= {f for f, _, _ in targets.holdoff_ceilings}
        for f_rep in rates:
            last = int(math.ceil(DEFAULT_HORIZON * f_rep))
            delays = np.arange(1, last + 1) / f_rep
            self._gates[f_rep] = delays[delays < DEFAULT_HORIZON]

    def split(
        self, x: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        amplitudes = 10.0 ** x[: self.n_terms]
        amplitudes = np.where(amplitudes < AMPLITUDE_FLOOR, 0.0, amplitudes)
        return amplitudes, 10.0 ** x[self.n_terms :]

    def __call__(self, x: NDArray[np.float64]) -> float:
        amplitudes, lifetimes = self.split(x)
        t = self.targets

        def curve(delays: NDArray[np.float64]) -> NDArray[np.float64]:
            return _design(delays, lifetimes) @ amplitudes

        penalty = 0.0
        if t.short_dt_value is not None:
            dt, p = t.short_dt_value
            value = float(curve(np.array([dt]))[0])
            penalty += math.log(max(value, 1e-300) / p) ** 2
        for f_rep, sigma in t.cumulative_at:
            total = float(curve(self._gates[f_rep]).sum())
            penalty += ((total - sigma) / t.cumulative_tolerance) ** 2
        for f_rep, budget, n in t.skip_targets:
            terms = curve(self._gates[f_rep])
            at_n = float(terms[n:].sum())
            penalty += (max(0.0, at_n - 0.995 * budget) / budget * 100.0) ** 2
            if n > 0:
                before = float(terms[n - 1 :].sum())
                penalty += (
                    max(0.0, 1.005 * budget - before) / budget * 100.0
                ) ** 2
        for f_rep, n, max_sigma in t.holdoff_ceilings:
            left = float(curve(self._gates[f_rep])[n:].sum())
            penalty += (
                max(0.0, left - 0.995 * max_sigma) / max_sigma * 100.0
            ) ** 2
        if t.horizon_bound is not None:
            at, max_p = t.horizon_bound
            value = float(curve(np.array([at]))[0])
            penalty += (max(0.0, value - max_p) / max_p * 100.0) ** 2
        return penalty


def check_targets(model: AfterpulseModel, targets: ConstraintTargets) -> list[str]:
    """
    Evaluate a model against every target.

    Returns:
        A description of every violated target; empty when all hold.
    """
    violations = []
    if targets.short_dt_value is not None:
        dt, p = targets.short_dt_value
        value = _decay_at(model, dt)
        if abs(value / p - 1.0) > targets.short_tolerance:
            violations.append(
                f"p_ap({dt:g} s) = {value:.4g}, target {p:g} "
                f"+/- {targets.short_tolerance:.0%}"
            )
    for f_rep, sigma in targets.cumulative_at:
        value = cumulative_afterpulse(model, f_rep)
        if abs(value - sigma) > targets.cumulative_tolerance:
            violations.append(
                f"cumulative at {f_rep:g} Hz = {value:.5g}, target {sigma:g} "
                f"+/- {targets.cumulative_tolerance:g}"
            )
    for f_rep, budget, n in targets.skip_targets:
        value = min_skip_gates(model, f_rep, budget)
        if value != n:
            violations.append(
                f"skip at {f_rep:g} Hz for budget {budget:g} = {value}, "
                f"target {n}"
            )
    for f_rep, n, max_sigma in targets.holdoff_ceilings:
        value = cumulative_afterpulse(model, f_rep, n)
        if value > max_sigma:
            violations.append(
                f"cumulative at {f_rep:g} Hz after {n} gates = {value:.5g}, "
                f"exceeds {max_sigma:g}"
            )
    if targets.horizon_bound is not None:
        at, max_p = targets.horizon_bound
        value = _decay_at(model, at)
        if value > max_p:
            violations.append(
                f"p_ap({at:g} s) = {value:.4g} exceeds bound {max_p:g}"
            )
    return violations


def fit_to_constraints(
    targets: ConstraintTargets,
    n_terms: int = 3,
    *,
    seed: int = 0,
    maxiter: int = 2000,
) -> AfterpulseModel:
    """
    Find an afterpulse model meeting every constraint target.

    A penalty over all targets is minimized by differential evolution over
    log-amplitudes (1e-12 to 0.2) and log-lifetimes (10 ns to 100 us).
    Amplitudes below 1e-9 are set to 0 and lifetimes are returned in
    ascending order. The result is then checked target by target.

    Raises:
        InvalidArgumentError: If ``n_terms < 1``.
        InfeasibleTargetsError: If the best model violates a target; the
            error lists the violations and carries the model.

    Example:
        >>> model = fit_to_constraints(published_targets())  # doctest: +SKIP
        >>> min_skip_gates(model, 1e6)  # doctest: +SKIP
        2
    """
    require(n_terms >= 1, "n_terms must be >= 1", "n_terms", n_terms)
    objective = _ConstraintObjective(targets, n_terms)
    low, high = (math.log10(t) for t in LIFETIME_RANGE)
    bounds = [(-12.0, math.log10(0.2))] * n_terms + [(low, high)] * n_terms
    result = differential_evolution(
        objective,
        bounds,
        seed=seed,
        maxiter=maxiter,
        tol=1e-12,
        polish=True,
    )
    amplitudes, lifetimes = objective.split(result.x)
    order = np.argsort(lifetimes)
    model = AfterpulseModel(
        terms=tuple(
            AfterpulseTerm(float(amplitudes[i]), float(lifetimes[i]))
            for i in order
        )
    )
    violations = check_targets(model, targets)
    logger.info(
        f"Constraint fit: penalty {result.fun:.3g}, "
        f"{len(violations)} violated targets"
    )
    if violations:
        raise InfeasibleTargetsError(
            "no afterpulse model satisfies every target: "
            + "; ".join(violations),
            violations=violations,
            model=model,
        )
    return model


def _dark_arrays(
    points: Sequence[tuple[float, float]],
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    efficiency = np.array([float(e) for e, _ in points])
    p_dc = np.array([float(p) for _, p in points])
    if np.any(p_dc <= 0.0):
        raise InvalidDataError("dark probabilities must be > 0 for a log fit")
    require(
        len(points) >= 2 and np.unique(efficiency).size >= 2,
        "need at least two points at distinct efficiencies",
        "points",
    )
    return efficiency, np.log(p_dc)


def _dark_model(log_p10: float, slope: float) -> DarkCountModel:
    if slope <= 0.0:
        raise InvalidDataError(
            f"dark probability does not grow with efficiency (slope {slope:.3g})"
        )
    return DarkCountModel(p10=math.exp(log_p10), slope=slope)


def fit_dark_exponential(points: Sequence[tuple[float, float]]) -> DarkCountModel:
    """
    Least-squares line through ``log p_dc`` versus efficiency.

    Args:
        points: ``(efficiency, p_dc)`` pairs.

    Returns:
        The model with ``p10`` at efficiency 0.10 and the fitted slope.

    Raises:
        InvalidDataError: For non-positive probabilities or a slope <= 0.
        InvalidArgumentError: For fewer than two distinct efficiencies.
    """
    efficiency, log_p = _dark_arrays(points)
    design = np.column_stack(
        [np.ones_like(efficiency), efficiency - REFERENCE_EFFICIENCY]
    )
    (log_p10, slope), *_ = np.linalg.lstsq(design, log_p, rcond=None)
    return _dark_model(float(log_p10), float(slope))


def fit_dark_joint(
    series: Mapping[str, Sequence[tuple[float, float]]],
) -> dict[str, DarkCountModel]:
    """
    Fit several dark-count series with one shared slope and one ``p10`` per
    series, as for the same diode at two temperatures.

    Returns:
        A model per series label.
    """
    require(bool(series), "no series to fit", "series")
    labels = list(series)
    rows = []
    values = []
    for index, label in enumerate(labels):
        efficiency, log_p = _dark_arrays(series[label])
        block = np.zeros((efficiency.size, len(labels) + 1))
        block[:, index] = 1.0
        block[:, -1] = efficiency - REFERENCE_EFFICIENCY
        rows.append(block)
        values.append(log_p)
    solution, *_ = np.linalg.lstsq(
        np.vstack(rows), np.concatenate(values), rcond=None
    )
    slope = float(solution[-1])
    logger.debug(f"Shared dark slope over {len(labels)} series: {slope:.4g}")
    return {
        label: _dark_model(float(solution[i]), slope)
        for i, label in enumerate(labels)
    }


def dataset_from_estimates(estimates: Iterable[Estimate]) -> AfterpulseDataset:
    """
    Afterpulse points from characterization estimates; other quantities
    are ignored.
    """
    points = [
        (e.dt, e.value, e.std_error or None)
        for e in estimates
        if e.quantity == "afterpulse_probability" and e.dt is not None
    ]
    if not points:
        raise InvalidDataError("no afterpulse points in the estimates")
    return AfterpulseDataset(points=tuple(points))


def read_dark_series(
    path: str | os.PathLike[str],
) -> dict[str, list[tuple[float, float]]]:
    """
    Read ``efficiency, dark_prob`` rows; an optional ``series`` column
    groups them for the joint fit.
    """
    frame = pd.read_csv(path)
    missing = [c for c in DARK_SERIES_COLUMNS if c not in frame.columns]
    if missing:
        raise InvalidDataError(f"{path}: missing columns {missing}")
    if "series" not in frame.columns:
        frame["series"] = "default"
    grouped: dict[str, list[tuple[float, float]]] = {}
    for row in frame.itertuples(index=False):
        grouped.setdefault(str(row.series), []).append(
            (float(row.efficiency), float(row.dark_prob))
        )
    return grouped


class CalibrationAPI(BaseAPI):
    """
    API for fitting detector models.
    """

    def afterpulse(
        self, data: AfterpulseDataset | Iterable[Estimate], n_terms: int = 3
    ) -> FitResult:
        """
        Fit the afterpulse decay to a dataset or to characterization
        estimates.
        """
        if not isinstance(data, AfterpulseDataset):
            data = dataset_from_estimates(data)
        self.logger.debug(
            f"Fitting {n_terms} afterpulse terms to {len(data.points)} points"
        )
        return fit_afterpulse(data, n_terms)

    def constraints(
        self, targets: ConstraintTargets | None = None, n_terms: int = 3
    ) -> AfterpulseModel:
        """Afterpulse model meeting ``targets`` (default: the published set)."""
        return fit_to_constraints(targets or published_targets(), n_terms)

    def dark(
        self, series: Mapping[str, Sequence[tuple[float, float]]]
    ) -> dict[str, DarkCountModel]:
        """
        Dark-count models per series; a single series is fitted alone and
        several share their slope.
        """
        if len(series) == 1:
            label, points = next(iter(series.items()))
            return {label: fit_dark_exponential(points)}
        return fit_dark_joint(series)
