"""
This module provides the gate-by-gate Monte Carlo simulation of a gated
detector on a link, with afterpulse memory, hold-off gate skipping and timing
jitter, plus simulated characterization fixtures.

Random draws are tied to gate indices: gates are grouped in chunks and every
chunk has its own generator seeded from ``(seed, stream, chunk)``. A gate
therefore sees the same photon, dark, afterpulse and timing draws whatever
happened before it, and changing the afterpulse horizon or the hold-off only
changes which draws are consulted.
"""

from __future__ import annotations

import logging
import math
import os
from collections import deque
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from .base import BaseAPI, InvalidArgumentError, ZeroSignalError, require
from .characterize import (
    DEFAULT_LASER_FWHM,
    DoubleGateRecord,
    Estimate,
    MeasurementRecord,
    TimingHistogram,
    afterpulse_point,
)
from .detector_model import (
    FWHM_PER_SIGMA,
    DetectorProfile,
    afterpulse_probability,
    builtin_profiles,
)
from .link_model import (
    CURVE_COLUMNS,
    LinkConfig,
    link_point,
    photon_arrival_probability,
)

__all__ = [
    "CHUNK_GATES",
    "EVENT_COLUMNS",
    "Cause",
    "SimConfig",
    "GateOutcome",
    "SimOutcome",
    "CharacterizationFixture",
    "run_simulation",
    "run_partitioned",
    "merge",
    "double_gate_records",
    "empirical_afterpulse_curve",
    "characterization_fixture",
    "fixture_profile",
    "FIXTURE_DARK_PROBABILITY",
    "write_event_log",
    "write_summary",
    "SimulatorAPI",
]

logger = logging.getLogger(__name__)

CHUNK_GATES = 1 << 16
"""Gates per random-number chunk."""

EVENT_COLUMNS = ["gate_index", "cause", "timestamp_in_gate_ps", "in_window"]

JITTER_CLIP_SIGMAS = 3.0

# tagged spawn keys keep two-gate and fixture draws apart from gate chunks
_CURVE_KEY = 1
_FIXTURE_KEY = 2

# two-gate experiment: gate with light, then gate without
_FIRST_GATE = 0
_SECOND_GATE = 1


class Cause(str, Enum):
    """What triggered an avalanche; earlier members take precedence."""

    PHOTON = "photon"
    DARK = "dark"
    AFTERPULSE = "afterpulse"


@dataclass(frozen=True)
class SimConfig:
    """
    One simulation stream.

    Attributes:
        link: Link parameters; ``link.distance`` sets the photon probability.
        profile: Detector profile.
        n_gates: Gates tallied.
        n_skip_holdoff: Gates suppressed after every avalanche.
        seed: Non-negative seed.
        window: Width of the time-discrimination window centred on the
            expected photon arrival, or None to accept the whole gate.
        stream: Stream number; partitions of one run use distinct streams.
        warmup: Gates simulated before tallying starts, so that afterpulse
            memory and hold-off are in steady state.
    """

    link: LinkConfig
    profile: DetectorProfile
    n_gates: int
    n_skip_holdoff: int = 0
    seed: int = 0
    window: float | None = None
    stream: int = 0
    warmup: int = 0

    def __post_init__(self) -> None:
        require(self.n_gates >= 1, "n_gates must be >= 1", "n_gates", self.n_gates)
        require(
            self.n_skip_holdoff >= 0,
            "n_skip_holdoff must be >= 0",
            "n_skip_holdoff",
            self.n_skip_holdoff,
        )
        require(
            0 <= self.seed < 2**64,
            "seed must be a non-negative 64-bit integer",
            "seed",
            self.seed,
        )
        require(self.stream >= 0, "stream must be >= 0", "stream", self.stream)
        require(self.warmup >= 0, "warmup must be >= 0", "warmup", self.warmup)
        if self.window is not None:
            require(
                0.0 < self.window <= self.profile.gate_width,
                f"window must be in (0, gate_width={self.profile.gate_width:g}]"
                f", got {self.window!r}",
                "window",
                self.window,
            )

    def merge_key(self) -> SimConfig:
        """The configuration with the per-stream fields normalised."""
        return replace(self, n_gates=1, seed=0, stream=0, warmup=0)


@dataclass(frozen=True)
class GateOutcome:
    """One triggered gate."""

    gate_index: int
    triggered: bool
    cause: Cause | None
    timestamp_in_gate: float
    in_window: bool

    def as_row(self) -> dict[str, object]:
        return {
            "gate_index": self.gate_index,
            "cause": self.cause.value if self.cause else "",
            "timestamp_in_gate_ps": self.timestamp_in_gate * 1e12,
            "in_window": self.in_window,
        }


@dataclass(frozen=True)
class SimOutcome:
    """
    Tallies of one or more merged simulation streams.

    ``counts`` holds every recorded avalanche by cause and ``accepted`` those
    falling inside the time window (equal to ``counts`` without a window).
    ``gates_skipped`` is ``n_skip * full_holdoffs + partial_holdoff_gates``,
    the partial part coming from a hold-off cut short by the end of the
    stream or carried in from the warm-up.
    """

    config: SimConfig
    counts: dict[Cause, int]
    accepted: dict[Cause, int]
    gates_applied: int
    gates_skipped: int
    full_holdoffs: int = 0
    partial_holdoff_gates: int = 0
    streams: tuple[tuple[int, int], ...] = field(default=())

    @property
    def n_gates(self) -> int:
        return self.gates_applied + self.gates_skipped

    @property
    def total_triggers(self) -> int:
        return sum(self.counts.values())

    def _rate(self, count: int) -> float:
        return count / self.n_gates * self.config.link.f_rep

    def _rate_error(self, count: int) -> float:
        return math.sqrt(count) / self.n_gates * self.config.link.f_rep

    @property
    def empirical_raw_rate(self) -> float:
        """Accepted photon detections per second."""
        return self._rate(self.accepted[Cause.PHOTON])

    @property
    def empirical_raw_rate_error(self) -> float:
        return self._rate_error(self.accepted[Cause.PHOTON])

    @property
    def empirical_dark_rate(self) -> float:
        return self._rate(self.accepted[Cause.DARK])

    @property
    def empirical_dark_rate_error(self) -> float:
        return self._rate_error(self.accepted[Cause.DARK])

    @property
    def empirical_afterpulse_rate(self) -> float:
        return self._rate(self.accepted[Cause.AFTERPULSE])

    @property
    def empirical_afterpulse_rate_error(self) -> float:
        return self._rate_error(self.accepted[Cause.AFTERPULSE])

    @property
    def empirical_dark_probability(self) -> float:
        """Dark triggers per applied gate."""
        return self.counts[Cause.DARK] / max(self.gates_applied, 1)

    @property
    def empirical_qber(self) -> float:
        """Accepted false counts over accepted photon counts; NaN without photons."""
        photons = self.accepted[Cause.PHOTON]
        if photons == 0:
            return math.nan
        return self._false_counts() / photons

    @property
    def empirical_qber_error(self) -> float:
        """
        Poisson error of the ratio; with no false counts a single count
        stands in for the numerator.
        """
        photons = self.accepted[Cause.PHOTON]
        if photons == 0:
            return math.nan
        false = self._false_counts()
        if false == 0:
            return 1.0 / photons
        return false / photons * math.sqrt(1.0 / false + 1.0 / photons)

    @property
    def empirical_dark_term(self) -> float:
        photons = self.accepted[Cause.PHOTON]
        return self.accepted[Cause.DARK] / photons if photons else math.nan

    @property
    def empirical_afterpulse_term(self) -> float:
        photons = self.accepted[Cause.PHOTON]
        return self.accepted[Cause.AFTERPULSE] / photons if photons else math.nan

    def _false_counts(self) -> int:
        return self.accepted[Cause.DARK] + self.accepted[Cause.AFTERPULSE]

    def summary_row(self) -> dict[str, float | int]:
        """
        Flat summary: the link-curve quantities with an ``empirical_``
        prefix, their standard errors and the gate tallies.
        """
        f_rep = self.config.link.f_rep
        raw = self.empirical_raw_rate
        sifted = raw / 2.0
        return {
            "distance_km": self.config.link.distance,
            "empirical_raw_rate_hz": raw,
            "empirical_raw_rate_hz_error": self.empirical_raw_rate_error,
            "empirical_normalized_raw": raw / f_rep,
            "empirical_sifted_rate_hz": sifted,
            "empirical_qber": self.empirical_qber,
            "empirical_qber_error": self.empirical_qber_error,
            "empirical_dark_term": self.empirical_dark_term,
            "empirical_afterpulse_term": self.empirical_afterpulse_term,
            "empirical_dark_rate_hz": self.empirical_dark_rate,
            "empirical_dark_rate_hz_error": self.empirical_dark_rate_error,
            "empirical_afterpulse_rate_hz": self.empirical_afterpulse_rate,
            "empirical_afterpulse_rate_hz_error": (
                self.empirical_afterpulse_rate_error
            ),
            "photon_counts": self.counts[Cause.PHOTON],
            "dark_counts": self.counts[Cause.DARK],
            "afterpulse_counts": self.counts[Cause.AFTERPULSE],
            "accepted_photon_counts": self.accepted[Cause.PHOTON],
            "accepted_dark_counts": self.accepted[Cause.DARK],
            "accepted_afterpulse_counts": self.accepted[Cause.AFTERPULSE],
            "n_gates": self.n_gates,
            "gates_applied": self.gates_applied,
            "gates_skipped": self.gates_skipped,
        }


class _GateDraws:
    """Per-gate random draws, generated chunk by chunk on demand."""

    def __init__(
        self,
        seed: int,
        stream: int,
        p_photon: float,
        eta: float,
        p_dark: float,
        tag: tuple[int, ...] = (),
    ):
        self.seed = seed
        self.stream = stream
        self.tag = tag
        self.p_photon = p_photon
        self.eta = eta
        self.p_dark = p_dark
        self._chunks: dict[int, dict[str, NDArray]] = {}

    def chunk(self, index: int) -> dict[str, NDArray]:
        cached = self._chunks.get(index)
        if cached is not None:
            return cached
        rng = np.random.default_rng(
            np.random.SeedSequence(
                self.seed, spawn_key=(self.stream, index, *self.tag)
            )
        )
        present = rng.random(CHUNK_GATES) < self.p_photon
        detected = present & (rng.random(CHUNK_GATES) < self.eta)
        dark = rng.random(CHUNK_GATES) < self.p_dark
        draws = {
            "photon": detected,
            "dark": dark,
            "u_ap": rng.random(CHUNK_GATES),
            "z": rng.standard_normal(CHUNK_GATES),
            "u_time": rng.random(CHUNK_GATES),
            "primary": np.flatnonzero(detected | dark),
        }
        # older chunks are never revisited
        for old in [k for k in self._chunks if k < index - 1]:
            del self._chunks[old]
        self._chunks[index] = draws
        return draws

    def span(self, key: str, start: int, stop: int) -> NDArray:
        parts = []
        g = start
        while g < stop:
            index, offset = divmod(g, CHUNK_GATES)
            take = min(stop - g, CHUNK_GATES - offset)
            parts.append(self.chunk(index)[key][offset : offset + take])
            g += take
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def at(self, key: str, gate: int) -> float:
        index, offset = divmod(gate, CHUNK_GATES)
        return self.chunk(index)[key][offset]

    def next_primary(self, start: int, stop: int) -> int | None:
        """First gate in [start, stop) with a detected photon or a dark count."""
        index = start // CHUNK_GATES
        while index * CHUNK_GATES < stop:
            primary = self.chunk(index)["primary"] + index * CHUNK_GATES
            pos = int(np.searchsorted(primary, start))
            if pos < primary.size:
                gate = int(primary[pos])
                return gate if gate < stop else None
            index += 1
        return None


def _afterpulse_table(profile: DetectorProfile, f_rep: float) -> NDArray[np.float64]:
    """``table[k] = p_ap(k / f_rep)`` for k up to the horizon; entry 0 is unused."""
    horizon = profile.afterpulse.horizon_gates(f_rep)
    table = np.zeros(horizon + 1)
    if horizon >= 1:
        table[1:] = afterpulse_probability(
            profile.afterpulse, np.arange(1, horizon + 1) / f_rep
        )
    return table


def _afterpulse_hazard(
    offsets: NDArray[np.int_], table: NDArray[np.float64]
) -> NDArray[np.float64]:
    """
    Afterpulse probability of gates at ``offsets`` from the remembered
    avalanches (one row per avalanche): ``1 - prod(1 - p_ap)`` down each
    column.
    """
    last = table.size - 1
    p_each = np.where(offsets <= last, table[np.minimum(offsets, last)], 0.0)
    return 1.0 - np.prod(1.0 - p_each, axis=0)


def run_simulation(
    cfg: SimConfig, on_event: Callable[[GateOutcome], None] | None = None
) -> SimOutcome:
    """
    Simulate ``cfg.n_gates`` gates.

    In each applied gate a photon is present with probability p_T and
    detected with probability eta; otherwise a dark count fires with
    probability p_dc; otherwise an afterpulse fires with probability
    ``1 - prod(1 - p_ap(t - t_i))`` over the remembered avalanches. When
    several causes fire in one gate the photon wins over the dark count,
    which wins over the afterpulse. Every avalanche is remembered for the
    afterpulse horizon and starts a hold-off of ``n_skip_holdoff`` gates; a
    hold-off running past the last gate is cut short.

    Photon timestamps are ``gate_width / 2 + sigma * z`` clipped to three
    sigma; dark and afterpulse timestamps are uniform over the gate.

    Args:
        cfg: The stream configuration.
        on_event: Called with every tallied avalanche, in gate order.

    Returns:
        The tallies; identical for identical configurations.
    """
    profile = cfg.profile
    f_rep = cfg.link.f_rep
    gate_width = profile.gate_width
    centre = gate_width / 2.0
    sigma = profile.jitter_fwhm / FWHM_PER_SIGMA
    half_window = None if cfg.window is None else cfg.window / 2.0

    ap_table = _afterpulse_table(profile, f_rep)
    horizon = ap_table.size - 1 if ap_table.any() else 0

    draws = _GateDraws(
        cfg.seed,
        cfg.stream,
        photon_arrival_probability(cfg.link),
        profile.efficiency,
        profile.dark_probability,
    )
    total = cfg.warmup + cfg.n_gates
    counts = dict.fromkeys(Cause, 0)
    accepted = dict.fromkeys(Cause, 0)
    skipped = 0
    full_holdoffs = 0
    partial = 0
    memory: deque[int] = deque()

    g = 0
    while g < total:
        while memory and g - memory[0] > horizon:
            memory.popleft()
        if not memory:
            nxt = draws.next_primary(g, total)
            if nxt is None:
                break
            g = nxt
            cause = Cause.PHOTON if draws.at("photon", g) else Cause.DARK
        else:
            stop = min(memory[-1] + horizon + 1, total)
            gates = np.arange(g, stop)
            offsets = gates[None, :] - np.fromiter(memory, dtype=int)[:, None]
            hazard = _afterpulse_hazard(offsets, ap_table)
            photon = draws.span("photon", g, stop)
            dark = draws.span("dark", g, stop)
            fired = photon | dark | (draws.span("u_ap", g, stop) < hazard)
            hits = np.flatnonzero(fired)
            if hits.size == 0:
                g = stop
                continue
            i = int(hits[0])
            g += i
            if photon[i]:
                cause = Cause.PHOTON
            elif dark[i]:
                cause = Cause.DARK
            else:
                cause = Cause.AFTERPULSE

        if cause is Cause.PHOTON:
            offset = sigma * float(
                np.clip(draws.at("z", g), -JITTER_CLIP_SIGMAS, JITTER_CLIP_SIGMAS)
            )
            timestamp = centre + offset
        else:
            timestamp = draws.at("u_time", g) * gate_width
        in_window = half_window is None or abs(timestamp - centre) <= half_window

        hold = min(cfg.n_skip_holdoff, total - 1 - g)
        if g >= cfg.warmup:
            counts[cause] += 1
            if in_window:
                accepted[cause] += 1
            skipped += hold
            if hold == cfg.n_skip_holdoff:
                full_holdoffs += 1
            else:
                partial += hold
            if on_event is not None:
                on_event(
                    GateOutcome(
                        gate_index=g - cfg.warmup,
                        triggered=True,
                        cause=cause,
                        timestamp_in_gate=timestamp,
                        in_window=in_window,
                    )
                )
        elif g + hold >= cfg.warmup:
            carried = g + hold - cfg.warmup + 1
            partial += carried
            skipped += carried

        memory.append(g)
        g += 1 + hold

    outcome = SimOutcome(
        config=cfg,
        counts=counts,
        accepted=accepted,
        gates_applied=cfg.n_gates - skipped,
        gates_skipped=skipped,
        full_holdoffs=full_holdoffs,
        partial_holdoff_gates=partial,
        streams=((cfg.seed, cfg.stream),),
    )
    tally = ", ".join(f"{c.value}={n}" for c, n in counts.items())
    logger.debug(f"stream {cfg.stream}: {cfg.n_gates} gates, {tally}")
    return outcome


def merge(outcomes: Sequence[SimOutcome]) -> SimOutcome:
    """
    Combine tallies of streams that share a configuration up to seed, stream,
    gate count and warm-up.

    Raises:
        InvalidArgumentError: If the list is empty or the configurations
            differ in anything else.
    """
    if not outcomes:
        raise InvalidArgumentError("nothing to merge", parameter="outcomes")
    key = outcomes[0].config.merge_key()
    for outcome in outcomes[1:]:
        if outcome.config.merge_key() != key:
            raise InvalidArgumentError(
                "cannot merge outcomes of different configurations",
                parameter="outcomes",
            )
    if len(outcomes) == 1:
        return outcomes[0]
    first = min(outcomes, key=lambda o: (o.config.seed, o.config.stream))
    n_gates = sum(o.n_gates for o in outcomes)
    return SimOutcome(
        config=replace(first.config, n_gates=n_gates, warmup=0),
        counts={c: sum(o.counts[c] for o in outcomes) for c in Cause},
        accepted={c: sum(o.accepted[c] for o in outcomes) for c in Cause},
        gates_applied=sum(o.gates_applied for o in outcomes),
        gates_skipped=sum(o.gates_skipped for o in outcomes),
        full_holdoffs=sum(o.full_holdoffs for o in outcomes),
        partial_holdoff_gates=sum(o.partial_holdoff_gates for o in outcomes),
        streams=tuple(sorted(s for o in outcomes for s in o.streams)),
    )


def partition_configs(cfg: SimConfig, partitions: int) -> list[SimConfig]:
    """
    Split a run into independently seeded streams.

    Each stream after the first gets a warm-up of one afterpulse horizon plus
    one hold-off, discarded before tallying.
    """
    require(partitions >= 1, "partitions must be >= 1", "partitions", partitions)
    require(
        partitions <= cfg.n_gates,
        "more partitions than gates",
        "partitions",
        partitions,
    )
    base, extra = divmod(cfg.n_gates, partitions)
    warmup = (
        cfg.profile.afterpulse.horizon_gates(cfg.link.f_rep) + cfg.n_skip_holdoff
    )
    return [
        replace(
            cfg,
            n_gates=base + (1 if i < extra else 0),
            stream=cfg.stream + i,
            warmup=cfg.warmup if i == 0 else warmup,
        )
        for i in range(partitions)
    ]


def run_partitioned(
    cfg: SimConfig, jobs: int = 1, partitions: int | None = None
) -> SimOutcome:
    """
    Run a simulation as ``partitions`` seeded streams on up to ``jobs``
    worker processes and merge the results.

    The outcome depends on ``partitions`` but not on ``jobs``.
    """
    require(jobs >= 1, "jobs must be >= 1", "jobs", jobs)
    partitions = partitions or jobs
    if partitions == 1:
        return run_simulation(cfg)
    configs = partition_configs(cfg, partitions)
    logger.info(
        f"Simulating {cfg.n_gates} gates as {partitions} streams on "
        f"{min(jobs, partitions)} workers"
    )
    if jobs == 1:
        outcomes = [run_simulation(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, partitions)) as pool:
            outcomes = list(pool.map(run_simulation, configs))
    return merge(outcomes)


def _validate_grid(dt_grid: Iterable[float], f_rep: float) -> list[float]:
    grid = [float(dt) for dt in dt_grid]
    require(bool(grid), "dt_grid must not be empty", "dt_grid")
    for dt in grid:
        n = dt * f_rep
        require(
            dt > 0.0 and round(n) >= 1 and math.isclose(n, round(n), rel_tol=1e-6),
            f"dt {dt!r} is not a positive multiple of the gate period",
            "dt_grid",
            dt,
        )
    return grid


def double_gate_records(
    cfg: SimConfig, dt_grid: Iterable[float]
) -> list[DoubleGateRecord]:
    """
    Simulate the two-gate afterpulse experiment.

    For every delay, ``cfg.n_gates`` trials are run. Each trial applies a
    gate with the link's light, drawn gate by gate like ``run_simulation``
    (photon or dark count). After a first-gate avalanche, a second gate ``dt``
    later without light fires on its own dark draw or on the afterpulse
    hazard of that avalanche, taken from the same table and hazard rule as
    the link simulation.

    Raises:
        InvalidArgumentError: If a delay is not a positive multiple of
            ``1 / f_rep``.
    """
    f_rep = cfg.link.f_rep
    grid = _validate_grid(dt_grid, f_rep)
    profile = cfg.profile
    p_dark = profile.dark_probability
    p_photon = photon_arrival_probability(cfg.link)
    ap_table = _afterpulse_table(profile, f_rep)
    records = []
    for i, dt in enumerate(grid):
        offset = np.array([[int(round(dt * f_rep))]])
        hazard = float(_afterpulse_hazard(offset, ap_table)[0])
        lit = _GateDraws(
            cfg.seed, cfg.stream, p_photon, profile.efficiency, p_dark,
            tag=(_CURVE_KEY, i, _FIRST_GATE),
        )
        unlit = _GateDraws(
            cfg.seed, cfg.stream, 0.0, profile.efficiency, p_dark,
            tag=(_CURVE_KEY, i, _SECOND_GATE),
        )
        n_first = 0
        n_coinc = 0
        for start in range(0, cfg.n_gates, CHUNK_GATES):
            stop = min(start + CHUNK_GATES, cfg.n_gates)
            first = lit.span("photon", start, stop) | lit.span("dark", start, stop)
            second = unlit.span("dark", start, stop) | (
                unlit.span("u_ap", start, stop) < hazard
            )
            n_first += int(np.count_nonzero(first))
            n_coinc += int(np.count_nonzero(first & second))
        logger.debug(
            f"two-gate dt={dt:g} s: {n_first} first-gate counts, "
            f"{n_coinc} coincidences"
        )
        records.append(
            DoubleGateRecord(
                n_first_gate_counts=n_first,
                n_coincidences=n_coinc,
                dt=dt,
                dark_probability=p_dark,
            )
        )
    return records


def empirical_afterpulse_curve(
    cfg: SimConfig, dt_grid: Iterable[float]
) -> list[Estimate]:
    """
    Afterpulse probability recovered from the simulated two-gate experiment:
    coincidence fraction minus dark probability, per delay.
    """
    return [afterpulse_point(r) for r in double_gate_records(cfg, dt_grid)]


@dataclass(frozen=True)
class CharacterizationFixture:
    """Simulated measurements of a known profile."""

    dark: MeasurementRecord
    light: MeasurementRecord
    double_gate: list[DoubleGateRecord]
    histogram: TimingHistogram


FIXTURE_DARK_PROBABILITY = 1e-3
"""Dark probability per gate of the default round-trip fixture profile."""


def fixture_profile() -> DetectorProfile:
    """
    Reference diode of the estimator round-trips: epitaxx-60 afterpulsing
    and jitter at 10 % efficiency, with p_dc = 1e-3.
    """
    epitaxx = next(p for p in builtin_profiles() if p.name == "epitaxx-60")
    return replace(
        epitaxx.with_dark(FIXTURE_DARK_PROBABILITY),
        name="round-trip-fixture",
        notes="characterization round-trip reference",
    )


def characterization_fixture(
    profile: DetectorProfile | None = None,
    *,
    mu_bar: float = 0.1,
    f_rep: float = 1e5,
    integration_time: float = 100.0,
    dt_grid: Sequence[float] = (1e-5, 2e-5, 5e-5),
    double_gate_trials: int = 10_000_000,
    peak_events: int = 2_000_000,
    pedestal: float = 20.0,
    bin_width: float = 10e-12,
    span: float = 10e-9,
    laser_fwhm: float = DEFAULT_LASER_FWHM,
    seed: int = 0,
) -> CharacterizationFixture:
    """
    Generate dark, light, two-gate and timing data for ``profile``
    (default: ``fixture_profile()``).

    Light counts follow ``1 - (1 - p_dc) * exp(-mu_bar * eta)`` per gate.
    The time spectrum is a Gaussian peak whose width combines the detector
    jitter and the laser pulse in quadrature, on a flat Poisson pedestal.
    """
    if profile is None:
        profile = fixture_profile()
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(0, 0, _FIXTURE_KEY))
    )
    n_gates = int(round(f_rep * integration_time))
    p_dark = profile.dark_probability
    p_light = 1.0 - (1.0 - p_dark) * math.exp(-mu_bar * profile.efficiency)
    dark = MeasurementRecord(
        counts=int(rng.binomial(n_gates, p_dark)),
        integration_time=integration_time,
        f_rep=f_rep,
    )
    light = MeasurementRecord(
        counts=int(rng.binomial(n_gates, p_light)),
        integration_time=integration_time,
        f_rep=f_rep,
        shutter_open=True,
        mean_photons_per_pulse=mu_bar,
    )

    sigma = math.hypot(profile.jitter_fwhm, laser_fwhm) / FWHM_PER_SIGMA
    edges = np.arange(int(round(span / bin_width)) + 1) * bin_width
    arrivals = span / 2.0 + sigma * rng.standard_normal(peak_events)
    peak, _ = np.histogram(arrivals, bins=edges)
    bins = peak + rng.poisson(pedestal, size=peak.size)
    histogram = TimingHistogram(
        bin_width=bin_width, bins=tuple(bins), laser_fwhm=laser_fwhm
    )

    # the first gate sees at least one photon in every pulse
    two_gate = SimConfig(
        link=LinkConfig(mu=1.0, receiver_transmission=1.0, f_rep=f_rep),
        profile=profile,
        n_gates=double_gate_trials,
        seed=seed,
    )
    return CharacterizationFixture(
        dark=dark,
        light=light,
        double_gate=double_gate_records(two_gate, dt_grid),
        histogram=histogram,
    )


def write_event_log(
    events: Iterable[GateOutcome], path: str | os.PathLike[str]
) -> None:
    """Write triggered gates with the EVENT_COLUMNS header."""
    frame = pd.DataFrame([e.as_row() for e in events], columns=EVENT_COLUMNS)
    frame.to_csv(path, index=False)


def write_summary(
    outcome: SimOutcome,
    path: str | os.PathLike[str],
    sig_figs: int | None = None,
) -> None:
    """
    Write the summary row next to the analytic link values at the same
    distance, one CSV row.
    """
    cfg = outcome.config
    try:
        analytic = link_point(cfg.link, cfg.profile, cfg.n_skip_holdoff).as_row()
    except ZeroSignalError:
        analytic = dict.fromkeys(CURVE_COLUMNS, math.nan)
    row = {**{c: analytic[c] for c in CURVE_COLUMNS}, **outcome.summary_row()}
    frame = pd.DataFrame([row])
    frame.to_csv(
        path,
        index=False,
        float_format=f"%.{sig_figs}g" if sig_figs else None,
    )


class SimulatorAPI(BaseAPI):
    """
    API for Monte Carlo runs.
    """

    def config(
        self,
        profile: str | DetectorProfile,
        distance: float,
        n_gates: int,
        n_skip: int | None = None,
        seed: int | None = None,
        window: float | None = None,
        **link_overrides: float,
    ) -> SimConfig:
        """
        Build a SimConfig from the toolkit settings.

        Returns:
            The SimConfig.
        """
        return SimConfig(
            link=self.client.links.config(distance, **link_overrides),
            profile=self._resolve_profile(profile),
            n_gates=n_gates,
            n_skip_holdoff=self._setting("n_skip", n_skip) or 0,
            seed=self._setting("seed", seed) or 0,
            window=window,
        )

    def run(
        self,
        cfg: SimConfig,
        jobs: int | None = None,
        partitions: int | None = None,
    ) -> SimOutcome:
        """
        Run a simulation, partitioned when ``partitions`` > 1.

        Example:
            >>> cfg = toolkit.simulator.config("epitaxx-60", 30.0, 10**6)
            >>> toolkit.simulator.run(cfg).empirical_qber
        """
        jobs = self._setting("jobs", jobs) or 1
        self.logger.info(
            f"Simulating '{cfg.profile.name}' at {cfg.link.distance:g} km, "
            f"{cfg.n_gates} gates, seed {cfg.seed}"
        )
        return run_partitioned(cfg, jobs, partitions or 1)

    def afterpulse_curve(
        self, cfg: SimConfig, dt_grid: Iterable[float]
    ) -> list[Estimate]:
        """Simulated two-gate afterpulse curve."""
        return empirical_afterpulse_curve(cfg, dt_grid)
