"""
Command-line interface: ``spad-link <command> ...``.

Every command exits 0 on success and 1 on any toolkit or file error; data
files are written only to the paths given with ``--out`` (or ``--events``),
each with a run manifest next to it.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import tempfile
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

import pandas as pd

from . import SpadLinkToolkit, __version__
from .base import ConfigurationError, SpadLinkError
from .calibration import (
    dataset_from_estimates,
    read_dark_series,
)
from .characterize import (
    DEFAULT_LASER_FWHM,
    DOUBLE_GATE_COLUMNS,
    Estimate,
    afterpulse_curve,
    read_double_gate,
    read_histogram,
    read_measurements,
    read_report,
    write_report,
)
from .config import load_config, load_environment, resolve_settings
from .detector_model import (
    DetectorProfile,
    cumulative_afterpulse,
    min_skip_gates,
)
from .gated_sim import (
    GateOutcome,
    SimConfig,
    SimOutcome,
    run_partitioned,
    run_simulation,
    write_event_log,
    write_summary,
)
from .link_model import LinkConfig, write_curve_csv
from .manifest import RunManifest, file_digest, manifest_path_for
from .profiles import canonical_profile, format_profile

__all__ = ["build_parser", "main"]

logger = logging.getLogger(__name__)

PROG = "spad-link"


def _fmt(value: Any, sig_figs: int | None) -> str:
    if isinstance(value, float) and sig_figs and math.isfinite(value):
        return f"{value:.{sig_figs}g}"
    return str(value)


def _finish(
    manifest: RunManifest, outputs: Sequence[Path]
) -> Path:
    for path in outputs:
        manifest.record_output(path)
    target = manifest.write(manifest_path_for(outputs[0]))
    print(f"manifest = {target}")
    return target


def _link_overrides(args: argparse.Namespace) -> dict[str, float]:
    return {
        k: v
        for k, v in (
            ("mu", getattr(args, "mu", None)),
            ("attenuation", getattr(args, "attenuation", None)),
            ("receiver_transmission", getattr(args, "receiver_transmission", None)),
        )
        if v is not None
    }


# profiles


def cmd_profiles(toolkit: SpadLinkToolkit, args: argparse.Namespace) -> int:
    """List the registry or show one profile with its derived values."""
    f_rep = toolkit.settings["f_rep"]
    budget = toolkit.settings["budget"]
    if args.action == "list":
        rows = [
            {
                "name": p.name,
                "temperature_c": p.temperature,
                "efficiency": p.efficiency,
                "dark_p10": p.dark.p10,
                "gate_width_ns": p.gate_width * 1e9,
                "jitter_fwhm_ps": p.jitter_fwhm * 1e12,
                "cumulative_afterpulse": cumulative_afterpulse(
                    p.afterpulse, f_rep
                ),
                "min_skip": min_skip_gates(p.afterpulse, f_rep, budget),
            }
            for p in toolkit.detectors.list_profiles()
        ]
        pd.DataFrame(rows).to_csv(sys.stdout, index=False)
        return 0

    if not args.name:
        raise ConfigurationError("profiles show needs a profile name")
    profile = toolkit.detectors.get_profile(args.name)
    sig = toolkit.settings["sig_figs"]
    sys.stdout.write(format_profile(profile))
    print(f"# dark_probability = {_fmt(profile.dark_probability, sig)}")
    print(
        f"# cumulative_afterpulse at {f_rep:g} Hz = "
        f"{_fmt(cumulative_afterpulse(profile.afterpulse, f_rep), sig)}"
    )
    print(
        f"# min_skip at {f_rep:g} Hz for budget {budget:g} = "
        f"{min_skip_gates(profile.afterpulse, f_rep, budget)}"
    )
    return 0


# link model


def cmd_link_curve(toolkit: SpadLinkToolkit, args: argparse.Namespace) -> int:
    """Write the link curve over [0, dmax] km."""
    profile = toolkit.detectors.get_profile(toolkit.settings["profile"])
    points = toolkit.links.curve(
        profile,
        dmax=args.dmax,
        step=args.step,
        afterpulsing=args.afterpulsing,
        **_link_overrides(args),
    )
    sig = toolkit.settings["sig_figs"]
    if args.out is None:
        write_curve_csv(points, sys.stdout, sig)
        return 0
    out = Path(args.out)
    write_curve_csv(points, out, sig)
    manifest = RunManifest.for_profile(
        "curve",
        {
            "dmax": args.dmax,
            "step": args.step,
            "afterpulsing": args.afterpulsing,
            **_settings_record(toolkit),
        },
        __version__,
        profile,
    )
    _finish(manifest, [out])
    return 0


def cmd_solve(toolkit: SpadLinkToolkit, args: argparse.Namespace) -> int:
    """Print the distance at which the QBER reaches the target."""
    distance, note = toolkit.links.solve(
        toolkit.settings["profile"],
        args.qber,
        afterpulsing=args.afterpulsing,
        **_link_overrides(args),
    )
    print(f"distance_km = {_fmt(distance, toolkit.settings['sig_figs'])}")
    if note:
        print(f"note: {note}")
    return 0


# simulation


def _settings_record(toolkit: SpadLinkToolkit) -> dict[str, Any]:
    keys = (
        "f_rep",
        "n_skip",
        "mu",
        "attenuation",
        "receiver_transmission",
        "seed",
        "sig_figs",
    )
    return {k: toolkit.settings[k] for k in keys}


def _sim_config(
    profile: DetectorProfile, parameters: dict[str, Any]
) -> SimConfig:
    window = parameters["window_ns"]
    return SimConfig(
        link=LinkConfig(
            mu=parameters["mu"],
            attenuation=parameters["attenuation"],
            receiver_transmission=parameters["receiver_transmission"],
            f_rep=parameters["f_rep"],
            distance=parameters["distance"],
        ),
        profile=profile,
        n_gates=parameters["gates"],
        n_skip_holdoff=parameters["n_skip"],
        seed=parameters["seed"],
        window=None if window is None else window * 1e-9,
    )


def _run_and_write(
    cfg: SimConfig,
    parameters: dict[str, Any],
    jobs: int,
    summary_out: Path | None,
    events_out: Path | None,
) -> SimOutcome:
    events: list[GateOutcome] = []
    if events_out is not None:
        if parameters["partitions"] != 1:
            raise ConfigurationError("--events needs a single partition")
        outcome = run_simulation(cfg, on_event=events.append)
    else:
        outcome = run_partitioned(cfg, jobs, parameters["partitions"])
    if summary_out is not None:
        write_summary(outcome, summary_out, parameters["sig_figs"])
    if events_out is not None:
        write_event_log(events, events_out)
    return outcome


def cmd_sim(toolkit: SpadLinkToolkit, args: argparse.Namespace) -> int:
    """Run a simulation; print its summary and write the requested files."""
    profile = canonical_profile(
        toolkit.detectors.get_profile(toolkit.settings["profile"])
    )
    link = toolkit.links.config(args.distance, **_link_overrides(args))
    parameters = {
        **_settings_record(toolkit),
        "mu": link.mu,
        "attenuation": link.attenuation,
        "receiver_transmission": link.receiver_transmission,
        "distance": args.distance,
        "gates": args.gates,
        "window_ns": args.window,
        "partitions": args.partitions,
        "summary_out": str(Path(args.out)) if args.out else None,
        "events_out": str(Path(args.events)) if args.events else None,
    }
    cfg = _sim_config(profile, parameters)
    summary_out = Path(args.out) if args.out else None
    events_out = Path(args.events) if args.events else None
    outcome = _run_and_write(
        cfg, parameters, toolkit.settings["jobs"], summary_out, events_out
    )

    sig = toolkit.settings["sig_figs"]
    for key, value in outcome.summary_row().items():
        print(f"{key} = {_fmt(value, sig)}")
    outputs = [p for p in (summary_out, events_out) if p is not None]
    if outputs:
        manifest = RunManifest.for_profile(
            "sim", parameters, __version__, profile, seed=cfg.seed
        )
        _finish(manifest, outputs)
    return 0


def cmd_replay(toolkit: SpadLinkToolkit, args: argparse.Namespace) -> int:
    """
    Re-run a simulation manifest and compare the output digests.

    Returns 0 when every output is reproduced bit for bit, 1 otherwise.
    """
    manifest = RunManifest.load(args.manifest)
    if manifest.command != "sim":
        raise ConfigurationError(
            f"only simulation manifests can be replayed, got '{manifest.command}'"
        )
    if manifest.tool_version != __version__:
        logger.warning(
            f"manifest written by version {manifest.tool_version}, "
            f"replaying with {__version__}"
        )
    parameters = manifest.parameters
    cfg = _sim_config(manifest.profile(), parameters)
    ok = True
    with tempfile.TemporaryDirectory() as tmp:
        roles = {
            role: parameters[role]
            for role in ("summary_out", "events_out")
            if parameters.get(role)
        }
        fresh = {role: Path(tmp) / role for role in roles}
        _run_and_write(
            cfg,
            parameters,
            toolkit.settings["jobs"],
            fresh.get("summary_out"),
            fresh.get("events_out"),
        )
        for role, original in roles.items():
            match = manifest.outputs.get(original) == file_digest(fresh[role])
            ok &= match
            print(f"{original}: {'reproduced' if match else 'MISMATCH'}")
    return 0 if ok else 1


# characterization


def cmd_characterize(
    toolkit: SpadLinkToolkit, args: argparse.Namespace
) -> int:
    """Reduce a measurement CSV to a report."""
    if args.kind == "jitter":
        estimates = [
            toolkit.characterize.jitter(
                read_histogram(args.input, args.laser_fwhm_ps * 1e-12)
            )
        ]
    elif args.kind == "afterpulse":
        estimates = toolkit.characterize.afterpulse(read_double_gate(args.input))
    elif args.kind == "dark":
        estimates = toolkit.characterize.dark(read_measurements(args.input))
    else:
        estimates = toolkit.characterize.efficiency(
            read_measurements(args.input)
        )

    sig = toolkit.settings["sig_figs"]
    if args.out is None:
        write_report(estimates, sys.stdout, sig)
        return 0
    out = Path(args.out)
    write_report(estimates, out, sig)
    manifest = RunManifest(
        command=f"characterize {args.kind}",
        parameters={
            "input": args.input,
            "input_sha256": file_digest(args.input),
            "laser_fwhm_ps": args.laser_fwhm_ps,
            "sig_figs": sig,
        },
        tool_version=__version__,
    )
    _finish(manifest, [out])
    return 0


# calibration


def _afterpulse_estimates(path: str) -> list[Estimate]:
    columns = set(pd.read_csv(path, nrows=0).columns)
    if set(DOUBLE_GATE_COLUMNS) <= columns:
        return afterpulse_curve(read_double_gate(path))
    return read_report(path)


def cmd_calibrate(toolkit: SpadLinkToolkit, args: argparse.Namespace) -> int:
    """Fit a model and emit it as profile text."""
    base = toolkit.detectors.get_profile(toolkit.settings["profile"])
    comments: list[str] = []
    if args.kind == "afterpulse":
        data = dataset_from_estimates(_afterpulse_estimates(args.input))
        fit = toolkit.calibration.afterpulse(data, args.terms)
        profiles = [
            replace(
                base, name=args.name or f"{base.name}-fit", afterpulse=fit.model
            )
        ]
        comments = [
            f"chi2 = {fit.chi2:.6g}",
            f"dof = {fit.dof}",
            f"reduced_chi2 = {fit.reduced_chi2:.6g}",
            f"starts = {fit.starts}",
        ]
    elif args.kind == "constraints":
        model = toolkit.calibration.constraints(n_terms=args.terms)
        profiles = [
            replace(
                base,
                name=args.name or f"{base.name}-constrained",
                afterpulse=model,
            )
        ]
    else:
        series = read_dark_series(args.input)
        models = toolkit.calibration.dark(series)
        profiles = [
            replace(
                base,
                name=(
                    args.name
                    if args.name and len(models) == 1
                    else f"{base.name}-{label}"
                ),
                dark=model,
            )
            for label, model in models.items()
        ]

    text = "".join(f"# {c}\n" for c in comments) + "\n".join(
        format_profile(p) for p in profiles
    )
    if args.out is None:
        sys.stdout.write(text)
        return 0
    out = Path(args.out)
    out.write_text(text, encoding="utf-8")
    parameters: dict[str, Any] = {"terms": args.terms, "base": base.name}
    if args.input:
        parameters |= {"input": args.input, "input_sha256": file_digest(args.input)}
    manifest = RunManifest.for_profile(
        f"calibrate {args.kind}", parameters, __version__, base
    )
    _finish(manifest, [out])
    return 0


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with all subcommands."""
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Gated single-photon detector models and QKD link tools.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="key-value config file")
    parser.add_argument(
        "--profile-dir", help="directory of extra *.profile files"
    )
    parser.add_argument(
        "--sig-figs", type=int, help="significant figures of printed numbers"
    )
    parser.add_argument("--jobs", type=int, help="worker processes")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="more logging"
    )
    parser.add_argument(
        "-q", "--quiet", action="store_true", help="errors only"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def link_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--profile", help="detector profile name")
        p.add_argument("--frep", type=float, help="gate frequency in Hz")
        p.add_argument("--mu", type=float, help="mean photon probability")
        p.add_argument("--attenuation", type=float, help="fiber loss, dB/km")
        p.add_argument(
            "--receiver-transmission",
            type=float,
            dest="receiver_transmission",
            help="receiver optics transmission",
        )

    p = sub.add_parser("profiles", help="list or show detector profiles")
    p.add_argument("action", choices=["list", "show"])
    p.add_argument("name", nargs="?")
    p.add_argument("--frep", type=float, help="frequency for derived values")
    p.set_defaults(func=cmd_profiles)

    p = sub.add_parser("curve", help="QBER and key rates versus distance")
    link_options(p)
    p.add_argument("--dmax", type=float, default=100.0, help="km")
    p.add_argument("--step", type=float, default=1.0, help="km")
    p.add_argument("--skip", type=int, help="hold-off gates")
    p.add_argument(
        "--afterpulsing",
        action="store_true",
        help="include afterpulsing (off: dark counts only)",
    )
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_link_curve)

    p = sub.add_parser("solve", help="distance at which a QBER is reached")
    link_options(p)
    p.add_argument("--qber", type=float, required=True, help="target QBER")
    p.add_argument("--skip", type=int, help="hold-off gates")
    p.add_argument("--afterpulsing", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sim", help="gate-by-gate Monte Carlo run")
    link_options(p)
    p.add_argument("--distance", type=float, required=True, help="km")
    p.add_argument("--gates", type=int, default=10**6)
    p.add_argument("--seed", type=int)
    p.add_argument("--holdoff", type=int, dest="skip", help="hold-off gates")
    p.add_argument("--window", type=float, help="time window in ns")
    p.add_argument("--partitions", type=int, default=1)
    p.add_argument("--out", help="summary CSV path")
    p.add_argument("--events", help="per-gate event CSV path")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("characterize", help="reduce measurement data")
    p.add_argument("kind", choices=["efficiency", "dark", "afterpulse", "jitter"])
    p.add_argument("--input", required=True)
    p.add_argument(
        "--laser-fwhm-ps",
        type=float,
        default=DEFAULT_LASER_FWHM * 1e12,
        dest="laser_fwhm_ps",
    )
    p.add_argument("--out", help="report CSV path (default: stdout)")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("calibrate", help="fit detector models")
    p.add_argument("kind", choices=["afterpulse", "dark", "constraints"])
    p.add_argument("--input")
    p.add_argument("--terms", type=int, default=3)
    p.add_argument("--profile", help="profile the fitted model is attached to")
    p.add_argument("--name", help="name of the emitted profile")
    p.add_argument("--out", help="profile text path (default: stdout)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("replay", help="re-run a simulation manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)

    return parser


def _configure_logging(verbose: int, quiet: bool) -> None:
    level = max(logging.DEBUG, logging.WARNING - 10 * verbose)
    if quiet:
        level = logging.ERROR
    logging.basicConfig(
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the ``spad-link`` console script."""
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, args.quiet)
    try:
        if args.command == "calibrate" and args.kind != "constraints":
            if not args.input:
                raise ConfigurationError(f"calibrate {args.kind} needs --input")
        load_environment()
        settings = resolve_settings(
            load_config(args.config),
            {
                "profile": getattr(args, "profile", None),
                "f_rep": getattr(args, "frep", None),
                "n_skip": getattr(args, "skip", None),
                "seed": getattr(args, "seed", None),
                "sig_figs": args.sig_figs,
                "jobs": args.jobs,
                "profile_dir": args.profile_dir,
            },
        )
        toolkit = SpadLinkToolkit(**settings)
        return int(args.func(toolkit, args))
    except (
        SpadLinkError,
        OSError,
        ValueError,
        pd.errors.ParserError,
        pd.errors.EmptyDataError,
    ) as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1
