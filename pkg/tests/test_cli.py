"""
Tests for the spad-link command line, driven through main().
"""

import io
import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from spad_link_module import __version__
from spad_link_module.cli import build_parser, main
from spad_link_module.config import CONFIG_ENV
from spad_link_module.detector_model import (
    afterpulse_probability,
    epitaxx_afterpulse,
)
from spad_link_module.profiles import PROFILE_DIR_ENV, parse_profiles


@pytest.fixture(autouse=True)
def clean_environment(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    monkeypatch.delenv(PROFILE_DIR_ENV, raising=False)


def run(argv: list[str], capsys: pytest.CaptureFixture[str]) -> tuple[int, str]:
    code = main(argv)
    return code, capsys.readouterr().out


class TestParser:
    """Test suite for argument parsing."""

    def test_command_required(self) -> None:
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_version(self, capsys: pytest.CaptureFixture[str]) -> None:
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_holdoff_maps_to_skip(self) -> None:
        args = build_parser().parse_args(
            ["sim", "--distance", "20", "--holdoff", "14"]
        )
        assert args.skip == 14
        assert args.gates == 10**6


class TestProfilesCommand:
    """Test suite for `spad-link profiles`."""

    def test_list(self, capsys: pytest.CaptureFixture[str]) -> None:
        code, out = run(["profiles", "list"], capsys)
        assert code == 0
        header, *rows = out.strip().splitlines()
        assert header.startswith("name,temperature_c,efficiency")
        assert any(row.startswith("epitaxx-60,") for row in rows)

    def test_show(self, capsys: pytest.CaptureFixture[str]) -> None:
        code, out = run(["profiles", "show", "epitaxx-60"], capsys)
        assert code == 0
        (profile,) = parse_profiles(out)
        assert profile.name == "epitaxx-60"
        assert "# min_skip at 1e+06 Hz for budget 0.01 = 2" in out

    def test_show_at_other_frequency(
        self, capsys: pytest.CaptureFixture[str]
    ) -> None:
        _, out = run(["profiles", "show", "epitaxx-60", "--frep", "2e6"], capsys)
        assert "# min_skip at 2e+06 Hz for budget 0.01 = 14" in out

    def test_unknown_profile(self, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["profiles", "show", "no-such-diode"]) == 1
        err = capsys.readouterr().err
        assert "spad-link: error:" in err
        assert "no-such-diode" in err

    def test_profile_dir(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        directory = tmp_path / "profiles"
        directory.mkdir()
        (directory / "lab.profile").write_text(
            "name = lab-diode\nefficiency = 0.1\ndark_p10 = 1e-5\n"
        )
        code, out = run(
            ["--profile-dir", str(directory), "profiles", "list"], capsys
        )
        assert code == 0
        assert "lab-diode," in out


class TestLinkCommands:
    """Test suite for `spad-link curve` and `spad-link solve`."""

    def test_curve_to_stdout(self, capsys: pytest.CaptureFixture[str]) -> None:
        code, out = run(["curve", "--dmax", "10", "--step", "5"], capsys)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].startswith("distance_km,t_link,p_t")
        assert len(lines) == 4

    def test_curve_to_file(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        out_path = tmp_path / "curve.csv"
        code, out = run(
            ["curve", "--dmax", "60", "--out", str(out_path)], capsys
        )
        assert code == 0
        frame = pd.read_csv(out_path)
        assert len(frame) == 61
        assert frame["afterpulse_term"].eq(0.0).all()
        manifest = json.loads((tmp_path / "curve.manifest.json").read_text())
        assert manifest["command"] == "curve"
        assert manifest["profile_name"] == "epitaxx-60"
        assert str(out_path) in manifest["outputs"]
        assert "manifest = " in out

    def test_curve_with_afterpulsing(
        self, capsys: pytest.CaptureFixture[str]
    ) -> None:
        _, out = run(
            ["curve", "--dmax", "0", "--afterpulsing", "--skip", "0"], capsys
        )
        frame = pd.read_csv(io.StringIO(out))
        assert frame["afterpulse_term"].iloc[0] > 0.0

    def test_solve(self, capsys: pytest.CaptureFixture[str]) -> None:
        code, out = run(["--sig-figs", "4", "solve", "--qber", "0.1"], capsys)
        assert code == 0
        assert "distance_km = 50.07" in out
        assert "note: published curve reports 54 km" in out

    def test_solve_other_target(
        self, capsys: pytest.CaptureFixture[str]
    ) -> None:
        _, out = run(["--sig-figs", "4", "solve", "--qber", "0.08"], capsys)
        assert "distance_km = " in out
        assert "note:" not in out

    def test_solve_unreachable(
        self, capsys: pytest.CaptureFixture[str]
    ) -> None:
        assert main(["solve", "--qber", "0.0"]) == 1
        assert "spad-link: error:" in capsys.readouterr().err


class TestSimCommands:
    """Test suite for `spad-link sim` and `spad-link replay`."""

    def test_sim_prints_summary(
        self, capsys: pytest.CaptureFixture[str]
    ) -> None:
        code, out = run(
            ["sim", "--distance", "10", "--gates", "20000", "--seed", "3"],
            capsys,
        )
        assert code == 0
        assert "distance_km = 10.0" in out
        assert "empirical_qber = " in out
        assert "manifest" not in out

    def test_sim_and_replay(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        summary = tmp_path / "sim.csv"
        events = tmp_path / "events.csv"
        code, _ = run(
            [
                "sim",
                "--distance", "5",
                "--gates", "20000",
                "--seed", "11",
                "--holdoff", "2",
                "--out", str(summary),
                "--events", str(events),
            ],
            capsys,
        )
        assert code == 0
        manifest_path = tmp_path / "sim.manifest.json"
        manifest = json.loads(manifest_path.read_text())
        assert manifest["seed"] == 11
        assert manifest["parameters"]["n_skip"] == 2
        assert set(manifest["outputs"]) == {str(summary), str(events)}

        code, out = run(["replay", str(manifest_path)], capsys)
        assert code == 0
        assert f"{summary}: reproduced" in out
        assert f"{events}: reproduced" in out

    def test_replay_detects_changed_output(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        summary = tmp_path / "sim.csv"
        main(["sim", "--distance", "5", "--gates", "5000", "--out", str(summary)])
        manifest_path = tmp_path / "sim.manifest.json"
        data = json.loads(manifest_path.read_text())
        data["outputs"][str(summary)] = "0" * 64
        manifest_path.write_text(json.dumps(data))
        capsys.readouterr()

        code, out = run(["replay", str(manifest_path)], capsys)
        assert code == 1
        assert "MISMATCH" in out

    def test_replay_rejects_other_commands(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        main(["curve", "--dmax", "1", "--out", str(tmp_path / "c.csv")])
        assert main(["replay", str(tmp_path / "c.manifest.json")]) == 1
        assert "only simulation" in capsys.readouterr().err

    def test_events_need_single_partition(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        code = main(
            [
                "sim",
                "--distance", "5",
                "--gates", "1000",
                "--partitions", "2",
                "--events", str(tmp_path / "e.csv"),
            ]
        )
        assert code == 1
        assert "single partition" in capsys.readouterr().err


class TestCharacterizeCommand:
    """Test suite for `spad-link characterize`."""

    @pytest.fixture
    def measurements(self, tmp_path: Path) -> Path:
        path = tmp_path / "counts.csv"
        path.write_text(
            "shutter,counts,integration_time_s,f_rep_hz,mu_bar\n"
            "closed,1000,1.0,1000000,\n"
            "open,10940,1.0,1000000,0.1\n"
        )
        return path

    def test_efficiency(
        self, measurements: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        code, out = run(
            ["characterize", "efficiency", "--input", str(measurements)],
            capsys,
        )
        assert code == 0
        frame = pd.read_csv(io.StringIO(out))
        (row,) = frame.itertuples(index=False)
        assert row.quantity == "detection_efficiency"
        assert row.value == pytest.approx(0.1, rel=1e-3)

    def test_dark_to_file(
        self,
        measurements: Path,
        tmp_path: Path,
        capsys: pytest.CaptureFixture[str],
    ) -> None:
        out_path = tmp_path / "dark.csv"
        code, _ = run(
            [
                "characterize",
                "dark",
                "--input", str(measurements),
                "--out", str(out_path),
            ],
            capsys,
        )
        assert code == 0
        assert pd.read_csv(out_path)["value"].tolist() == [1e-3]
        manifest = json.loads((tmp_path / "dark.manifest.json").read_text())
        assert manifest["command"] == "characterize dark"
        assert len(manifest["parameters"]["input_sha256"]) == 64

    def test_missing_input(self, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["characterize", "dark", "--input", "absent.csv"]) == 1
        assert "spad-link: error:" in capsys.readouterr().err

    def test_missing_columns(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        path = tmp_path / "bad.csv"
        path.write_text("shutter,counts\nclosed,3\n")
        assert main(["characterize", "dark", "--input", str(path)]) == 1
        assert "missing columns" in capsys.readouterr().err

    def test_non_numeric_value(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        path = tmp_path / "bad.csv"
        path.write_text(
            "shutter,counts,integration_time_s,f_rep_hz,mu_bar\n"
            "closed,abc,100,10000,\n"
        )
        assert main(["characterize", "dark", "--input", str(path)]) == 1
        err = capsys.readouterr().err
        assert "spad-link: error:" in err
        assert "Traceback" not in err


class TestCalibrateCommand:
    """Test suite for `spad-link calibrate`."""

    def test_dark_series(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        path = tmp_path / "dark.csv"
        rows = ["efficiency,dark_prob,series"]
        for label, p10 in (("cold", 2.8e-5), ("warm", 6e-5)):
            rows += [
                f"{eta},{p10 * math.exp(30.0 * (eta - 0.1))!r},{label}"
                for eta in (0.05, 0.1, 0.2)
            ]
        path.write_text("\n".join(rows) + "\n")
        code, out = run(["calibrate", "dark", "--input", str(path)], capsys)
        assert code == 0
        profiles = {p.name: p for p in parse_profiles(out)}
        assert set(profiles) == {"epitaxx-60-cold", "epitaxx-60-warm"}
        assert profiles["epitaxx-60-warm"].dark.p10 == pytest.approx(6e-5)
        assert profiles["epitaxx-60-cold"].dark.slope == pytest.approx(30.0)

    def test_afterpulse_from_double_gate(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        delays_us = np.geomspace(0.05, 50.0, 12)
        p_ap = afterpulse_probability(epitaxx_afterpulse(), delays_us * 1e-6)
        frame = pd.DataFrame(
            {
                "dt_us": delays_us,
                "n_first": 10**6,
                "n_coinc": np.round((p_ap + 1e-5) * 10**6).astype(int),
                "dark_prob": 1e-5,
            }
        )
        path = tmp_path / "double_gate.csv"
        frame.to_csv(path, index=False)
        out_path = tmp_path / "fitted.profile"
        code, _ = run(
            [
                "calibrate",
                "afterpulse",
                "--input", str(path),
                "--terms", "2",
                "--name", "fitted",
                "--out", str(out_path),
            ],
            capsys,
        )
        assert code == 0
        text = out_path.read_text()
        assert text.startswith("# chi2 = ")
        (profile,) = parse_profiles(text)
        assert profile.name == "fitted"
        assert len(profile.afterpulse.terms) == 2
        assert (tmp_path / "fitted.manifest.json").exists()

    def test_input_required(self, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["calibrate", "dark"]) == 1
        assert "needs --input" in capsys.readouterr().err
