"""
Tests for the __init__ module.

This module contains tests for the SpadLinkToolkit class: settings,
profile registry setup and the per-domain API objects.
"""

import re
from pathlib import Path

import pytest

from spad_link_module import (
    DEFAULT_SETTINGS,
    ConfigurationError,
    InvalidDataError,
    NoPeakError,
    ProfileNotFoundError,
    SpadLinkError,
    SpadLinkToolkit,
    __version__,
)
from spad_link_module.calibration import CalibrationAPI
from spad_link_module.characterize import CharacterizeAPI
from spad_link_module.detector_model import DetectorsAPI
from spad_link_module.gated_sim import SimulatorAPI
from spad_link_module.link_model import LinksAPI
from spad_link_module.profiles import PROFILE_DIR_ENV, ProfileRegistry


@pytest.fixture(autouse=True)
def no_profile_dir(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(PROFILE_DIR_ENV, raising=False)


class TestSpadLinkToolkit:
    """Test suite for SpadLinkToolkit class."""

    def test_version(self) -> None:
        """Test the version string looks like a release number."""
        assert re.match(r"^\d+\.\d+\.\d+", __version__)

    def test_init_defaults(self) -> None:
        """Test SpadLinkToolkit initialization with no arguments."""
        toolkit = SpadLinkToolkit()

        assert toolkit.settings == DEFAULT_SETTINGS
        assert "epitaxx-60" in toolkit.registry
        assert toolkit.profile.name == "epitaxx-60"

    def test_init_with_settings(self) -> None:
        """Test explicit settings override the defaults."""
        toolkit = SpadLinkToolkit(f_rep=2e6, n_skip=14, profile="epitaxx-40")

        assert toolkit.settings["f_rep"] == 2e6
        assert toolkit.settings["n_skip"] == 14
        assert toolkit.profile.name == "epitaxx-40"

    def test_init_with_unknown_setting(self) -> None:
        """Test unknown settings are rejected."""
        with pytest.raises(ConfigurationError):
            SpadLinkToolkit(frequency=1e6)

    def test_init_with_registry(self) -> None:
        """Test a given registry is used as is."""
        registry = ProfileRegistry()
        toolkit = SpadLinkToolkit(registry=registry)

        assert toolkit.registry is registry
        with pytest.raises(ProfileNotFoundError):
            _ = toolkit.profile

    def test_init_with_profile_dir(self, tmp_path: Path) -> None:
        """Test profiles are loaded from a directory."""
        (tmp_path / "lab.profile").write_text(
            "name = lab-diode\nefficiency = 0.2\ndark_p10 = 1e-5\n"
        )
        toolkit = SpadLinkToolkit(profile_dir=tmp_path, profile="lab-diode")

        assert toolkit.profile.efficiency == 0.2

    def test_init_with_profile_dir_from_env(
        self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Test the profile directory may come from the environment."""
        (tmp_path / "lab.profile").write_text(
            "name = lab-diode\nefficiency = 0.2\ndark_p10 = 1e-5\n"
        )
        monkeypatch.setenv(PROFILE_DIR_ENV, str(tmp_path))

        assert "lab-diode" in SpadLinkToolkit().registry

    def test_init_with_missing_profile_dir(self, tmp_path: Path) -> None:
        """Test a missing profile directory is a configuration error."""
        with pytest.raises(ConfigurationError, match="does not exist"):
            SpadLinkToolkit(profile_dir=tmp_path / "absent")

    def test_init_initializes_all_submodules(self) -> None:
        """Test every domain API is set up."""
        toolkit = SpadLinkToolkit()

        assert isinstance(toolkit.detectors, DetectorsAPI)
        assert isinstance(toolkit.links, LinksAPI)
        assert isinstance(toolkit.simulator, SimulatorAPI)
        assert isinstance(toolkit.characterize, CharacterizeAPI)
        assert isinstance(toolkit.calibration, CalibrationAPI)

    def test_init_submodules_have_correct_client(self) -> None:
        """Test every domain API holds the toolkit."""
        toolkit = SpadLinkToolkit()

        for api in (
            toolkit.detectors,
            toolkit.links,
            toolkit.simulator,
            toolkit.characterize,
            toolkit.calibration,
        ):
            assert api.client is toolkit

    def test_exception_classes_inheritance(self) -> None:
        """Test the exception hierarchy."""
        assert issubclass(ConfigurationError, SpadLinkError)
        assert issubclass(NoPeakError, InvalidDataError)
        assert issubclass(ProfileNotFoundError, KeyError)
