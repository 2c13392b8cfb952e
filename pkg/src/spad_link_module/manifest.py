"""
This module provides run manifests: a JSON record written next to every data
file, holding the command, the resolved parameters, the profile used and a
digest of each output so that a run can be reproduced and checked.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .base import ConfigurationError
from .detector_model import DetectorProfile
from .profiles import format_profile, parse_profiles, profile_fingerprint

UTC = timezone.utc  # datetime.UTC alias (3.11+)

__all__ = [
    "MANIFEST_SUFFIX",
    "RunManifest",
    "file_digest",
    "manifest_path_for",
]

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


def file_digest(path: str | os.PathLike[str]) -> str:
    """SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def manifest_path_for(output: str | os.PathLike[str]) -> Path:
    """``curve.csv`` -> ``curve.manifest.json``."""
    output = Path(output)
    return output.with_name(output.stem + MANIFEST_SUFFIX)


@dataclass
class RunManifest:
    """
    Reproducibility record of one command run.

    Attributes:
        command: Command name, e.g. ``sim``.
        parameters: Resolved parameters, JSON serializable.
        tool_version: Package version that produced the outputs.
        profile_name: Name of the detector profile, if one was used.
        profile_fingerprint: SHA-256 of the profile text.
        profile_text: The profile in the profile text format.
        seed: Simulation seed, if any.
        outputs: Output path -> SHA-256 of its contents.
        created: UTC timestamp, ISO 8601.
    """

    command: str
    parameters: dict[str, Any]
    tool_version: str
    profile_name: str | None = None
    profile_fingerprint: str | None = None
    profile_text: str | None = None
    seed: int | None = None
    outputs: dict[str, str] = field(default_factory=dict)
    created: str = field(
        default_factory=lambda: datetime.now(UTC).isoformat(timespec="seconds")
    )

    @classmethod
    def for_profile(
        cls,
        command: str,
        parameters: dict[str, Any],
        tool_version: str,
        profile: DetectorProfile | None = None,
        seed: int | None = None,
    ) -> RunManifest:
        return cls(
            command=command,
            parameters=parameters,
            tool_version=tool_version,
            profile_name=profile.name if profile else None,
            profile_fingerprint=profile_fingerprint(profile) if profile else None,
            profile_text=format_profile(profile) if profile else None,
            seed=seed,
        )

    def record_output(self, path: str | os.PathLike[str]) -> None:
        """Add the digest of an output file."""
        self.outputs[str(path)] = file_digest(path)

    def profile(self) -> DetectorProfile:
        """
        Rebuild the profile stored in the manifest.

        Raises:
            ConfigurationError: If there is no profile or its fingerprint
                does not match the stored text.
        """
        if not self.profile_text:
            raise ConfigurationError(f"manifest of '{self.command}' has no profile")
        (profile,) = parse_profiles(self.profile_text)
        if profile_fingerprint(profile) != self.profile_fingerprint:
            raise ConfigurationError(
                f"profile '{profile.name}' does not match its fingerprint"
            )
        return profile

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path: str | os.PathLike[str]) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        logger.debug(f"Wrote manifest {path}")
        return path

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> RunManifest:
        """
        Read a manifest.

        Raises:
            ConfigurationError: If the file is not a manifest.
        """
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**data)
        except (json.JSONDecodeError, TypeError) as e:
            raise ConfigurationError(f"{path}: not a run manifest: {e}") from e
