#!/usr/bin/env python3
"""
Script to generate the API documentation of spad_link_module with pdoc.
"""

import shutil
import subprocess
import sys
from pathlib import Path


def check_pdoc_available() -> bool:
    """Check if pdoc is available in the current environment."""
    try:
        result = subprocess.run(
            [sys.executable, "-m", "pdoc", "--version"],
            capture_output=True,
            text=True,
        )
        return result.returncode == 0
    except Exception:
        return False


def get_version() -> str:
    """Get the current version from the package."""
    src_path = Path(__file__).parent.parent / "src"
    sys.path.insert(0, str(src_path))
    try:
        from spad_link_module import __version__
    except ImportError as e:
        print(f"❌ Error importing version: {e}")
        sys.exit(1)
    return __version__


def main() -> None:
    """Generate documentation into ``docs/``."""
    if not check_pdoc_available():
        print("❌ pdoc is not installed. Install the dev extra:")
        print("  pip install -e .[dev]")
        sys.exit(1)

    project_root = Path(__file__).parent.parent
    version = get_version()
    print(f"📦 Current version: {version}")

    docs_dir = project_root / "docs"
    if docs_dir.exists():
        print("Removing existing docs directory...")
        shutil.rmtree(docs_dir)

    print("Generating documentation with pdoc...")
    try:
        subprocess.run(
            [
                sys.executable,
                "-m",
                "pdoc",
                "--output-directory",
                str(docs_dir),
                "--docformat",
                "google",
                "--math",
                "--search",
                "--footer-text",
                f"SPAD Link Module v{version}",
                str(project_root / "src" / "spad_link_module"),
            ],
            check=True,
        )
    except subprocess.CalledProcessError as e:
        print(f"❌ Error generating documentation: {e}")
        sys.exit(1)
    print(f"✅ Documentation is available in: {docs_dir}")


if __name__ == "__main__":
    main()
