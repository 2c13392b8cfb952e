#!/usr/bin/env python3
"""
Test runner script for spad_link_module.

Wraps pytest with the options used day to day: coverage, a single test
target and ``--fast``, which skips the long Monte Carlo and global-fit
tests marked ``slow``.
"""

import subprocess
import sys
from pathlib import Path


def run_tests(
    verbose: bool = False,
    coverage: bool = False,
    fast: bool = False,
    specific_test: str | None = None,
) -> subprocess.CompletedProcess[bytes]:
    """Run the test suite with the specified options."""
    project_root = Path(__file__).parent.parent

    cmd = [sys.executable, "-m", "pytest"]

    if verbose:
        cmd.append("-v")

    if coverage:
        cmd.extend(
            ["--cov=src/spad_link_module", "--cov-report=term-missing"]
        )

    if fast:
        cmd.extend(["-m", "not slow"])

    if specific_test:
        cmd.append(specific_test)

    print(f"Running tests with command: {' '.join(cmd)}")
    return subprocess.run(cmd, cwd=project_root)


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(
        description="Run tests for spad_link_module"
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Verbose pytest output"
    )
    parser.add_argument(
        "-c", "--coverage", action="store_true", help="Report coverage"
    )
    parser.add_argument(
        "-f", "--fast", action="store_true", help="Skip tests marked slow"
    )
    parser.add_argument(
        "-t", "--test", type=str, help="A specific test file or test id"
    )

    if len(sys.argv) == 1:
        args = parser.parse_args(["-v"])
    else:
        args = parser.parse_args()

    result = run_tests(
        verbose=args.verbose,
        coverage=args.coverage,
        fast=args.fast,
        specific_test=args.test,
    )
    sys.exit(result.returncode)
