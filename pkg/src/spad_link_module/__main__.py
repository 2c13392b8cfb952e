"""Run the command-line interface with ``python -m spad_link_module``."""

import sys

from .cli import main

sys.exit(main())
