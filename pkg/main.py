"""Entry point for the output-constrained quantization laboratory."""

from __future__ import annotations

import sys

from oclab.cli import main

if __name__ == "__main__":
    sys.exit(main())
