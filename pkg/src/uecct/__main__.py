"""Entry point for ``python -m uecct``."""

import sys

from uecct.cli import main

if __name__ == "__main__":
    sys.exit(main())
