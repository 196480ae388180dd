"""Entry point: `python main.py <command> ...` (see `python main.py --help`)."""

import logging
import sys

from arscale.cli import main

# Configure logging; stdout stays reserved for JSON / table output
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    stream=sys.stderr,
)

if __name__ == "__main__":
    sys.exit(main())
