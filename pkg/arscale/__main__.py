import sys

from arscale.cli import main

sys.exit(main())
