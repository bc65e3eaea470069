"""`python -m resadapt` entry point."""

import sys

from ._main import main

sys.exit(main())
