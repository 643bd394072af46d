"""``python -m fsimlab`` runs the command-line interface."""

import sys

from fsimlab.cli import main

sys.exit(main())
