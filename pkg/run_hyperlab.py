#!/usr/bin/env python3
"""
Launcher for the hyperlab command line
"""

import os
import sys
from pathlib import Path

# Make the package importable without installing it
sys.path.insert(0, str(Path(__file__).parent))

from hyperlab.main import main


def _warn_about_environment():
    """Point out settings that are usually worth choosing explicitly"""
    if not os.getenv("HYPERLAB_THREADS"):
        print("Note: HYPERLAB_THREADS is not set, replicas run on a single worker.")
        print("Add HYPERLAB_THREADS=<cores> to a .env file in the project root to parallelise.\n")


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] in ("chain", "counterexamples"):
        _warn_about_environment()
    sys.exit(main())
