#!/usr/bin/env python3
"""
CA-GST toolkit - Main Application Entry Point

Designs context-aware gate set tomography experiments, runs them on virtual QPUs,
reconstructs the gate set and reports per-context error metrics.
"""

import sys
from pathlib import Path

# Make the src package importable when run from a checkout
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nStopped by user.")
        sys.exit(1)
