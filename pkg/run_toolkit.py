#!/usr/bin/env python3
"""
Convenience script to run the deconvolution toolkit from a source checkout
"""

import sys
from pathlib import Path

# Add the src directory to Python path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from iterdeconv.cli import dispatch

if __name__ == "__main__":
    try:
        sys.exit(dispatch())
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        sys.exit(130)
