#!/usr/bin/env python3
"""
Entry point for the heterogeneous-memory power profiler
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
