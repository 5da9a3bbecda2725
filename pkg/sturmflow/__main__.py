#!/usr/bin/env python3
"""Entry point for sturmflow.

This allows the package to be run directly using `python -m sturmflow`.
"""

from sturmflow.cli import main

if __name__ == "__main__":
    main()
