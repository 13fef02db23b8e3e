"""
Command-line application package
File I/O, the invariant suite, reports and the argument parser
"""

from .cli import build_parser, main

__version__ = "1.0.0"

__all__ = [
    'build_parser',
    'main',
]
