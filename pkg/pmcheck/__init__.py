"""
pmcheck
Trace-based crash-consistency checking for persistent-memory programs
"""

__version__ = "0.1.0"
