"""Multipath low-latency frame transport with a trace-driven link emulator."""
__version__ = "0.1.0"
