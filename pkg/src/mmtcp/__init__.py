"""Packet-level simulator of TCP congestion control over mmWave cellular links."""

__version__ = "0.1.0"
