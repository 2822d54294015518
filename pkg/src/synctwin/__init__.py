"""Desk-scale digital twin of a fronthaul PTP synchronization plane with
attack injection, labeled dataset generation, and sliding-window detectors."""

__version__ = "0.1.0"
