"""Detectors over PTP packet streams: a rule-based heuristic and two learned
window classifiers (CNN and transformer encoder) with a shared verdict type."""
from __future__ import annotations

from dataclasses import dataclass

from ..config import ConfigError


@dataclass
class Verdict:
    """One detection decision over a span of packets."""

    probability: float
    decision: int
    first_ts: int
    last_ts: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        if self.decision not in (0, 1):
            raise ValueError("decision must be 0 or 1")


def decide(probability: float, threshold: float = 0.5) -> int:
    """1 iff probability >= threshold; threshold tunes the FP/FN tradeoff."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold {threshold} outside [0, 1]")
    return 1 if probability >= threshold else 0
