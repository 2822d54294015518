"""Synthetic background traffic traces.

Four named profiles stand in for distinct captured fronthaul workloads; each
yields a deterministic, sorted JSONL trace of non-PTP frames given a seed.
Arrivals are Poisson with an on/off burst overlay; sizes are drawn from a
small set of common frame lengths.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .config import ConfigError
from .netsim import TraceRecord

IPV4_ETHERTYPE = 0x0800


@dataclass(frozen=True)
class BackgroundProfile:
    name: str
    rate_fps: float            # mean frame rate outside bursts
    burst_rate_fps: float      # mean frame rate inside bursts
    burst_len_s: float
    burst_gap_s: float
    n_devices: int
    sizes: tuple[int, ...]
    size_weights: tuple[int, ...]


PROFILES: dict[str, BackgroundProfile] = {
    "light": BackgroundProfile("light", 60.0, 120.0, 0.5, 8.0, 4,
                               (64, 128, 512, 1024), (4, 3, 2, 1)),
    "steady": BackgroundProfile("steady", 150.0, 220.0, 1.0, 6.0, 6,
                                (64, 128, 256, 1024, 1500), (3, 3, 2, 2, 2)),
    "bursty": BackgroundProfile("bursty", 80.0, 600.0, 0.3, 3.0, 5,
                                (64, 512, 1500), (2, 3, 3)),
    "heavy": BackgroundProfile("heavy", 250.0, 400.0, 2.0, 4.0, 8,
                               (128, 512, 1024, 1500), (1, 2, 3, 4)),
}


def _device_macs(rng: random.Random, count: int) -> list[str]:
    macs = []
    for _ in range(count):
        suffix = [rng.randrange(256) for _ in range(3)]
        macs.append("0e:b0:" + ":".join(f"{b:02x}" for b in [rng.randrange(256)] + suffix))
    return macs


def generate_background(profile_name: str, duration_s: float, seed: int | str) -> list[TraceRecord]:
    """Deterministic sorted trace of non-PTP frames for one profile."""
    profile = PROFILES.get(profile_name)
    if profile is None:
        raise ConfigError(f"unknown background profile {profile_name!r}; "
                          f"choose from {sorted(PROFILES)}")
    rng = random.Random(f"{seed}/background/{profile_name}")
    macs = _device_macs(rng, profile.n_devices)
    duration_ns = round(duration_s * 1e9)
    records: list[TraceRecord] = []
    t = 0.0
    burst_until = -1.0
    next_burst = rng.expovariate(1.0 / profile.burst_gap_s)
    while True:
        in_burst = t < burst_until
        rate = profile.burst_rate_fps if in_burst else profile.rate_fps
        t += rng.expovariate(rate)
        if not in_burst and t >= next_burst:
            burst_until = t + rng.uniform(0.5, 1.5) * profile.burst_len_s
            next_burst = burst_until + rng.expovariate(1.0 / profile.burst_gap_s)
        ts_ns = round(t * 1e9)
        if ts_ns >= duration_ns:
            break
        src, dst = rng.sample(macs, 2)
        size = rng.choices(profile.sizes, weights=profile.size_weights)[0]
        records.append(TraceRecord(ts_ns, src, dst, IPV4_ETHERTYPE, size))
    records.sort(key=lambda r: r.ts_ns)
    return records
