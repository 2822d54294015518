"""Key-value configuration handling shared by the CLI and the simulator.

Config files are plain text, one ``dotted.key = value`` per line, with ``#``
comments.  Values are coerced to int, then float, then bool, then kept as
strings.  The ``WORKBENCH_SEED`` environment variable overrides ``sim.seed``
wherever a seed is resolved.
"""
from __future__ import annotations

import os
from typing import Any, Mapping

SEED_ENV_VAR = "WORKBENCH_SEED"

DEFAULTS: dict[str, Any] = {
    "sim.seed": 1,
    "sim.duration_s": 300,
    "sim.resolution_ns": 1,
    "clock.du.freq_error_ppb": 0,
    "clock.du.noise_std_ns": 0,
    "clock.ru.freq_error_ppb": 1000,
    "clock.ru.noise_std_ns": 0,
    "servo.prop_gain": 0.7,
    "servo.integ_gain": 0.3,
    "servo.max_step_ns": 10_000_000,
    "servo.holdover_timeout_multiplier": 3,
    "ptp.announce_interval_ns": 125_000_000,
    "ptp.sync_interval_ns": 62_500_000,
    "ptp.followup_gap_ns": 20_000,
    "ptp.announce_timeout_intervals": 3,
    "link.base_latency_ns": 30,
    "link.jitter_std_ns": 4,
    "link.load_jitter_coeff": 0.0005,
    "attack.kind": "none",
    "attack.schedule": "30/30",
    "attack.start_s": 60.0,
    "attack.replay_delay_ns": 1_000_000,
    "attack.flood_rate_pps": 1000,
    "net.background": "",
}


class ConfigError(Exception):
    """Invalid configuration; maps to process exit code 2."""


def coerce(text: str) -> Any:
    text = text.strip()
    for caster in (int, float):
        try:
            return caster(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def load_config(path: str) -> dict[str, Any]:
    """Parse a key-value config file into a flat dict of dotted keys."""
    values: dict[str, Any] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
                key, _, value = line.partition("=")
                key = key.strip()
                if not key:
                    raise ConfigError(f"{path}:{lineno}: empty key")
                values[key] = coerce(value)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def merged_config(file_values: Mapping[str, Any] | None = None,
                  overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Defaults, then file values, then explicit overrides."""
    out = dict(DEFAULTS)
    if file_values:
        out.update(file_values)
    if overrides:
        out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def resolve_seed(config_seed: int) -> int:
    """Config seed unless WORKBENCH_SEED is set in the environment."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw == "":
        return int(config_seed)
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc
