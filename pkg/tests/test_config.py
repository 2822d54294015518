from __future__ import annotations

import pytest

from synctwin.config import (ConfigError, DEFAULTS, coerce, load_config,
                             merged_config, resolve_seed)


def test_coerce_int_float_bool_string():
    assert coerce("42") == 42
    assert isinstance(coerce("42"), int)
    assert coerce("0.5") == 0.5
    assert coerce("true") is True
    assert coerce("False") is False
    assert coerce("30/30") == "30/30"
    assert coerce("  spoof  ") == "spoof"


def test_load_config_parses_keys_and_comments(tmp_path):
    path = tmp_path / "twin.conf"
    path.write_text(
        "# comment line\n"
        "sim.seed = 9\n"
        "attack.kind = replay   # trailing comment\n"
        "\n"
        "link.base_latency_ns=55\n")
    values = load_config(str(path))
    assert values == {"sim.seed": 9, "attack.kind": "replay",
                      "link.base_latency_ns": 55}


def test_load_config_rejects_malformed_lines(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("just some words\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_load_config_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/twin.conf")


def test_merged_config_precedence():
    merged = merged_config({"sim.seed": 5}, {"sim.seed": 7, "sim.duration_s": None})
    assert merged["sim.seed"] == 7
    # None overrides are skipped, file and defaults shine through
    assert merged["sim.duration_s"] == DEFAULTS["sim.duration_s"]
    assert merged["attack.kind"] == "none"


def test_resolve_seed_env_override(monkeypatch):
    monkeypatch.delenv("WORKBENCH_SEED", raising=False)
    assert resolve_seed(3) == 3
    monkeypatch.setenv("WORKBENCH_SEED", "99")
    assert resolve_seed(3) == 99
    monkeypatch.setenv("WORKBENCH_SEED", "")
    assert resolve_seed(3) == 3
    monkeypatch.setenv("WORKBENCH_SEED", "zebra")
    with pytest.raises(ConfigError):
        resolve_seed(3)
