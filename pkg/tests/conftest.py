"""Shared fixtures: small simulated runs and a tiny trained model artifact.

Session-scoped so the expensive pieces (simulation, training) happen once.
"""
from __future__ import annotations

import pytest

from synctwin.dataset import (Scaler, build_dataset, load_mac_map,
                              load_split_chunks, windows_from_chunks)
from synctwin.twin import ScenarioConfig, run_scenario, write_run


@pytest.fixture(scope="session")
def small_runs(tmp_path_factory):
    """Three 150 s runs (spoof, replay, benign) written to disk."""
    base = tmp_path_factory.mktemp("small_runs")
    specs = [
        ("spoof", "30/30", 150.0, 201),
        ("replay", "40/20", 150.0, 202),
        ("none", "30/30", 60.0, 203),
    ]
    dirs = []
    for kind, schedule, duration, seed in specs:
        cfg = ScenarioConfig(seed=seed, duration_s=duration, attack_kind=kind,
                             schedule=schedule, background="light")
        out = str(base / f"{kind}_{seed}")
        write_run(run_scenario(cfg), out)
        dirs.append(out)
    return dirs


@pytest.fixture(scope="session")
def small_dataset(small_runs, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("small_dataset") / "ds")
    manifest = build_dataset(small_runs, out, chunk_size=1000, seed=11)
    return out, manifest


@pytest.fixture(scope="session")
def tiny_artifact(small_dataset, tmp_path_factory):
    """A quickly trained transformer artifact for pipeline and CLI tests."""
    from synctwin.detect.models import ModelConfig, save_artifact
    from synctwin.detect.train import TrainConfig, train

    data_dir, manifest = small_dataset
    chunk_size = manifest["chunk_size"]
    train_chunks = load_split_chunks(data_dir, "train", chunk_size)
    val_chunks = load_split_chunks(data_dir, "validation", chunk_size)
    windows_train = windows_from_chunks(train_chunks, 32, 2)
    windows_val = windows_from_chunks(val_chunks, 32, 2)
    scaler = Scaler.fit(rec for chunk in train_chunks for rec in chunk)
    config = ModelConfig(arch="transformer", s=32, n_head=2)
    model, history = train(config, TrainConfig(seed=5, max_epochs=4),
                           windows_train, windows_val, scaler)
    path = str(tmp_path_factory.mktemp("artifact") / "model.pt")
    save_artifact(path, model, config, scaler, load_mac_map(data_dir), history)
    return path


@pytest.fixture()
def clean_seed_env(monkeypatch):
    monkeypatch.delenv("WORKBENCH_SEED", raising=False)
    return None
