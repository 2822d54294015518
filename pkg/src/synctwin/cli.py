"""Command-line interface.

Subcommands: simulate (run the twin, write capture artifacts), dataset (runs
to labeled splits), train, eval, monitor (detection pipeline over a capture),
experiment (twin + pipeline + aligned report).  Exit codes: 0 success, 2
configuration error, 3 runtime abort.  WORKBENCH_SEED overrides config seeds.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

from .config import ConfigError, load_config, merged_config, resolve_seed
from .twin import RunAbort, ScenarioConfig, run_scenario, write_run

ATTACK_CHOICES = ("none", "spoof", "replay", "flood")
SCHEDULE_METAVAR = "{30/30,40/20,50/10,cont,rand}"


def _add_scenario_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int, help="simulation seed")
    parser.add_argument("--duration", type=float, metavar="SECONDS")
    parser.add_argument("--attack", choices=ATTACK_CHOICES)
    parser.add_argument("--schedule", metavar=SCHEDULE_METAVAR,
                        help="attack/recovery cycle, continuous, or randomized")
    parser.add_argument("--attack-start", type=float, metavar="SECONDS")
    parser.add_argument("--replay-delay-ms", type=float)
    parser.add_argument("--flood-rate", type=float, metavar="PPS")
    parser.add_argument("--background",
                        help="background profile name or non-PTP trace file")


def _scenario_from_args(args: argparse.Namespace) -> ScenarioConfig:
    file_values = load_config(args.config) if args.config else None
    replay_delay_ns = None
    if args.replay_delay_ms is not None:
        replay_delay_ns = round(args.replay_delay_ms * 1_000_000)
    overrides = {
        "sim.seed": args.seed,
        "sim.duration_s": args.duration,
        "attack.kind": args.attack,
        "attack.schedule": args.schedule,
        "attack.start_s": args.attack_start,
        "attack.replay_delay_ns": replay_delay_ns,
        "attack.flood_rate_pps": args.flood_rate,
        "net.background": args.background,
    }
    merged = merged_config(file_values, overrides)
    merged["sim.seed"] = resolve_seed(merged["sim.seed"])
    return ScenarioConfig.from_mapping(merged)


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _scenario_from_args(args)
    result = run_scenario(cfg)
    paths = write_run(result, args.out)
    print(f"run {result.run_id}: {len(result.mirror)} frames, "
          f"{len(result.estimates)} sync estimates, "
          f"{len(result.attack_log.entries)} attack windows -> {args.out}")
    for name in ("trace", "origins", "attacks", "estimates", "meta"):
        print(f"  {name}: {paths[name]}")
    return 0


def cmd_dataset(args: argparse.Namespace) -> int:
    from .dataset import build_dataset

    seed = resolve_seed(args.seed)
    manifest = build_dataset(args.runs, args.out, chunk_size=args.chunk_size, seed=seed)
    print(f"dataset: {manifest['records']} records "
          f"({manifest['malicious_records']} malicious), chunks "
          f"{manifest['chunks']} -> {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from .dataset import (Scaler, load_mac_map, load_manifest,
                          load_split_chunks, windows_from_chunks)
    from .detect.models import ModelConfig, save_artifact
    from .detect.train import TrainConfig, train

    seed = resolve_seed(args.seed)
    manifest = load_manifest(args.data)
    chunk_size = manifest["chunk_size"]
    train_chunks = load_split_chunks(args.data, "train", chunk_size)
    val_chunks = load_split_chunks(args.data, "validation", chunk_size)
    model_config = ModelConfig(arch=args.arch, s=args.s, n_head=args.heads,
                               threshold=args.threshold, w_fp=args.w_fp, w_fn=args.w_fn)
    train_config = TrainConfig(lr=args.lr, patience=args.patience,
                               max_epochs=args.max_epochs, batch_size=args.batch_size,
                               seed=seed)
    train_windows = windows_from_chunks(train_chunks, args.s, args.stride)
    val_windows = windows_from_chunks(val_chunks, args.s, args.stride)
    scaler = Scaler.fit(rec for chunk in train_chunks for rec in chunk)
    started = time.monotonic()
    model, history = train(model_config, train_config, train_windows, val_windows, scaler)
    elapsed = time.monotonic() - started
    mac_map = load_mac_map(args.data)
    save_artifact(args.out, model, model_config, scaler, mac_map, history)
    summary = history[-1]
    print(f"trained {args.arch} (S={args.s}) on {len(train_windows)} windows in "
          f"{elapsed:.1f} s; best epoch {summary['best_epoch']} "
          f"val loss {summary['best_val_loss']:.4f} -> {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .dataset import load_manifest, load_split_chunks, windows_from_chunks
    from .detect.models import load_artifact
    from .detect.train import evaluate

    model, config, scaler, _, _ = load_artifact(args.model)
    manifest = load_manifest(args.data)
    chunks = load_split_chunks(args.data, args.split, manifest["chunk_size"])
    windows = windows_from_chunks(chunks, config.s, args.stride)
    threshold = config.threshold if args.threshold is None else args.threshold
    metrics, _ = evaluate(model, windows, scaler, threshold)
    print(json.dumps({"split": args.split, "windows": len(windows),
                      "threshold": threshold, **metrics}, sort_keys=True))
    return 0


def cmd_monitor(args: argparse.Namespace) -> int:
    from .detect.models import load_artifact
    from .netsim import read_trace
    from .pipeline import run_monitor

    model, config, scaler, mapper, _ = load_artifact(args.model)
    records = read_trace(args.trace)
    log, counters = run_monitor(records, model, config, scaler, mapper,
                                stride=args.stride, threshold=args.threshold,
                                threaded=args.threaded)
    if args.out:
        log.write(args.out)
    flagged = sum(e.decision for e in log.entries)
    print(f"monitor: {counters.frames_total} frames, {counters.frames_ptp} PTP, "
          f"{counters.verdicts} verdicts, {flagged} flagged"
          + (f" -> {args.out}" if args.out else ""))
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    from .detect.models import load_artifact
    from .pipeline import run_experiment

    cfg = _scenario_from_args(args)
    model, config, scaler, mapper, _ = load_artifact(args.model)
    report, result, log = run_experiment(cfg, model, config, scaler, mapper,
                                         stride=args.stride, threshold=args.threshold,
                                         threaded=args.threaded)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    metrics = report["metrics"]
    print(f"experiment {result.run_id}: {len(log.entries)} verdicts, "
          f"accuracy {metrics['accuracy']}, recall {metrics['recall']} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synctwin",
        description="PTP synchronization-plane digital twin with attack "
                    "injection and sliding-window detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the twin and write capture artifacts")
    _add_scenario_args(p)
    p.add_argument("--out", required=True, help="output run directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="label and split captured runs")
    p.add_argument("--runs", nargs="+", required=True, help="run directories")
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-size", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a window classifier")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="model artifact path")
    p.add_argument("--arch", choices=("cnn", "transformer"), default="transformer")
    p.add_argument("--s", type=int, choices=(16, 32, 40), default=32,
                   help="window length in packets")
    p.add_argument("--heads", type=int, choices=(2, 3), default=2)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--w-fp", type=float, default=1.0)
    p.add_argument("--w-fn", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("monitor", help="run the detection pipeline over a capture")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True, help="trace JSONL file")
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--threaded", action="store_true",
                   help="run the three stages as threads")
    p.add_argument("--out", help="decision log JSONL path")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("experiment", help="full twin + detection protocol")
    _add_scenario_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--threaded", action="store_true")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RunAbort as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
