"""Three-stage sliding-window detection pipeline and the full experiment
protocol.

Stages: acquire (filter the capture to PTP frames), preprocess (feature
extraction, first-seen MAC-map extension, scaling), decide (length-S window,
one verdict per stride of new packets, stamped with the newest packet's
capture timestamp).  The stages can run as three threads joined by bounded
FIFO queues or strictly sequentially; both modes produce identical decision
logs, which is what makes the threaded path testable.
"""
from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import torch

from .config import ConfigError
from .dataset import (FeatureRecord, MacMapper, Scaler, extract_features,
                      featurize, make_windows)
from .detect import Verdict, decide
from .detect.models import ModelConfig, predict_probability
from .detect.heuristic import confusion_metrics
from .netsim import TraceRecord
from .twin import RunAbort, RunResult, ScenarioConfig, estimates_to_csv, run_scenario

DEFAULT_QUEUE_CAPACITY = 256
DEFAULT_STRIDE = 2

_SENTINEL = None


@dataclass
class DecisionEntry:
    ts_ns: int          # capture timestamp of the newest window record
    first_ts: int
    last_ts: int
    probability: float
    decision: int

    def to_json_line(self) -> str:
        return json.dumps({"ts_ns": self.ts_ns, "first_ts": self.first_ts,
                           "last_ts": self.last_ts, "probability": self.probability,
                           "decision": self.decision}, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "DecisionEntry":
        obj = json.loads(line)
        return cls(int(obj["ts_ns"]), int(obj["first_ts"]), int(obj["last_ts"]),
                   float(obj["probability"]), int(obj["decision"]))


@dataclass
class DecisionLog:
    entries: list[DecisionEntry] = field(default_factory=list)

    def add(self, entry: DecisionEntry) -> None:
        if self.entries and entry.ts_ns < self.entries[-1].ts_ns:
            raise ValueError("decision log must stay chronological")
        self.entries.append(entry)

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(entry.to_json_line())
                fh.write("\n")

    @classmethod
    def read(cls, path: str) -> "DecisionLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    log.add(DecisionEntry.from_json_line(line))
        return log


@dataclass
class PipelineCounters:
    frames_total: int = 0
    frames_ptp: int = 0
    features_out: int = 0
    verdicts: int = 0


def stage_acquire(records: Iterable[TraceRecord],
                  counters: PipelineCounters) -> Iterator[TraceRecord]:
    """Keep PTP-ethertype frames only, in capture order."""
    for record in records:
        counters.frames_total += 1
        if record.is_ptp:
            counters.frames_ptp += 1
            yield record


def stage_preprocess(records: Iterable[TraceRecord], mapper: MacMapper,
                     scaler: Scaler,
                     counters: PipelineCounters) -> Iterator[tuple[FeatureRecord, list[float]]]:
    """Feature extraction plus scaling; unseen MACs extend the map first-seen.

    Labels in the emitted records are 0: the live path has no ground truth.
    """
    prev_ts: int | None = None
    for record in records:
        rec = featurize(record, prev_ts, mapper)
        prev_ts = record.ts_ns
        counters.features_out += 1
        yield rec, scaler.transform_features(rec.features())


def stage_decide(items: Iterable[tuple[FeatureRecord, list[float]]],
                 model: torch.nn.Module, s: int, stride: int, threshold: float,
                 counters: PipelineCounters,
                 log: DecisionLog | None = None) -> DecisionLog:
    """Maintain a length-s window; one verdict per stride new records."""
    if s < 1 or stride < 1:
        raise ConfigError("window size and stride must be >= 1")
    if log is None:
        log = DecisionLog()
    window: list[tuple[FeatureRecord, list[float]]] = []
    new_since_decision = 0
    primed = False
    for item in items:
        window.append(item)
        if len(window) > s:
            window.pop(0)
        if len(window) < s:
            continue
        if not primed:
            primed = True
            new_since_decision = 0
            _emit(window, model, threshold, counters, log)
            continue
        new_since_decision += 1
        if new_since_decision >= stride:
            new_since_decision = 0
            _emit(window, model, threshold, counters, log)
    return log


def _emit(window: list[tuple[FeatureRecord, list[float]]], model: torch.nn.Module,
          threshold: float, counters: PipelineCounters, log: DecisionLog) -> None:
    x = torch.tensor([[scaled for _, scaled in window]], dtype=torch.float32)
    probability = float(predict_probability(model, x)[0])
    newest = window[-1][0]
    oldest = window[0][0]
    log.add(DecisionEntry(newest.ts_ns, oldest.ts_ns, newest.ts_ns,
                          probability, decide(probability, threshold)))
    counters.verdicts += 1


def run_monitor(records: Iterable[TraceRecord], model: torch.nn.Module,
                config: ModelConfig, scaler: Scaler, mapper: MacMapper,
                stride: int = DEFAULT_STRIDE, threshold: float | None = None,
                threaded: bool = False,
                queue_capacity: int = DEFAULT_QUEUE_CAPACITY) -> tuple[DecisionLog, PipelineCounters]:
    """Run the three stages over a capture; threaded and sequential modes
    produce identical logs."""
    if scaler is None:
        raise ConfigError("monitor needs the scaler persisted with the model")
    if threshold is None:
        threshold = config.threshold
    counters = PipelineCounters()
    if not threaded:
        acquired = stage_acquire(records, counters)
        preprocessed = stage_preprocess(acquired, mapper, scaler, counters)
        log = stage_decide(preprocessed, model, config.s, stride, threshold, counters)
        return log, counters

    q_acquired: queue.Queue = queue.Queue(maxsize=queue_capacity)
    q_features: queue.Queue = queue.Queue(maxsize=queue_capacity)
    errors: list[BaseException] = []
    log = DecisionLog()

    def _guard(fn: Callable[[], None]) -> Callable[[], None]:
        def runner() -> None:
            try:
                fn()
            except BaseException as exc:  # propagate to the caller after join
                errors.append(exc)
        return runner

    acquired_reader = _QueueReader(q_acquired)
    features_reader = _QueueReader(q_features)

    def acquire_worker() -> None:
        try:
            for record in stage_acquire(records, counters):
                q_acquired.put(record)
        finally:
            q_acquired.put(_SENTINEL)

    def preprocess_worker() -> None:
        try:
            for item in stage_preprocess(acquired_reader, mapper, scaler, counters):
                q_features.put(item)
        except BaseException:
            acquired_reader.discard_rest()  # unblock acquire, then surface
            raise
        finally:
            q_features.put(_SENTINEL)

    def decide_worker() -> None:
        try:
            stage_decide(features_reader, model, config.s, stride, threshold,
                         counters, log)
        except BaseException:
            features_reader.discard_rest()
            raise

    threads = [threading.Thread(target=_guard(worker), name=name)
               for name, worker in (("acquire", acquire_worker),
                                    ("preprocess", preprocess_worker),
                                    ("decide", decide_worker))]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    if errors:
        raise RunAbort(f"pipeline stage failed: {errors[0]!r}") from errors[0]
    return log, counters


class _QueueReader:
    """Iterate a queue up to the sentinel, remembering whether it was reached
    so error paths can safely unblock the producer without double-reading."""

    def __init__(self, source: queue.Queue) -> None:
        self.source = source
        self.exhausted = False

    def __iter__(self) -> Iterator:
        while True:
            item = self.source.get()
            if item is _SENTINEL:
                self.exhausted = True
                return
            yield item

    def discard_rest(self) -> None:
        while not self.exhausted:
            if self.source.get() is _SENTINEL:
                self.exhausted = True


def align_verdicts(log: DecisionLog, records: list[FeatureRecord], s: int,
                   stride: int) -> tuple[dict, list[int]]:
    """Score each verdict against ground truth labels on the same window grid.

    records must be the labeled PTP stream the monitor consumed (same order);
    the k-th verdict covers records[k*stride : k*stride + s].  Returns metrics
    and the per-verdict truth labels.
    """
    truth: list[int] = []
    for window in make_windows(records, s, stride):
        truth.append(window.label)
    if len(truth) != len(log.entries):
        raise ValueError(f"verdict count {len(log.entries)} does not match "
                         f"window count {len(truth)}")
    tp = fp = tn = fn = 0
    for label, entry in zip(truth, log.entries):
        if label == 1 and entry.decision == 1:
            tp += 1
        elif label == 1:
            fn += 1
        elif entry.decision == 1:
            fp += 1
        else:
            tn += 1
    return confusion_metrics(tp, fp, tn, fn), truth


def detection_latency(result: RunResult, log: DecisionLog) -> list[dict]:
    """Per attack window: the first flagged verdict at or after onset and how
    many attacker frames had entered the capture by that verdict's timestamp."""
    out = []
    attacker_frames = [m.record.ts_ns for m in result.mirror
                       if m.origin_node == "attacker"]
    for entry_window in result.attack_log.entries:
        first = next((e for e in log.entries
                      if e.decision == 1 and e.ts_ns >= entry_window.start_ns), None)
        seen = None
        if first is not None:
            seen = sum(1 for ts in attacker_frames
                       if entry_window.start_ns <= ts <= first.ts_ns)
        out.append({
            "attack_start_ns": entry_window.start_ns,
            "attack_end_ns": entry_window.end_ns,
            "first_flag_ts_ns": None if first is None else first.ts_ns,
            "attacker_frames_before_flag": seen,
        })
    return out


def run_experiment(cfg: ScenarioConfig, model: torch.nn.Module, config: ModelConfig,
                   scaler: Scaler, mapper: MacMapper, stride: int = DEFAULT_STRIDE,
                   threshold: float | None = None,
                   threaded: bool = False) -> tuple[dict, RunResult, DecisionLog]:
    """Full protocol: run the twin, monitor its capture, align verdicts with
    the attack log, and assemble the report with embedded CSV time series."""
    result = run_scenario(cfg)
    records = [m.record for m in result.mirror]
    origins = [m.origin_mac for m in result.mirror]
    log, counters = run_monitor(records, model, config, scaler, mapper,
                                stride=stride, threshold=threshold, threaded=threaded)
    labeled = extract_features(records, origins, result.attack_log, MacMapper())
    metrics, truth = align_verdicts(log, labeled, config.s, stride)
    decision_rows = ["ts_ns,probability,decision,label"]
    for entry, label in zip(log.entries, truth):
        decision_rows.append(f"{entry.ts_ns},{entry.probability!r},{entry.decision},{label}")
    report = {
        "run_id": result.run_id,
        "attack_windows": [{"kind": e.kind, "start_ns": e.start_ns, "end_ns": e.end_ns}
                           for e in result.attack_log.entries],
        "metrics": metrics,
        "counters": {
            "frames_total": counters.frames_total,
            "frames_ptp": counters.frames_ptp,
            "verdicts": counters.verdicts,
            **result.counters,
        },
        "detection_latency": detection_latency(result, log),
        "decision_series_csv": "\n".join(decision_rows) + "\n",
        "delay_series_csv": estimates_to_csv(result.estimates),
    }
    return report, result, log
