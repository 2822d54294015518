"""Labeled dataset construction from captured traces.

Pipeline: filter to PTP frames, label each frame by whether the machine that
emitted it was an attacker inside a logged attack window, map MACs to stable
small integers, extract per-packet features, cut the stream into equal-sized
chunks, shuffle chunks by seed into 80/10/10 train/validation/test, and window
each chunk with an any-malicious label.  Feature scaling (zero mean, unit
variance) is fit on the training split only and applied everywhere else.
"""
from __future__ import annotations

import csv
import json
import os
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .attacks import AttackLog
from .netsim import TraceRecord, read_trace
from .ptp import MsgType
from .twin import read_origins

CSV_FIELDS = ("ts_ns", "src_id", "dst_id", "len", "seq_id", "msg_type",
              "inter_arrival_ns", "label")

FEATURE_NAMES = ("src_id", "dst_id", "len", "seq_id", "msg_type", "inter_arrival_ns")
NUM_FEATURES = len(FEATURE_NAMES)

# Continuous-valued features that get standardized; id-like ones pass through.
SCALED_FEATURES = ("len", "seq_id", "inter_arrival_ns")

_TYPE_CODE_BY_NAME = {t.value: t.code for t in MsgType}


@dataclass
class FeatureRecord:
    """One PTP packet reduced to the model features plus its label."""

    ts_ns: int
    src_id: int
    dst_id: int
    length_bytes: int
    seq_id: int
    msg_type_code: int
    inter_arrival_ns: int
    label: int

    def features(self) -> list[float]:
        return [float(self.src_id), float(self.dst_id), float(self.length_bytes),
                float(self.seq_id), float(self.msg_type_code),
                float(self.inter_arrival_ns)]

    def to_csv_row(self) -> list:
        return [self.ts_ns, self.src_id, self.dst_id, self.length_bytes,
                self.seq_id, self.msg_type_code, self.inter_arrival_ns, self.label]

    @classmethod
    def from_csv_row(cls, row: Sequence[str]) -> "FeatureRecord":
        ts, src, dst, length, seq, mtype, ia, label = row
        return cls(int(ts), int(src), int(dst), int(length), int(seq),
                   int(mtype), int(ia), int(label))


class MacMapper:
    """First-seen MAC-to-integer mapping shared by src and dst columns.

    The mapping is part of the model artifact; at inference time unseen MACs
    extend it first-seen, so ids stay stable for every previously known device.
    """

    def __init__(self, mapping: dict[str, int] | None = None) -> None:
        self.mapping: dict[str, int] = dict(mapping) if mapping else {}

    def id_for(self, mac: str) -> int:
        if mac not in self.mapping:
            self.mapping[mac] = len(self.mapping)
        return self.mapping[mac]

    def to_dict(self) -> dict[str, int]:
        return dict(self.mapping)


def label_frame(record: TraceRecord, origin_mac: str, log: AttackLog) -> int:
    """1 iff the frame was emitted by an attacker inside an attack window."""
    if origin_mac in log.attacker_macs() and log.in_window(record.ts_ns):
        return 1
    return 0


def featurize(record: TraceRecord, prev_ts: int | None, mapper: MacMapper,
              label: int = 0) -> FeatureRecord:
    """One PTP frame to its feature record; prev_ts is the previous PTP
    frame's capture timestamp (None at stream start)."""
    code = _TYPE_CODE_BY_NAME.get(record.ptp_type)
    if code is None:
        code = MsgType.OTHER.code
    return FeatureRecord(
        ts_ns=record.ts_ns,
        src_id=mapper.id_for(record.src_mac),
        dst_id=mapper.id_for(record.dst_mac),
        length_bytes=record.length_bytes,
        seq_id=record.seq_id if record.seq_id is not None else 0,
        msg_type_code=code,
        inter_arrival_ns=0 if prev_ts is None else record.ts_ns - prev_ts,
        label=label,
    )


def extract_features(records: Iterable[TraceRecord], origins: Iterable[str],
                     log: AttackLog, mapper: MacMapper) -> list[FeatureRecord]:
    """PTP-only feature stream; inter-arrival is against the previous PTP frame.

    origins supplies, 1:1 with records, the MAC of the port that actually
    emitted each frame (ground truth; spoofed source fields do not fool it).
    """
    out: list[FeatureRecord] = []
    attacker_macs = log.attacker_macs()
    prev_ts: int | None = None
    for record, origin_mac in zip(records, origins):
        if not record.is_ptp:
            continue
        label = 1 if (origin_mac in attacker_macs and log.in_window(record.ts_ns)) else 0
        out.append(featurize(record, prev_ts, mapper, label))
        prev_ts = record.ts_ns
    return out


@dataclass
class DatasetSplit:
    train: list[list[FeatureRecord]]
    validation: list[list[FeatureRecord]]
    test: list[list[FeatureRecord]]
    chunk_size: int
    seed: int
    assignment: list[str] = field(default_factory=list)  # chunk index -> split name

    def counts(self) -> dict[str, int]:
        return {"train": len(self.train), "validation": len(self.validation),
                "test": len(self.test)}


def chunk_split(records: Sequence[FeatureRecord], chunk_size: int = 1000,
                seed: int = 0) -> DatasetSplit:
    """Cut into equal chunks (trailing remainder dropped), shuffle by seed,
    assign 80/10/10 by chunk count.  Needs at least 10 full chunks."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    n_chunks = len(records) // chunk_size
    if n_chunks < 10:
        raise ValueError(f"need at least 10 full chunks of {chunk_size}, "
                         f"got {n_chunks} from {len(records)} records")
    chunks = [list(records[i * chunk_size:(i + 1) * chunk_size]) for i in range(n_chunks)]
    order = list(range(n_chunks))
    random.Random(f"{seed}/chunks").shuffle(order)
    n_val = round(0.1 * n_chunks)
    n_test = round(0.1 * n_chunks)
    val_idx = set(order[:n_val])
    test_idx = set(order[n_val:n_val + n_test])
    split = DatasetSplit([], [], [], chunk_size, seed)
    for i, chunk in enumerate(chunks):
        if i in val_idx:
            split.validation.append(chunk)
            split.assignment.append("validation")
        elif i in test_idx:
            split.test.append(chunk)
            split.assignment.append("test")
        else:
            split.train.append(chunk)
            split.assignment.append("train")
    return split


@dataclass
class SlidingWindow:
    records: list[FeatureRecord]
    label: int

    @property
    def first_ts(self) -> int:
        return self.records[0].ts_ns

    @property
    def last_ts(self) -> int:
        return self.records[-1].ts_ns


def make_windows(records: Sequence[FeatureRecord], size: int,
                 stride: int = 2) -> Iterator[SlidingWindow]:
    """Windows at offsets 0, stride, 2*stride, ... while a full one fits.

    A window is malicious iff any member record is.  Fewer than size records
    yields nothing; there is no padding.
    """
    if size < 1 or stride < 1:
        raise ValueError("size and stride must be >= 1")
    for start in range(0, len(records) - size + 1, stride):
        window = list(records[start:start + size])
        label = 1 if any(r.label for r in window) else 0
        yield SlidingWindow(window, label)


class Scaler:
    """Zero-mean/unit-variance standardization for the continuous features.

    Fit on training data only.  Constant features keep std 1 so transform is
    the identity shift.  src_id, dst_id, and msg_type_code pass through raw.
    """

    def __init__(self, mean: dict[str, float] | None = None,
                 std: dict[str, float] | None = None) -> None:
        self.mean = dict(mean) if mean else {}
        self.std = dict(std) if std else {}

    @classmethod
    def fit(cls, records: Iterable[FeatureRecord]) -> "Scaler":
        sums = {name: 0.0 for name in SCALED_FEATURES}
        sq_sums = {name: 0.0 for name in SCALED_FEATURES}
        count = 0
        for rec in records:
            values = {"len": rec.length_bytes, "seq_id": rec.seq_id,
                      "inter_arrival_ns": rec.inter_arrival_ns}
            for name in SCALED_FEATURES:
                sums[name] += values[name]
                sq_sums[name] += values[name] * values[name]
            count += 1
        if count == 0:
            raise ValueError("cannot fit a scaler on zero records")
        scaler = cls()
        for name in SCALED_FEATURES:
            mean = sums[name] / count
            var = max(0.0, sq_sums[name] / count - mean * mean)
            std = var ** 0.5
            scaler.mean[name] = mean
            scaler.std[name] = std if std > 0 else 1.0
        return scaler

    def transform_features(self, features: list[float]) -> list[float]:
        """Apply to one feature vector in FEATURE_NAMES order."""
        out = list(features)
        for name in SCALED_FEATURES:
            idx = FEATURE_NAMES.index(name)
            out[idx] = (out[idx] - self.mean[name]) / self.std[name]
        return out

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {"mean": dict(self.mean), "std": dict(self.std)}

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        return cls(mean=data["mean"], std=data["std"])


def write_records_csv(path: str, records: Iterable[FeatureRecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for rec in records:
            writer.writerow(rec.to_csv_row())
            count += 1
    return count


def read_records_csv(path: str) -> list[FeatureRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_FIELDS):
            raise ValueError(f"{path}: unexpected header {header}")
        return [FeatureRecord.from_csv_row(row) for row in reader if row]


def build_dataset(run_dirs: Sequence[str], out_dir: str, chunk_size: int = 1000,
                  seed: int = 0) -> dict:
    """Label and featurize each run, concatenate, split, and persist.

    Writes train.csv / validation.csv / test.csv (chunk concatenations in
    chunk order), the shared MAC map, and a manifest describing the split.
    Returns the manifest.
    """
    mapper = MacMapper()
    all_records: list[FeatureRecord] = []
    per_run: list[dict] = []
    for run_dir in run_dirs:
        trace_path = os.path.join(run_dir, "trace.jsonl")
        origins_path = os.path.join(run_dir, "origins.jsonl")
        attacks_path = os.path.join(run_dir, "attacks.jsonl")
        records = read_trace(trace_path)
        origins = [o["origin_mac"] for o in read_origins(origins_path)]
        if len(origins) != len(records):
            raise ValueError(f"{run_dir}: origin sidecar length {len(origins)} "
                             f"!= trace length {len(records)}")
        log = AttackLog.read(attacks_path) if os.path.exists(attacks_path) else AttackLog()
        feats = extract_features(records, origins, log, mapper)
        per_run.append({"dir": run_dir, "ptp_records": len(feats),
                        "malicious": sum(r.label for r in feats)})
        all_records.extend(feats)
    split = chunk_split(all_records, chunk_size=chunk_size, seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    for name, chunks in (("train", split.train), ("validation", split.validation),
                         ("test", split.test)):
        flat = [rec for chunk in chunks for rec in chunk]
        write_records_csv(os.path.join(out_dir, f"{name}.csv"), flat)
    with open(os.path.join(out_dir, "macmap.json"), "w", encoding="utf-8") as fh:
        json.dump(mapper.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = {
        "chunk_size": chunk_size,
        "seed": seed,
        "chunks": split.counts(),
        "assignment": split.assignment,
        "runs": per_run,
        "records": len(all_records),
        "malicious_records": sum(r.label for r in all_records),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_split_chunks(out_dir: str, name: str, chunk_size: int) -> list[list[FeatureRecord]]:
    """Re-chunk a persisted split file (written as whole chunks in order)."""
    records = read_records_csv(os.path.join(out_dir, f"{name}.csv"))
    if len(records) % chunk_size:
        raise ValueError(f"{name}.csv length {len(records)} is not a multiple "
                         f"of chunk_size {chunk_size}")
    return [records[i:i + chunk_size] for i in range(0, len(records), chunk_size)]


def load_manifest(out_dir: str) -> dict:
    with open(os.path.join(out_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_mac_map(out_dir: str) -> MacMapper:
    with open(os.path.join(out_dir, "macmap.json"), "r", encoding="utf-8") as fh:
        return MacMapper(json.load(fh))


def windows_from_chunks(chunks: Sequence[Sequence[FeatureRecord]], size: int,
                        stride: int = 2) -> list[SlidingWindow]:
    """Windows computed within each chunk; they never cross chunk boundaries."""
    out: list[SlidingWindow] = []
    for chunk in chunks:
        out.extend(make_windows(chunk, size, stride))
    return out
