"""The switched fronthaul: star topology, per-port PTP role enforcement,
latency/jitter with a load-dependent term, background-trace replay, and a
mirror tap.

Mirror records are stamped at switch ingress (wire-emission time), so captures
are independent of per-destination delivery jitter and stay byte-deterministic.
Non-PTP background frames contribute to switch load and appear in the mirror
but are not delivered to edge nodes (nothing consumes them there).
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Iterator

from .config import ConfigError
from .ptp import PTP_ETHERTYPE, PtpMessage
from .timebase import Scheduler


class PortRole(Enum):
    MASTER_ONLY = "master_only"
    SLAVE_ONLY = "slave_only"
    DYNAMIC = "dynamic"


@dataclass
class PortConfig:
    node: str
    ptp_role: PortRole = PortRole.DYNAMIC
    block_duplicate_mac: bool = False


@dataclass
class LinkModel:
    base_latency_ns: int = 30
    jitter_std_ns: int = 4
    load_jitter_coeff: float = 0.0005  # extra ns per byte of instantaneous load

    def __post_init__(self) -> None:
        if self.base_latency_ns < 0 or self.jitter_std_ns < 0 or self.load_jitter_coeff < 0:
            raise ValueError("link parameters must be non-negative")


@dataclass
class TraceRecord:
    """One captured frame in the native trace representation."""

    ts_ns: int
    src_mac: str
    dst_mac: str
    ethertype: int
    length_bytes: int
    ptp_type: str | None = None
    seq_id: int | None = None
    origin_ts_ns: int | None = None

    @property
    def is_ptp(self) -> bool:
        return self.ethertype == PTP_ETHERTYPE

    def to_json_line(self) -> str:
        fields: dict = {
            "ts_ns": self.ts_ns,
            "src_mac": self.src_mac,
            "dst_mac": self.dst_mac,
            "ethertype": f"0x{self.ethertype:04x}",
            "len": self.length_bytes,
        }
        if self.is_ptp:
            fields["ptp_type"] = self.ptp_type
            fields["seq_id"] = self.seq_id
            fields["origin_ts_ns"] = self.origin_ts_ns
        return json.dumps(fields, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "TraceRecord":
        obj = json.loads(line)
        return cls(
            ts_ns=int(obj["ts_ns"]),
            src_mac=obj["src_mac"],
            dst_mac=obj["dst_mac"],
            ethertype=int(obj["ethertype"], 16),
            length_bytes=int(obj["len"]),
            ptp_type=obj.get("ptp_type"),
            seq_id=obj.get("seq_id"),
            origin_ts_ns=obj.get("origin_ts_ns"),
        )


@dataclass
class MirrorRecord:
    """A delivered frame plus its ground-truth origin, used only for labeling."""

    record: TraceRecord
    origin_node: str
    origin_mac: str


def message_to_record(msg: PtpMessage, ts_ns: int) -> TraceRecord:
    return TraceRecord(
        ts_ns=ts_ns,
        src_mac=msg.src_mac,
        dst_mac=msg.dst_mac,
        ethertype=PTP_ETHERTYPE,
        length_bytes=msg.length_bytes,
        ptp_type=msg.msg_type.value,
        seq_id=msg.sequence_id,
        origin_ts_ns=msg.origin_timestamp,
    )


@dataclass
class _Port:
    node: str
    mac: str
    handler: Callable[[PtpMessage, int], None] | None
    config: PortConfig


class Switch:
    """Single switch, star topology; deterministic given its seed.

    Role filters: a SLAVE_ONLY port's transmitted PTP frames are dropped at
    ingress; PTP frames headed to a MASTER_ONLY port are dropped at egress
    toward it; DYNAMIC passes both.  With block_duplicate_mac set on a port,
    frames entering it whose source MAC belongs to a different port are dropped.
    """

    LOAD_DECAY_NS = 1_000_000

    def __init__(self, scheduler: Scheduler, link: LinkModel, seed: int | str = 0) -> None:
        self.scheduler = scheduler
        self.link = link
        self._rng = random.Random(f"{seed}/switch")
        self._ports: dict[str, _Port] = {}
        self._mac_to_node: dict[str, str] = {}
        self.mirror: list[MirrorRecord] = []
        self.mirror_taps: list[Callable[[MirrorRecord], None]] = []
        self.injected = 0
        self.delivered = 0
        self.dropped: dict[str, int] = {}
        self._load_bytes = 0.0
        self._load_updated_ns = 0
        self._last_rx_ns: dict[tuple[str, str], int] = {}

    def attach(self, node: str, mac: str,
               handler: Callable[[PtpMessage, int], None] | None = None) -> None:
        if node in self._ports:
            raise ConfigError(f"node {node} already attached")
        self._ports[node] = _Port(node, mac, handler, PortConfig(node))
        self._mac_to_node[mac] = node

    def configure_port(self, node: str, cfg: PortConfig) -> None:
        if node not in self._ports:
            raise ConfigError(f"cannot configure unknown node {node}")
        self._ports[node].config = cfg

    def _drop(self, reason: str) -> None:
        self.dropped[reason] = self.dropped.get(reason, 0) + 1

    def _update_load(self, now_ns: int, add_bytes: int) -> float:
        dt = now_ns - self._load_updated_ns
        if dt > 0:
            self._load_bytes *= math.exp(-dt / self.LOAD_DECAY_NS)
            self._load_updated_ns = now_ns
        self._load_bytes += add_bytes
        return self._load_bytes

    def _latency_ns(self, load: float) -> int:
        jitter = 0
        if self.link.jitter_std_ns:
            jitter = max(0, round(self._rng.gauss(0.0, float(self.link.jitter_std_ns))))
        return self.link.base_latency_ns + jitter + int(self.link.load_jitter_coeff * load)

    def _mirror(self, record: TraceRecord, origin_node: str) -> None:
        entry = MirrorRecord(record, origin_node, self._ports[origin_node].mac)
        self.mirror.append(entry)
        for tap in self.mirror_taps:
            tap(entry)

    def send(self, origin_node: str, msg: PtpMessage, now_ns: int) -> None:
        """Inject a PTP frame from an attached node at true time now_ns."""
        port = self._ports.get(origin_node)
        if port is None:
            raise ConfigError(f"send from unattached node {origin_node}")
        self.injected += 1
        if port.config.ptp_role is PortRole.SLAVE_ONLY:
            self._drop("slave_only_ingress")
            return
        if port.config.block_duplicate_mac:
            owner = self._mac_to_node.get(msg.src_mac)
            if owner is not None and owner != origin_node:
                self._drop("duplicate_mac")
                return
        load = self._update_load(now_ns, msg.length_bytes)
        self.delivered += 1
        self._mirror(message_to_record(msg, now_ns), origin_node)
        dst_node = self._mac_to_node.get(msg.dst_mac)
        if dst_node is not None:
            targets = [dst_node] if dst_node != origin_node else []
        else:
            targets = [n for n in self._ports if n != origin_node]
        for node in targets:
            dst_port = self._ports[node]
            if dst_port.config.ptp_role is PortRole.MASTER_ONLY:
                self._drop("master_only_egress")
                continue
            if dst_port.handler is None:
                continue
            rx = now_ns + self._latency_ns(load)
            key = (origin_node, node)
            last = self._last_rx_ns.get(key)
            if last is not None and rx < last:
                rx = last  # FIFO per link: later sends never arrive earlier
            self._last_rx_ns[key] = rx
            handler = dst_port.handler
            self.scheduler.schedule(rx, lambda h=handler, m=msg, t=rx: h(m, t))

    def inject_background(self, record: TraceRecord, now_ns: int,
                          origin_node: str = "background") -> None:
        """Non-PTP frame: counts toward load and the mirror only."""
        if origin_node not in self._ports:
            raise ConfigError(f"background origin node {origin_node} not attached")
        self.injected += 1
        self.delivered += 1
        self._update_load(now_ns, record.length_bytes)
        self._mirror(
            TraceRecord(now_ns, record.src_mac, record.dst_mac, record.ethertype,
                        record.length_bytes),
            origin_node,
        )


def replay_background(switch: Switch, scheduler: Scheduler,
                      trace: list[TraceRecord], speed: float = 1.0,
                      start_ns: int = 0) -> int:
    """Schedule a background trace's frames at scaled original gaps.

    Returns the number of frames scheduled.  The trace must be sorted by ts_ns.
    """
    if speed <= 0:
        raise ConfigError("replay speed must be positive")
    last = None
    for rec in trace:
        if last is not None and rec.ts_ns < last:
            raise ConfigError("background trace is not sorted by ts_ns")
        last = rec.ts_ns
    if not trace:
        return 0
    t0 = trace[0].ts_ns
    count = 0
    for rec in trace:
        at = start_ns + round((rec.ts_ns - t0) / speed)
        scheduler.schedule(at, lambda r=rec, t=at: switch.inject_background(r, t))
        count += 1
    return count


def write_trace(path: str, records: Iterable[TraceRecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json_line())
            fh.write("\n")
            count += 1
    return count


def read_trace(path: str) -> list[TraceRecord]:
    return list(iter_trace(path))


def iter_trace(path: str) -> Iterator[TraceRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield TraceRecord.from_json_line(line)
