"""The adversary: Announce spoofing, Sync/FollowUp replay, random flood, and
the attack schedulers (fixed cycles, continuous, randomized durations).

Attack actors are event-loop participants wired to the switch by the twin;
outside attack windows they emit nothing.  Every executed window is logged
with its bounds and the attacking machine's MAC.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .config import ConfigError
from .ptp import (AnnounceAttributes, MsgType, PtpMessage, eui64_identity,
                  seq_after)
from .timebase import NS_PER_S, Scheduler

DEFAULT_ATTACK_RANGE_S = (10.0, 30.0)
DEFAULT_RECOVERY_RANGE_S = (40.0, 60.0)
FLOOD_MIN_LEN = 64
FLOOD_MAX_LEN = 200


class ScheduleKind(Enum):
    CYCLIC = "cyclic"
    CONTINUOUS = "continuous"
    RANDOMIZED = "randomized"


@dataclass(frozen=True)
class AttackSchedule:
    kind: ScheduleKind
    attack_s: float | None = None
    recovery_s: float | None = None
    attack_range_s: tuple[float, float] = DEFAULT_ATTACK_RANGE_S
    recovery_range_s: tuple[float, float] = DEFAULT_RECOVERY_RANGE_S

    def __post_init__(self) -> None:
        if self.kind is ScheduleKind.CYCLIC:
            if not self.attack_s or not self.recovery_s:
                raise ConfigError("cyclic schedule needs attack and recovery durations")
            if self.attack_s <= 0 or self.recovery_s <= 0:
                raise ConfigError("schedule durations must be positive")
        if self.kind is ScheduleKind.RANDOMIZED:
            for lo, hi in (self.attack_range_s, self.recovery_range_s):
                if not (0 < lo <= hi):
                    raise ConfigError("randomized schedule ranges must be positive and ordered")


def parse_schedule(text: str) -> AttackSchedule:
    """Parse the CLI schedule forms: '30/30', '40/20', '50/10', 'cont', 'rand'."""
    text = text.strip().lower()
    if text in ("cont", "continuous"):
        return AttackSchedule(ScheduleKind.CONTINUOUS)
    if text in ("rand", "randomized"):
        return AttackSchedule(ScheduleKind.RANDOMIZED)
    if "/" in text:
        attack_raw, _, recovery_raw = text.partition("/")
        try:
            return AttackSchedule(ScheduleKind.CYCLIC,
                                  attack_s=float(attack_raw), recovery_s=float(recovery_raw))
        except ValueError as exc:
            raise ConfigError(f"malformed schedule {text!r}") from exc
    raise ConfigError(f"unknown schedule {text!r}")


def next_window(schedule: AttackSchedule, rng: random.Random,
                remaining_ns: int) -> tuple[int, int]:
    """Next (attack, recovery) durations in ns; continuous takes the remainder."""
    if schedule.kind is ScheduleKind.CYCLIC:
        return (round(schedule.attack_s * NS_PER_S), round(schedule.recovery_s * NS_PER_S))
    if schedule.kind is ScheduleKind.CONTINUOUS:
        return (remaining_ns, 0)
    attack = rng.uniform(*schedule.attack_range_s)
    recovery = rng.uniform(*schedule.recovery_range_s)
    return (round(attack * NS_PER_S), round(recovery * NS_PER_S))


def windows_for_run(schedule: AttackSchedule, start_ns: int, duration_ns: int,
                    rng: random.Random) -> list[tuple[int, int]]:
    """Concrete [start, end) attack windows for one run, clipped to the run."""
    windows: list[tuple[int, int]] = []
    t = start_ns
    while t < duration_ns:
        attack_ns, recovery_ns = next_window(schedule, rng, duration_ns - t)
        if attack_ns <= 0:
            break
        end = min(t + attack_ns, duration_ns)
        windows.append((t, end))
        t = end + recovery_ns
        if recovery_ns == 0 and schedule.kind is ScheduleKind.CONTINUOUS:
            break
    return windows


@dataclass
class AttackEntry:
    kind: str
    start_ns: int
    end_ns: int
    attacker_macs: list[str]


@dataclass
class AttackLog:
    entries: list[AttackEntry] = field(default_factory=list)

    def add(self, kind: str, start_ns: int, end_ns: int, attacker_macs: list[str]) -> None:
        if self.entries and start_ns < self.entries[-1].end_ns:
            raise ValueError("attack windows must be chronological and non-overlapping")
        self.entries.append(AttackEntry(kind, start_ns, end_ns, list(attacker_macs)))

    def attacker_macs(self) -> set[str]:
        macs: set[str] = set()
        for entry in self.entries:
            macs.update(entry.attacker_macs)
        return macs

    def in_window(self, ts_ns: int) -> bool:
        return any(e.start_ns <= ts_ns < e.end_ns for e in self.entries)

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps({"kind": e.kind, "start_ns": e.start_ns,
                                     "end_ns": e.end_ns, "attacker_macs": e.attacker_macs},
                                    separators=(",", ":")))
                fh.write("\n")

    @classmethod
    def read(cls, path: str) -> "AttackLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                log.add(obj["kind"], int(obj["start_ns"]), int(obj["end_ns"]),
                        list(obj["attacker_macs"]))
        return log


def craft_spoof_announce(observed_master: AnnounceAttributes, attacker_mac: str,
                         sequence_id: int = 0) -> PtpMessage:
    """Counterfeit Announce that wins BMCA: priority1=1, clockClass=1, and a
    clock identity built from the attacker MAC with ff:ff inserted between the
    manufacturer prefix and device suffix; all other attributes copied."""
    attrs = AnnounceAttributes(
        priority1=1,
        clock_class=1,
        clock_accuracy=observed_master.clock_accuracy,
        offset_scaled_log_variance=observed_master.offset_scaled_log_variance,
        priority2=observed_master.priority2,
        clock_identity=eui64_identity(attacker_mac, filler=b"\xff\xff"),
        steps_removed=observed_master.steps_removed,
    )
    return PtpMessage(MsgType.ANNOUNCE, sequence_id, attacker_mac, announce=attrs)


class AttackActor:
    """Common base: window bookkeeping, logging, and the emit hook."""

    kind = "none"

    def __init__(self, scheduler: Scheduler, attacker_mac: str,
                 emit: Callable[[PtpMessage, int], None],
                 windows: list[tuple[int, int]]) -> None:
        self.scheduler = scheduler
        self.attacker_mac = attacker_mac
        self.emit = emit
        self.windows = list(windows)
        self.log = AttackLog()
        self.frames_emitted = 0
        for start, end in self.windows:
            self.log.add(self.kind, start, end, [attacker_mac])
            self.scheduler.schedule(start, lambda s=start, e=end: self.on_window_start(s, e))

    def in_attack(self, now_ns: int) -> bool:
        return any(s <= now_ns < e for s, e in self.windows)

    def observe(self, msg: PtpMessage, rx_ns: int) -> None:
        """Called for every frame the attacker's port receives."""

    def on_window_start(self, start_ns: int, end_ns: int) -> None:
        raise NotImplementedError

    def _send(self, msg: PtpMessage, now_ns: int) -> None:
        self.frames_emitted += 1
        self.emit(msg, now_ns)


class Spoofer(AttackActor):
    """Counterfeit Announce at the Announce cadence during windows; no sync
    packets are ever sent and DelayReqs are never answered.  Sequence ids
    continue from the last legitimate Announce observed before the window."""

    kind = "spoof"

    def __init__(self, scheduler: Scheduler, attacker_mac: str, emit, windows,
                 announce_interval_ns: int) -> None:
        self.announce_interval_ns = int(announce_interval_ns)
        self.observed_attrs: AnnounceAttributes | None = None
        self.observed_seq: int | None = None
        self._seq: int | None = None
        super().__init__(scheduler, attacker_mac, emit, windows)

    def observe(self, msg: PtpMessage, rx_ns: int) -> None:
        if msg.msg_type is MsgType.ANNOUNCE and msg.src_mac != self.attacker_mac:
            self.observed_attrs = msg.announce
            self.observed_seq = msg.sequence_id

    def on_window_start(self, start_ns: int, end_ns: int) -> None:
        if self.observed_attrs is None:
            raise RuntimeError("spoofing window reached before any Announce was observed")
        self._seq = seq_after(self.observed_seq)
        self._tick(start_ns, end_ns)

    def _tick(self, now_ns: int, end_ns: int) -> None:
        if now_ns >= end_ns:
            return
        msg = craft_spoof_announce(self.observed_attrs, self.attacker_mac, self._seq)
        self._seq = seq_after(self._seq)
        self._send(msg, now_ns)
        nxt = now_ns + self.announce_interval_ns
        if nxt < end_ns:
            self.scheduler.schedule(nxt, lambda: self._tick(nxt, end_ns))


class Replayer(AttackActor):
    """Retransmit every observed Sync and its FollowUp after a fixed delay,
    unmodified; the FollowUp keeps its observed gap behind its Sync.  Originals
    are never suppressed.  Frames whose retransmission instant falls outside
    the window are dropped (the attacker stays silent off-window)."""

    kind = "replay"

    def __init__(self, scheduler: Scheduler, attacker_mac: str, emit, windows,
                 replay_delay_ns: int) -> None:
        if replay_delay_ns < 0:
            raise ConfigError("replay delay must be non-negative")
        self.replay_delay_ns = int(replay_delay_ns)
        self._sync_retx_ns: dict[int, int] = {}
        super().__init__(scheduler, attacker_mac, emit, windows)

    def on_window_start(self, start_ns: int, end_ns: int) -> None:
        pass  # purely reactive; observation drives emission

    def observe(self, msg: PtpMessage, rx_ns: int) -> None:
        if msg.msg_type is MsgType.SYNC:
            at = rx_ns + self.replay_delay_ns
            self._sync_retx_ns[msg.sequence_id] = at
            self._schedule_retx(msg, at)
        elif msg.msg_type is MsgType.FOLLOW_UP:
            sync_at = self._sync_retx_ns.pop(msg.sequence_id, None)
            if sync_at is None:
                return
            gap = max(0, rx_ns + self.replay_delay_ns - sync_at)
            self._schedule_retx(msg, sync_at + gap)

    def _schedule_retx(self, msg: PtpMessage, at_ns: int) -> None:
        if not self.in_attack(at_ns):
            return
        copy = PtpMessage(msg.msg_type, msg.sequence_id, msg.src_mac, msg.dst_mac,
                          msg.origin_timestamp, msg.announce, msg.length_bytes)
        self.scheduler.schedule(at_ns, lambda: self._send(copy, at_ns))


class Flooder(AttackActor):
    """PTP-ethertype frames with randomized invalid type codes, sequence ids,
    and lengths at a fixed rate during windows; compliant nodes ignore them, so
    timing state is untouched while every frame reaches the capture filter."""

    kind = "flood"

    def __init__(self, scheduler: Scheduler, attacker_mac: str, emit, windows,
                 rate_pps: float, seed: int | str = 0) -> None:
        if rate_pps <= 0:
            raise ConfigError("flood rate must be positive")
        self.interval_ns = max(1, round(NS_PER_S / rate_pps))
        self._rng = random.Random(f"{seed}/flood")
        super().__init__(scheduler, attacker_mac, emit, windows)

    def on_window_start(self, start_ns: int, end_ns: int) -> None:
        self._tick(start_ns, end_ns)

    def _tick(self, now_ns: int, end_ns: int) -> None:
        if now_ns >= end_ns:
            return
        msg = PtpMessage(
            MsgType.OTHER,
            self._rng.randrange(65536),
            self.attacker_mac,
            length_bytes=self._rng.randint(FLOOD_MIN_LEN, FLOOD_MAX_LEN),
        )
        self._send(msg, now_ns)
        nxt = now_ns + self.interval_ns
        if nxt < end_ns:
            self.scheduler.schedule(nxt, lambda: self._tick(nxt, end_ns))
