"""Two-step PTP over Ethernet: messages, BMCA election, and the sync math.

Masters emit Announce / Sync / FollowUp on independent sequence counters and
answer DelayReq with DelayResp (E2E delay mechanism).  Slaves elect a master
from received Announces, complete four-timestamp samples, and feed the servo.

Drift, delay, and offset are computed from the timestamp tuple
(t1, t2, t3, t4) with previous-pair bookkeeping for drift:

    drift  = ((t2 - t2_prev) - (t1 - t1_prev)) / (t1 - t1_prev)   exact rational
    delay  = ((t4 - t1) - (t3 - t2)) / 2                          half-to-even
    offset = (t2 - t1) - delay
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Mapping

from .timebase import ClockModel, ServoMode, SimInstant, servo_holdover, servo_update

PTP_ETHERTYPE = 0x88F7
PTP_MULTICAST_MAC = "01:1b:19:00:00:00"

SEQ_MODULUS = 65536


class ProtocolError(Exception):
    """A PTP contract violation (duplicate identities, malformed exchange)."""


class MsgType(Enum):
    ANNOUNCE = "announce"
    SYNC = "sync"
    FOLLOW_UP = "follow_up"
    DELAY_REQ = "delay_req"
    DELAY_RESP = "delay_resp"
    OTHER = "other"

    @property
    def code(self) -> int:
        return _TYPE_CODES[self]


_TYPE_CODES = {
    MsgType.ANNOUNCE: 0,
    MsgType.SYNC: 1,
    MsgType.FOLLOW_UP: 2,
    MsgType.DELAY_REQ: 3,
    MsgType.DELAY_RESP: 4,
    MsgType.OTHER: 5,
}

# On-wire frame sizes (Ethernet header + PTP message, minimum-frame padded).
FRAME_LENGTH = {
    MsgType.ANNOUNCE: 78,
    MsgType.SYNC: 64,
    MsgType.FOLLOW_UP: 64,
    MsgType.DELAY_REQ: 64,
    MsgType.DELAY_RESP: 68,
}


def mac_to_bytes(mac: str) -> bytes:
    parts = mac.split(":")
    if len(parts) != 6:
        raise ValueError(f"malformed MAC {mac!r}")
    return bytes(int(p, 16) for p in parts)


def eui64_identity(mac: str, filler: bytes = b"\xff\xfe") -> bytes:
    """8-byte clock identity from a MAC: OUI + filler + device suffix."""
    raw = mac_to_bytes(mac)
    return raw[:3] + filler + raw[3:]


@dataclass(frozen=True)
class AnnounceAttributes:
    priority1: int
    clock_class: int
    clock_accuracy: int
    offset_scaled_log_variance: int
    priority2: int
    clock_identity: bytes
    steps_removed: int = 0

    def __post_init__(self) -> None:
        for name, value, hi in (
            ("priority1", self.priority1, 255),
            ("clock_class", self.clock_class, 255),
            ("clock_accuracy", self.clock_accuracy, 255),
            ("offset_scaled_log_variance", self.offset_scaled_log_variance, 65535),
            ("priority2", self.priority2, 255),
        ):
            if not 0 <= value <= hi:
                raise ValueError(f"{name}={value} outside 0..{hi}")
        if len(self.clock_identity) != 8:
            raise ValueError("clock_identity must be 8 bytes")
        if self.steps_removed < 0:
            raise ValueError("steps_removed must be >= 0")

    def comparison_key(self) -> tuple:
        return (self.priority1, self.clock_class, self.clock_accuracy,
                self.offset_scaled_log_variance, self.priority2,
                self.clock_identity, self.steps_removed)


class Ordering(Enum):
    A_BETTER = "a"
    B_BETTER = "b"


def bmca_compare(a: AnnounceAttributes, b: AnnounceAttributes) -> Ordering:
    """Lexicographic dataset comparison; lower wins at each stage.

    clockIdentity uniqueness guarantees a total order, so identical identities
    on distinct attribute sets are a protocol violation, not a tie.
    """
    if a.clock_identity == b.clock_identity:
        if a == b:
            raise ProtocolError("bmca_compare needs distinct candidates")
        raise ProtocolError("distinct candidates share a clock identity")
    return Ordering.A_BETTER if a.comparison_key() < b.comparison_key() else Ordering.B_BETTER


def run_bmca(candidates: Iterable[tuple[str, AnnounceAttributes]],
             announce_deadlines: Mapping[str, int] | None = None,
             now_ns: int | None = None) -> str | None:
    """Best unexpired candidate id, or None when every Announce has expired.

    announce_deadlines maps candidate id to the instant its Announce expires;
    candidates without a deadline entry are treated as unexpired.
    """
    best_id: str | None = None
    best_attrs: AnnounceAttributes | None = None
    for cand_id, attrs in candidates:
        if announce_deadlines is not None and now_ns is not None:
            deadline = announce_deadlines.get(cand_id)
            if deadline is not None and deadline <= now_ns:
                continue
        if best_attrs is None or bmca_compare(attrs, best_attrs) is Ordering.A_BETTER:
            best_id, best_attrs = cand_id, attrs
    return best_id


@dataclass
class PtpMessage:
    msg_type: MsgType
    sequence_id: int
    src_mac: str
    dst_mac: str = PTP_MULTICAST_MAC
    origin_timestamp: SimInstant | None = None
    announce: AnnounceAttributes | None = None
    length_bytes: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.sequence_id < SEQ_MODULUS:
            raise ValueError("sequence_id outside 0..65535")
        if (self.announce is not None) != (self.msg_type is MsgType.ANNOUNCE):
            raise ValueError("announce attributes present iff msg_type is ANNOUNCE")
        if self.length_bytes == 0:
            self.length_bytes = FRAME_LENGTH.get(self.msg_type, 64)
        if self.length_bytes <= 0:
            raise ValueError("length_bytes must be positive")


@dataclass
class SyncSample:
    t1: SimInstant | None = None
    t2: SimInstant | None = None
    t3: SimInstant | None = None
    t4: SimInstant | None = None
    t1_prev: SimInstant | None = None
    t2_prev: SimInstant | None = None

    def complete(self) -> bool:
        return None not in (self.t1, self.t2, self.t3, self.t4)


@dataclass
class SyncEstimate:
    drift: Fraction | None
    delay_ns: int
    offset_ns: int
    computed_at: SimInstant
    sequence_id: int = 0
    delay_negative: bool = False

    def __post_init__(self) -> None:
        self.delay_negative = self.delay_ns < 0


def compute_drift(sample: SyncSample) -> Fraction:
    """Relative frequency difference between the two clocks, exact rational."""
    if None in (sample.t1, sample.t2, sample.t1_prev, sample.t2_prev):
        raise ValueError("drift needs t1, t2 and their previous pair")
    dt1 = sample.t1 - sample.t1_prev
    if dt1 == 0:
        raise ZeroDivisionError("t1 equals t1_prev; drift undefined for this sample")
    return Fraction((sample.t2 - sample.t2_prev) - dt1, dt1)


def compute_delay(sample: SyncSample) -> int:
    """One-way path delay, halved with round-half-to-even on odd numerators.

    Negative results are retained (attacks produce them); callers flag rather
    than clamp.
    """
    if not sample.complete():
        raise ValueError("delay needs the full t1..t4 tuple")
    numerator = (sample.t4 - sample.t1) - (sample.t3 - sample.t2)
    return round(Fraction(numerator, 2))


def compute_offset(sample: SyncSample, delay_ns: int) -> int:
    """Slave-minus-master phase offset given the delay from the same sample."""
    if sample.t1 is None or sample.t2 is None:
        raise ValueError("offset needs t1 and t2")
    return (sample.t2 - sample.t1) - delay_ns


def seq_after(seq: int) -> int:
    return (seq + 1) % SEQ_MODULUS


def seq_is_lower(seq: int, reference: int, window: int = SEQ_MODULUS // 2) -> bool:
    """Serial-number comparison: seq behind reference within the given window."""
    diff = (reference - seq) % SEQ_MODULUS
    return 0 < diff < window


class MasterPort:
    """Master-side protocol state: periodic Announce and Sync/FollowUp plus
    DelayResp service.  Emission is driven by step(now) at scheduled instants.
    """

    def __init__(self, clock: ClockModel, mac: str, attributes: AnnounceAttributes,
                 announce_interval_ns: int, sync_interval_ns: int,
                 followup_gap_ns: int = 20_000) -> None:
        self.clock = clock
        self.mac = mac
        self.attributes = attributes
        self.announce_interval_ns = int(announce_interval_ns)
        self.sync_interval_ns = int(sync_interval_ns)
        self.followup_gap_ns = int(followup_gap_ns)
        self.announce_seq = 0
        self.sync_seq = 0
        self.next_announce_ns = self.announce_interval_ns
        self.next_sync_ns = self.sync_interval_ns
        self._pending_followup: tuple[int, SimInstant, int] | None = None  # seq, t1, due
        self._pending_resps: list[tuple[int, SimInstant]] = []  # req seq, t4

    def next_due_ns(self) -> int:
        due = [self.next_announce_ns, self.next_sync_ns]
        if self._pending_followup is not None:
            due.append(self._pending_followup[2])
        return min(due)

    def step(self, now_ns: int) -> list[PtpMessage]:
        """Emit everything due at now_ns; timestamps read off the master clock."""
        self.clock.advance_to(now_ns)
        out: list[PtpMessage] = []
        if self._pending_followup is not None and now_ns >= self._pending_followup[2]:
            seq, t1, _ = self._pending_followup
            out.append(PtpMessage(MsgType.FOLLOW_UP, seq, self.mac, origin_timestamp=t1))
            self._pending_followup = None
        if now_ns >= self.next_announce_ns:
            out.append(PtpMessage(MsgType.ANNOUNCE, self.announce_seq, self.mac,
                                  announce=self.attributes))
            self.announce_seq = seq_after(self.announce_seq)
            self.next_announce_ns += self.announce_interval_ns
        if now_ns >= self.next_sync_ns and self._pending_followup is None:
            t1 = self.clock.read_timestamp()
            out.append(PtpMessage(MsgType.SYNC, self.sync_seq, self.mac, origin_timestamp=0))
            self._pending_followup = (self.sync_seq, t1, now_ns + self.followup_gap_ns)
            self.sync_seq = seq_after(self.sync_seq)
            self.next_sync_ns += self.sync_interval_ns
        for req_seq, t4 in self._pending_resps:
            out.append(PtpMessage(MsgType.DELAY_RESP, req_seq, self.mac, origin_timestamp=t4))
        self._pending_resps.clear()
        return out

    def handle_delay_req(self, msg: PtpMessage, now_ns: int) -> None:
        """Record the request's arrival timestamp T4 for the next step()."""
        self.clock.advance_to(now_ns)
        t4 = self.clock.read_timestamp()
        self._pending_resps.append((msg.sequence_id, t4))


@dataclass
class SlaveCounters:
    ignored_foreign_sync: int = 0
    orphan_followups: int = 0
    orphan_delay_resps: int = 0
    overwritten_pending: int = 0


class SlavePort:
    """Slave-side protocol state: election, sample assembly, servo coupling.

    Sync-family messages from anyone but the elected master are ignored.  A
    FollowUp completes (t1, t2) and triggers a DelayReq; the DelayResp closes
    the sample, producing a SyncEstimate and one servo update.  On election
    change, pending samples are discarded (they belong to the old master).
    """

    def __init__(self, clock: ClockModel, mac: str,
                 announce_timeout_ns: int, holdover_timeout_ns: int,
                 send: Callable[[PtpMessage], SimInstant] | None = None) -> None:
        self.clock = clock
        self.mac = mac
        self.announce_timeout_ns = int(announce_timeout_ns)
        self.holdover_timeout_ns = int(holdover_timeout_ns)
        self.send = send
        self.elected: str | None = None  # master's source MAC
        self.candidates: dict[str, AnnounceAttributes] = {}
        self.deadlines: dict[str, int] = {}
        self.counters = SlaveCounters()
        self.estimates: list[SyncEstimate] = []
        self.election_history: list[tuple[int, str | None]] = []
        self.last_estimate_true_ns: int | None = None
        self._pending: dict[int, SyncSample] = {}
        self._req_to_sync: dict[int, int] = {}
        self._delay_req_seq = 0
        self._t1_prev: SimInstant | None = None
        self._t2_prev: SimInstant | None = None

    def _elect(self, now_ns: int) -> None:
        winner = run_bmca(self.candidates.items(), self.deadlines, now_ns)
        if winner != self.elected:
            self.elected = winner
            self.election_history.append((now_ns, winner))
            self._pending.clear()
            self._req_to_sync.clear()

    def check_timeouts(self, now_ns: int) -> None:
        """Expire stale Announces and drop the servo to holdover when starved."""
        expired = [mac for mac, deadline in self.deadlines.items() if deadline <= now_ns]
        if expired:
            self._elect(now_ns)
        if (self.clock.servo.mode is ServoMode.LOCKED
                and self.last_estimate_true_ns is not None
                and now_ns - self.last_estimate_true_ns >= self.holdover_timeout_ns):
            servo_holdover(self.clock)

    def handle(self, msg: PtpMessage, now_ns: int) -> SyncEstimate | None:
        """Process one received message at true time now_ns."""
        self.clock.advance_to(now_ns)
        kind = msg.msg_type
        if kind is MsgType.ANNOUNCE:
            self.candidates[msg.src_mac] = msg.announce
            self.deadlines[msg.src_mac] = now_ns + self.announce_timeout_ns
            self._elect(now_ns)
            return None
        if kind is MsgType.SYNC:
            if msg.src_mac != self.elected:
                self.counters.ignored_foreign_sync += 1
                return None
            if msg.sequence_id in self._pending:
                self.counters.overwritten_pending += 1
            self._pending[msg.sequence_id] = SyncSample(t2=self.clock.read_timestamp())
            return None
        if kind is MsgType.FOLLOW_UP:
            if msg.src_mac != self.elected:
                self.counters.ignored_foreign_sync += 1
                return None
            sample = self._pending.get(msg.sequence_id)
            if sample is None or sample.t2 is None:
                self.counters.orphan_followups += 1
                return None
            sample.t1 = msg.origin_timestamp
            req = PtpMessage(MsgType.DELAY_REQ, self._delay_req_seq, self.mac)
            self._req_to_sync[self._delay_req_seq] = msg.sequence_id
            self._delay_req_seq = seq_after(self._delay_req_seq)
            if self.send is not None:
                sample.t3 = self.send(req)
            else:
                sample.t3 = self.clock.read_timestamp()
            return None
        if kind is MsgType.DELAY_RESP:
            sync_seq = self._req_to_sync.pop(msg.sequence_id, None)
            if sync_seq is None or sync_seq not in self._pending:
                self.counters.orphan_delay_resps += 1
                return None
            sample = self._pending.pop(sync_seq)
            sample.t4 = msg.origin_timestamp
            sample.t1_prev, sample.t2_prev = self._t1_prev, self._t2_prev
            return self._finish_sample(sample, sync_seq, now_ns)
        return None

    def _finish_sample(self, sample: SyncSample, seq: int, now_ns: int) -> SyncEstimate | None:
        if not sample.complete():
            return None
        delay = compute_delay(sample)
        offset = compute_offset(sample, delay)
        drift: Fraction | None = None
        if sample.t1_prev is not None and sample.t1 != sample.t1_prev:
            drift = compute_drift(sample)
        self._t1_prev, self._t2_prev = sample.t1, sample.t2
        estimate = SyncEstimate(drift=drift, delay_ns=delay, offset_ns=offset,
                                computed_at=self.clock.read_timestamp(), sequence_id=seq)
        self.estimates.append(estimate)
        self.last_estimate_true_ns = now_ns
        servo_update(self.clock, offset, delay)
        return estimate
