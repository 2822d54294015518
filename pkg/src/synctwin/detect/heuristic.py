"""Rule-based detector over a queue of the last S packets.

Spoof rule: four or more consecutive Announce messages.  Any other message
type resets the counter, which is exactly the failure mode on interleaved
traffic: legitimate packets arriving between counterfeit Announces keep the
count below the trigger.

Replay rules, applied to the Sync/FollowUp stream only: a FollowUp separated
from its Sync by intervening packets, a sequence id behind the previous one of
the same type (wrap-aware serial comparison), or an exact (type, seq) pair
already present in the queue.  The queue holds only Sync/FollowUp entries, so
unrelated traffic cannot trip the pairing rule.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..dataset import FeatureRecord, SlidingWindow
from ..ptp import MsgType, seq_is_lower
from . import Verdict

ANNOUNCE_RUN_TRIGGER = 4
SEQ_REGRESSION_WINDOW = 32768

_ANNOUNCE = MsgType.ANNOUNCE.code
_SYNC = MsgType.SYNC.code
_FOLLOW_UP = MsgType.FOLLOW_UP.code

REPLAY_RULE_TYPES = (_SYNC, _FOLLOW_UP)


@dataclass
class HeuristicState:
    queue_size: int = 32
    consecutive_announce: int = 0
    recent: deque = field(default_factory=deque)  # (msg_type_code, seq_id)
    last_seq_by_type: dict = field(default_factory=dict)
    flags: dict = field(default_factory=lambda: {
        "announce_run": 0, "split_pair": 0, "seq_regression": 0, "duplicate": 0})


class HeuristicDetector:
    def __init__(self, queue_size: int = 32) -> None:
        if queue_size < 1:
            raise ValueError("queue_size must be >= 1")
        self.state = HeuristicState(queue_size=queue_size)

    def step(self, rec: FeatureRecord) -> Verdict:
        """Advance on one packet; probability is 1.0 when any rule fires."""
        st = self.state
        code = rec.msg_type_code
        fired = False

        if code == _ANNOUNCE:
            st.consecutive_announce += 1
            if st.consecutive_announce >= ANNOUNCE_RUN_TRIGGER:
                st.flags["announce_run"] += 1
                fired = True
        else:
            st.consecutive_announce = 0

        if code in REPLAY_RULE_TYPES:
            if (code, rec.seq_id) in st.recent:
                st.flags["duplicate"] += 1
                fired = True
            prev_seq = st.last_seq_by_type.get(code)
            if prev_seq is not None and seq_is_lower(rec.seq_id, prev_seq,
                                                    SEQ_REGRESSION_WINDOW):
                st.flags["seq_regression"] += 1
                fired = True
            if code == _FOLLOW_UP and self._split_pair(rec.seq_id):
                st.flags["split_pair"] += 1
                fired = True
            st.last_seq_by_type[code] = rec.seq_id
            st.recent.append((code, rec.seq_id))
            while len(st.recent) > st.queue_size:
                st.recent.popleft()

        probability = 1.0 if fired else 0.0
        return Verdict(probability, int(fired), rec.ts_ns, rec.ts_ns)

    def _split_pair(self, fu_seq: int) -> bool:
        """True when the matching Sync is in the queue but not the last entry."""
        entries = list(self.state.recent)
        for idx in range(len(entries) - 1, -1, -1):
            if entries[idx] == (_SYNC, fu_seq):
                return idx != len(entries) - 1
        return False


def flag_records(records: list[FeatureRecord], queue_size: int = 32) -> list[int]:
    """Per-record decisions from one streaming pass."""
    det = HeuristicDetector(queue_size)
    return [det.step(rec).decision for rec in records]


def evaluate_heuristic(records: list[FeatureRecord], windows: list[SlidingWindow],
                       window_offsets: list[int], queue_size: int = 32) -> dict:
    """Window-level confusion metrics: a window is flagged when any member
    record fired during the single streaming pass over the full record list.

    window_offsets gives each window's starting index into records.
    """
    flags = flag_records(records, queue_size)
    tp = fp = tn = fn = 0
    for window, start in zip(windows, window_offsets):
        size = len(window.records)
        predicted = 1 if any(flags[start:start + size]) else 0
        if window.label == 1 and predicted == 1:
            tp += 1
        elif window.label == 1:
            fn += 1
        elif predicted == 1:
            fp += 1
        else:
            tn += 1
    return confusion_metrics(tp, fp, tn, fn)


def confusion_metrics(tp: int, fp: int, tn: int, fn: int) -> dict:
    total = tp + fp + tn + fn
    metrics: dict = {"tp": tp, "fp": fp, "tn": tn, "fn": fn}
    metrics["accuracy"] = (tp + tn) / total if total else None
    metrics["recall"] = tp / (tp + fn) if (tp + fn) else None
    metrics["precision"] = tp / (tp + fp) if (tp + fp) else None
    if metrics["recall"] is not None and metrics["precision"] is not None \
            and (metrics["recall"] + metrics["precision"]) > 0:
        metrics["f1"] = (2 * metrics["precision"] * metrics["recall"]
                         / (metrics["precision"] + metrics["recall"]))
    else:
        metrics["f1"] = None
    return metrics
