"""Property-based invariants for the timing math, clocks, and containers."""
from __future__ import annotations

import decimal
import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from synctwin.attacks import (AttackLog, AttackSchedule, ScheduleKind,
                              parse_schedule, windows_for_run)
from synctwin.dataset import FeatureRecord, MacMapper, Scaler, make_windows
from synctwin.netsim import TraceRecord
from synctwin.ptp import (SEQ_MODULUS, AnnounceAttributes, SyncSample,
                          compute_delay, compute_drift, compute_offset,
                          run_bmca, seq_after, seq_is_lower)
from synctwin.timebase import NS_PER_S, ClockModel

TS = st.integers(min_value=0, max_value=10**15)
SMALL = st.integers(min_value=-10**9, max_value=10**9)


def oracle_half_even(numerator: int) -> int:
    with decimal.localcontext() as ctx:
        ctx.prec = 50
        half = decimal.Decimal(numerator) / 2
        return int(half.to_integral_value(rounding=decimal.ROUND_HALF_EVEN))


class TestFormulas:
    @given(t1=TS, t2=TS, t3=TS, t4=TS)
    def test_delay_matches_decimal_rounding(self, t1, t2, t3, t4):
        sample = SyncSample(t1=t1, t2=t2, t3=t3, t4=t4)
        assert compute_delay(sample) == oracle_half_even((t4 - t1) - (t3 - t2))

    @given(t1=TS, t2=TS, t3=TS, t4=TS)
    def test_half_even_parity(self, t1, t2, t3, t4):
        numerator = (t4 - t1) - (t3 - t2)
        delay = compute_delay(SyncSample(t1=t1, t2=t2, t3=t3, t4=t4))
        if numerator % 2 == 0:
            assert 2 * delay == numerator
        else:
            assert abs(2 * delay - numerator) == 1
            assert delay % 2 == 0

    @given(t1=TS, t3=TS, d=st.integers(min_value=0, max_value=10**9), theta=SMALL)
    def test_symmetric_path_recovers_delay_and_offset(self, t1, t3, d, theta):
        sample = SyncSample(t1=t1, t2=t1 + d + theta, t3=t3, t4=t3 + d - theta)
        delay = compute_delay(sample)
        assert delay == d
        assert compute_offset(sample, delay) == theta

    @given(t1=TS, t3=TS, theta=SMALL,
           d_fwd=st.integers(min_value=0, max_value=10**9),
           d_rev=st.integers(min_value=0, max_value=10**9))
    def test_asymmetry_shifts_offset_by_half_the_difference(self, t1, t3, theta,
                                                           d_fwd, d_rev):
        sample = SyncSample(t1=t1, t2=t1 + d_fwd + theta, t3=t3, t4=t3 + d_rev - theta)
        delay = compute_delay(sample)
        offset = compute_offset(sample, delay)
        assert abs(Fraction(offset - theta) - Fraction(d_fwd - d_rev, 2)) <= Fraction(1, 2)

    @given(num=st.integers(min_value=-10**6, max_value=10**6),
           den=st.integers(min_value=1, max_value=10**4),
           steps=st.integers(min_value=1, max_value=10**5),
           t1_prev=TS, t2_prev=TS)
    def test_drift_recovers_exact_rate(self, num, den, steps, t1_prev, t2_prev):
        rate = Fraction(num, den)
        dt1 = den * steps
        sample = SyncSample(t1=t1_prev + dt1, t2=t2_prev + dt1 + rate * dt1,
                            t1_prev=t1_prev, t2_prev=t2_prev)
        assert compute_drift(sample) == rate

    @given(t1=TS, t2=TS, t2_prev=TS)
    def test_zero_span_drift_raises(self, t1, t2, t2_prev):
        sample = SyncSample(t1=t1, t2=t2, t1_prev=t1, t2_prev=t2_prev)
        with pytest.raises(ZeroDivisionError):
            compute_drift(sample)


class TestClockInvariants:
    @given(ppb=st.integers(min_value=-10**6, max_value=10**6),
           phase=SMALL,
           cuts=st.lists(st.integers(min_value=1, max_value=10**9),
                         min_size=1, max_size=20))
    def test_subdivision_invariance(self, ppb, phase, cuts):
        whole = ClockModel("a", freq_error_ppb=ppb, phase_offset_ns=phase)
        parts = ClockModel("b", freq_error_ppb=ppb, phase_offset_ns=phase)
        total = sum(cuts)
        whole.advance(total)
        for cut in cuts:
            parts.advance(cut)
        assert whole.local_time() == parts.local_time()
        assert whole.phase_error_ns() == parts.phase_error_ns()

    @given(ppb=st.integers(min_value=-10**6, max_value=10**6),
           span=st.integers(min_value=1, max_value=10**12))
    def test_exact_rational_drift(self, ppb, span):
        clock = ClockModel("c", freq_error_ppb=ppb)
        clock.advance(span)
        assert clock.local_time() == (span * (NS_PER_S + ppb)) // NS_PER_S

    @given(noise=st.integers(min_value=1, max_value=500),
           resolution=st.integers(min_value=1, max_value=64),
           seed=st.integers(min_value=0, max_value=2**16),
           steps=st.lists(st.integers(min_value=1, max_value=10**6),
                          min_size=2, max_size=30))
    def test_reads_never_decrease(self, noise, resolution, seed, steps):
        clock = ClockModel("n", freq_error_ppb=1000, noise_std_ns=noise,
                           resolution_ns=resolution, seed=seed)
        last = clock.read_timestamp()
        assert last % resolution == 0
        for step in steps:
            clock.advance(step)
            now = clock.read_timestamp()
            assert now >= last
            assert now % resolution == 0
            last = now


def announce_attrs(draw_ints, identity_int):
    p1, cls, acc, var, p2 = draw_ints
    return AnnounceAttributes(priority1=p1, clock_class=cls, clock_accuracy=acc,
                              offset_scaled_log_variance=var, priority2=p2,
                              clock_identity=identity_int.to_bytes(8, "big"))


candidate_lists = st.lists(
    st.tuples(st.integers(min_value=0, max_value=255),
              st.integers(min_value=0, max_value=255),
              st.integers(min_value=0, max_value=255),
              st.integers(min_value=0, max_value=65535),
              st.integers(min_value=0, max_value=255)),
    min_size=1, max_size=8)


class TestBmcaInvariants:
    @given(rows=candidate_lists, shuffle_seed=st.integers(min_value=0, max_value=999))
    def test_winner_is_order_independent_minimum(self, rows, shuffle_seed):
        candidates = [(f"c{i}", announce_attrs(row, i)) for i, row in enumerate(rows)]
        winner = run_bmca(candidates)
        shuffled = list(candidates)
        random.Random(shuffle_seed).shuffle(shuffled)
        assert run_bmca(shuffled) == winner
        best_key = min(attrs.comparison_key() for _, attrs in candidates)
        winner_attrs = dict(candidates)[winner]
        assert winner_attrs.comparison_key() == best_key


class TestSequenceNumbers:
    @given(seq=st.integers(min_value=0, max_value=SEQ_MODULUS - 1))
    def test_after_is_successor_mod_wrap(self, seq):
        nxt = seq_after(seq)
        assert 0 <= nxt < SEQ_MODULUS
        assert (nxt - seq) % SEQ_MODULUS == 1
        assert seq_is_lower(seq, nxt)
        assert not seq_is_lower(nxt, seq)

    @given(a=st.integers(min_value=0, max_value=SEQ_MODULUS - 1),
           b=st.integers(min_value=0, max_value=SEQ_MODULUS - 1))
    def test_antisymmetric_except_antipode(self, a, b):
        ab, ba = seq_is_lower(a, b), seq_is_lower(b, a)
        if a == b or (a - b) % SEQ_MODULUS == SEQ_MODULUS // 2:
            assert not ab and not ba
        else:
            assert ab != ba


schedule_strategy = st.one_of(
    st.builds(lambda a, r: AttackSchedule(ScheduleKind.CYCLIC, attack_s=a, recovery_s=r),
              st.floats(min_value=0.5, max_value=80.0),
              st.floats(min_value=0.5, max_value=80.0)),
    st.just(AttackSchedule(ScheduleKind.CONTINUOUS)),
    st.just(AttackSchedule(ScheduleKind.RANDOMIZED)),
)


class TestScheduleWindows:
    @given(schedule=schedule_strategy,
           start_s=st.floats(min_value=0.0, max_value=200.0),
           duration_s=st.floats(min_value=1.0, max_value=400.0),
           seed=st.integers(min_value=0, max_value=2**16))
    def test_windows_ordered_disjoint_and_clipped(self, schedule, start_s,
                                                  duration_s, seed):
        start = round(start_s * NS_PER_S)
        duration = round(duration_s * NS_PER_S)
        windows = windows_for_run(schedule, start, duration, random.Random(seed))
        prev_end = None
        for lo, hi in windows:
            assert start <= lo < hi <= duration
            if prev_end is not None:
                assert lo > prev_end
            prev_end = hi
        if start < duration:
            assert windows and windows[0][0] == start
        else:
            assert windows == []

    @given(seed=st.integers(min_value=0, max_value=2**16),
           text=st.sampled_from(["30/30", "40/20", "50/10", "cont", "rand"]))
    def test_same_seed_same_windows(self, seed, text):
        schedule = parse_schedule(text)
        first = windows_for_run(schedule, 0, 300 * NS_PER_S, random.Random(seed))
        second = windows_for_run(schedule, 0, 300 * NS_PER_S, random.Random(seed))
        assert first == second


mac_strategy = st.integers(min_value=0, max_value=2**48 - 1).map(
    lambda v: ":".join(f"{(v >> (8 * i)) & 0xff:02x}" for i in range(5, -1, -1)))

ptp_type_strategy = st.sampled_from(
    ["announce", "sync", "follow_up", "delay_req", "delay_resp", "other"])


trace_record_strategy = st.one_of(
    st.builds(TraceRecord, ts_ns=TS, src_mac=mac_strategy, dst_mac=mac_strategy,
              ethertype=st.sampled_from([0x0800, 0x0806, 0x86DD]),
              length_bytes=st.integers(min_value=1, max_value=9000)),
    st.builds(TraceRecord, ts_ns=TS, src_mac=mac_strategy, dst_mac=mac_strategy,
              ethertype=st.just(0x88F7),
              length_bytes=st.integers(min_value=1, max_value=9000),
              ptp_type=ptp_type_strategy,
              seq_id=st.integers(min_value=0, max_value=SEQ_MODULUS - 1),
              origin_ts_ns=st.one_of(st.none(), TS)),
)


class TestSerializationRoundTrips:
    @given(record=trace_record_strategy)
    def test_trace_record_jsonl(self, record):
        line = record.to_json_line()
        assert TraceRecord.from_json_line(line) == record
        json.loads(line)

    @given(spans=st.lists(st.tuples(st.integers(min_value=0, max_value=10**6),
                                    st.integers(min_value=1, max_value=10**6)),
                          max_size=8),
           probe=st.integers(min_value=0, max_value=2 * 10**7))
    def test_attack_log_round_trip_and_membership(self, tmp_path_factory, spans, probe):
        log = AttackLog()
        cursor = 0
        intervals = []
        for gap, width in spans:
            lo = cursor + gap
            hi = lo + width
            log.add("spoof", lo, hi, ["aa:bb:cc:dd:ee:01"])
            intervals.append((lo, hi))
            cursor = hi
        path = str(tmp_path_factory.mktemp("log") / "attacks.jsonl")
        log.write(path)
        assert AttackLog.read(path) == log
        assert log.in_window(probe) == any(lo <= probe < hi for lo, hi in intervals)


def feature_record(i: int, label: int) -> FeatureRecord:
    return FeatureRecord(ts_ns=i * 100, src_id=0, dst_id=1, length_bytes=60 + i % 7,
                         seq_id=i % SEQ_MODULUS, msg_type_code=1,
                         inter_arrival_ns=100, label=label)


class TestWindowing:
    @given(labels=st.lists(st.integers(min_value=0, max_value=1), max_size=120),
           size=st.integers(min_value=1, max_value=40),
           stride=st.integers(min_value=1, max_value=8))
    def test_count_contiguity_and_disjunction(self, labels, size, stride):
        records = [feature_record(i, lab) for i, lab in enumerate(labels)]
        windows = list(make_windows(records, size, stride))
        expected = max(0, (len(records) - size) // stride + 1)
        assert len(windows) == expected
        for k, window in enumerate(windows):
            start = k * stride
            assert window.records == records[start:start + size]
            assert window.label == int(any(labels[start:start + size]))

    @given(values=st.lists(st.integers(min_value=0, max_value=10**6),
                           min_size=1, max_size=200))
    @settings(max_examples=40)
    def test_scaler_standardizes_fit_population(self, values):
        records = [FeatureRecord(ts_ns=i, src_id=0, dst_id=1, length_bytes=v,
                                 seq_id=v, msg_type_code=1, inter_arrival_ns=v,
                                 label=0)
                   for i, v in enumerate(values)]
        scaler = Scaler.fit(records)
        assert all(scaler.std[name] > 0 for name in scaler.std)
        scaled = [scaler.transform_features(r.features()) for r in records]
        for idx in (2, 3, 5):
            column = [row[idx] for row in scaled]
            assert abs(sum(column) / len(column)) < 1e-6


class TestMacMapper:
    @given(macs=st.lists(mac_strategy, max_size=60))
    def test_ids_dense_and_stable(self, macs):
        mapper = MacMapper()
        first_pass = [mapper.id_for(m) for m in macs]
        unique = list(dict.fromkeys(macs))
        assert sorted(mapper.mapping.values()) == list(range(len(unique)))
        assert [mapper.id_for(m) for m in macs] == first_pass
        for mac, idx in zip(unique, range(len(unique))):
            assert mapper.mapping[mac] == idx
