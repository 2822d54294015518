from __future__ import annotations

import pytest

from synctwin.config import ConfigError
from synctwin.netsim import (LinkModel, MirrorRecord, PortConfig, PortRole,
                             Switch, TraceRecord, message_to_record,
                             read_trace, replay_background, write_trace)
from synctwin.ptp import PTP_ETHERTYPE, MsgType, PtpMessage
from synctwin.timebase import Scheduler


def quiet_link() -> LinkModel:
    return LinkModel(base_latency_ns=30, jitter_std_ns=0, load_jitter_coeff=0.0)


def make_net(link: LinkModel | None = None, seed: int = 0):
    scheduler = Scheduler()
    switch = Switch(scheduler, link or quiet_link(), seed=seed)
    return scheduler, switch


class Sink:
    def __init__(self):
        self.received: list[tuple[PtpMessage, int]] = []

    def __call__(self, msg: PtpMessage, rx_ns: int) -> None:
        self.received.append((msg, rx_ns))


class TestTraceRecord:
    def test_ptp_json_round_trip_is_byte_exact(self):
        rec = TraceRecord(1234, "0a:44:57:00:00:01", "01:1b:19:00:00:00",
                          PTP_ETHERTYPE, 64, "sync", 17, 0)
        line = rec.to_json_line()
        assert line == ('{"ts_ns":1234,"src_mac":"0a:44:57:00:00:01",'
                        '"dst_mac":"01:1b:19:00:00:00","ethertype":"0x88f7",'
                        '"len":64,"ptp_type":"sync","seq_id":17,"origin_ts_ns":0}')
        back = TraceRecord.from_json_line(line)
        assert back == rec
        assert back.to_json_line() == line

    def test_non_ptp_omits_ptp_fields(self):
        rec = TraceRecord(5, "aa:aa:aa:00:00:01", "ff:ff:ff:ff:ff:ff", 0x0800, 150)
        line = rec.to_json_line()
        assert "ptp_type" not in line
        back = TraceRecord.from_json_line(line)
        assert back == rec
        assert not back.is_ptp

    def test_message_to_record_mapping(self):
        msg = PtpMessage(MsgType.FOLLOW_UP, 9, "0a:44:57:00:00:01",
                         origin_timestamp=777)
        rec = message_to_record(msg, 1000)
        assert rec.ts_ns == 1000
        assert rec.ethertype == PTP_ETHERTYPE
        assert rec.ptp_type == "follow_up"
        assert rec.seq_id == 9
        assert rec.origin_ts_ns == 777
        assert rec.length_bytes == 64

    def test_file_round_trip(self, tmp_path):
        records = [
            TraceRecord(1, "aa:aa:aa:00:00:01", "ff:ff:ff:ff:ff:ff", 0x0800, 100),
            TraceRecord(2, "0a:44:57:00:00:01", "01:1b:19:00:00:00",
                        PTP_ETHERTYPE, 78, "announce", 3, None),
        ]
        path = tmp_path / "trace.jsonl"
        assert write_trace(str(path), records) == 2
        assert read_trace(str(path)) == records


class TestSwitchDelivery:
    def test_broadcast_reaches_all_but_origin(self):
        scheduler, switch = make_net()
        du, ru, tap = Sink(), Sink(), Sink()
        switch.attach("du", "aa:aa:aa:00:00:01", du)
        switch.attach("ru", "aa:aa:aa:00:00:02", ru)
        switch.attach("listener", "aa:aa:aa:00:00:03", tap)
        msg = PtpMessage(MsgType.SYNC, 0, "aa:aa:aa:00:00:01", origin_timestamp=0)
        switch.send("du", msg, 100)
        scheduler.run_until(10_000)
        assert not du.received
        assert [rx for _, rx in ru.received] == [130]
        assert [rx for _, rx in tap.received] == [130]
        assert switch.delivered == 1

    def test_unicast_reaches_only_target(self):
        scheduler, switch = make_net()
        du, ru, other = Sink(), Sink(), Sink()
        switch.attach("du", "aa:aa:aa:00:00:01", du)
        switch.attach("ru", "aa:aa:aa:00:00:02", ru)
        switch.attach("other", "aa:aa:aa:00:00:03", other)
        msg = PtpMessage(MsgType.DELAY_RESP, 4, "aa:aa:aa:00:00:01",
                         dst_mac="aa:aa:aa:00:00:02", origin_timestamp=5)
        switch.send("du", msg, 0)
        scheduler.run_until(10_000)
        assert len(ru.received) == 1
        assert not other.received

    def test_send_from_unattached_node_rejected(self):
        _, switch = make_net()
        with pytest.raises(ConfigError):
            switch.send("ghost", PtpMessage(MsgType.SYNC, 0, "aa:aa:aa:00:00:09",
                                            origin_timestamp=0), 0)

    def test_duplicate_attach_rejected(self):
        _, switch = make_net()
        switch.attach("du", "aa:aa:aa:00:00:01")
        with pytest.raises(ConfigError):
            switch.attach("du", "aa:aa:aa:00:00:09")


class TestRoleFilters:
    def test_slave_only_ingress_drops_everything(self):
        scheduler, switch = make_net()
        du = Sink()
        switch.attach("du", "aa:aa:aa:00:00:01", du)
        switch.attach("ru", "aa:aa:aa:00:00:02", Sink())
        switch.configure_port("ru", PortConfig("ru", ptp_role=PortRole.SLAVE_ONLY))
        switch.send("ru", PtpMessage(MsgType.SYNC, 0, "aa:aa:aa:00:00:02",
                                     origin_timestamp=0), 50)
        scheduler.run_until(10_000)
        assert not du.received
        assert switch.dropped.get("slave_only_ingress") == 1
        assert not switch.mirror  # dropped before the mirror tap

    def test_master_only_egress_blocks_toward_port(self):
        scheduler, switch = make_net()
        du, ru = Sink(), Sink()
        switch.attach("du", "aa:aa:aa:00:00:01", du)
        switch.attach("ru", "aa:aa:aa:00:00:02", ru)
        switch.configure_port("du", PortConfig("du", ptp_role=PortRole.MASTER_ONLY))
        switch.send("ru", PtpMessage(MsgType.DELAY_REQ, 0, "aa:aa:aa:00:00:02"), 50)
        scheduler.run_until(10_000)
        assert not du.received
        assert switch.dropped.get("master_only_egress") == 1
        assert len(switch.mirror) == 1  # ingress mirror still sees the frame

    def test_duplicate_mac_block(self):
        scheduler, switch = make_net()
        du, ru = Sink(), Sink()
        switch.attach("du", "aa:aa:aa:00:00:01", du)
        switch.attach("ru", "aa:aa:aa:00:00:02", ru)
        switch.attach("attacker", "aa:aa:aa:00:00:a3", Sink())
        switch.configure_port("attacker",
                              PortConfig("attacker", block_duplicate_mac=True))
        forged = PtpMessage(MsgType.SYNC, 0, "aa:aa:aa:00:00:01", origin_timestamp=0)
        switch.send("attacker", forged, 10)
        scheduler.run_until(10_000)
        assert not ru.received
        assert switch.dropped.get("duplicate_mac") == 1
        # the attacker's own MAC still passes
        own = PtpMessage(MsgType.SYNC, 1, "aa:aa:aa:00:00:a3", origin_timestamp=0)
        switch.send("attacker", own, 15_000)
        scheduler.run_until(20_000)
        assert len(ru.received) == 1

    def test_spoofed_source_passes_without_block(self):
        scheduler, switch = make_net()
        ru = Sink()
        switch.attach("du", "aa:aa:aa:00:00:01", Sink())
        switch.attach("ru", "aa:aa:aa:00:00:02", ru)
        switch.attach("attacker", "aa:aa:aa:00:00:a3", Sink())
        forged = PtpMessage(MsgType.SYNC, 0, "aa:aa:aa:00:00:01", origin_timestamp=0)
        switch.send("attacker", forged, 10)
        scheduler.run_until(10_000)
        assert len(ru.received) == 1


class TestMirror:
    def test_mirror_keeps_true_origin_for_spoofed_source(self):
        scheduler, switch = make_net()
        switch.attach("du", "aa:aa:aa:00:00:01", Sink())
        switch.attach("attacker", "aa:aa:aa:00:00:a3", Sink())
        forged = PtpMessage(MsgType.SYNC, 0, "aa:aa:aa:00:00:01", origin_timestamp=0)
        switch.send("attacker", forged, 10)
        scheduler.run_until(1_000)
        entry = switch.mirror[0]
        assert entry.record.src_mac == "aa:aa:aa:00:00:01"  # forged on the wire
        assert entry.origin_node == "attacker"
        assert entry.origin_mac == "aa:aa:aa:00:00:a3"  # ground truth survives

    def test_mirror_tap_called_in_order(self):
        scheduler, switch = make_net()
        seen: list[MirrorRecord] = []
        switch.mirror_taps.append(seen.append)
        switch.attach("du", "aa:aa:aa:00:00:01", Sink())
        switch.attach("ru", "aa:aa:aa:00:00:02", Sink())
        for i in range(3):
            switch.send("du", PtpMessage(MsgType.SYNC, i, "aa:aa:aa:00:00:01",
                                         origin_timestamp=0), 100 * i)
        scheduler.run_until(10_000)
        assert [m.record.seq_id for m in seen] == [0, 1, 2]
        assert seen == switch.mirror


class TestLatency:
    def test_fifo_per_link_never_reorders(self):
        scheduler, switch = make_net(LinkModel(30, 25, 0.0), seed=3)
        ru = Sink()
        switch.attach("du", "aa:aa:aa:00:00:01", Sink())
        switch.attach("ru", "aa:aa:aa:00:00:02", ru)
        for i in range(200):
            switch.send("du", PtpMessage(MsgType.SYNC, i % 65536,
                                         "aa:aa:aa:00:00:01", origin_timestamp=0),
                        10 * i)
        scheduler.run_until(10**7)
        rx_times = [rx for _, rx in ru.received]
        assert len(rx_times) == 200
        assert rx_times == sorted(rx_times)
        seqs = [m.sequence_id for m, _ in ru.received]
        assert seqs == list(range(200))

    def test_load_inflates_latency(self):
        scheduler, switch = make_net(LinkModel(30, 0, 0.5))
        ru = Sink()
        switch.attach("du", "aa:aa:aa:00:00:01", Sink())
        switch.attach("ru", "aa:aa:aa:00:00:02", ru)
        switch.send("du", PtpMessage(MsgType.SYNC, 0, "aa:aa:aa:00:00:01",
                                     origin_timestamp=0), 0)
        # a background burst raises instantaneous load before the next frame
        burst = TraceRecord(0, "bb:bb:bb:00:00:09", "ff:ff:ff:ff:ff:ff", 0x0800, 1500)
        switch.attach("background", "bb:bb:bb:00:00:09")
        for _ in range(20):
            switch.inject_background(burst, 1)
        switch.send("du", PtpMessage(MsgType.SYNC, 1, "aa:aa:aa:00:00:01",
                                     origin_timestamp=0), 2)
        scheduler.run_until(10**6)
        first, second = [rx for _, rx in ru.received]
        assert first == 30 + round(0.5 * 64)
        assert second - 2 > first  # loaded link is strictly slower

    def test_same_seed_same_arrivals(self):
        def run(seed):
            scheduler, switch = make_net(LinkModel(30, 6, 0.0), seed=seed)
            ru = Sink()
            switch.attach("du", "aa:aa:aa:00:00:01", Sink())
            switch.attach("ru", "aa:aa:aa:00:00:02", ru)
            for i in range(50):
                switch.send("du", PtpMessage(MsgType.SYNC, i, "aa:aa:aa:00:00:01",
                                             origin_timestamp=0), 1000 * i)
            scheduler.run_until(10**6)
            return [rx for _, rx in ru.received]

        assert run(7) == run(7)
        assert run(7) != run(8)


class TestBackground:
    def test_inject_requires_attached_origin(self):
        _, switch = make_net()
        rec = TraceRecord(0, "bb:bb:bb:00:00:09", "ff:ff:ff:ff:ff:ff", 0x0800, 100)
        with pytest.raises(ConfigError):
            switch.inject_background(rec, 0)

    def test_inject_is_mirror_only(self):
        scheduler, switch = make_net()
        du = Sink()
        switch.attach("du", "aa:aa:aa:00:00:01", du)
        switch.attach("background", "bb:bb:bb:00:00:09")
        rec = TraceRecord(123, "bb:bb:bb:00:00:09", "ff:ff:ff:ff:ff:ff", 0x0800, 100)
        switch.inject_background(rec, 456)
        scheduler.run_until(10_000)
        assert not du.received
        assert len(switch.mirror) == 1
        mirrored = switch.mirror[0].record
        assert mirrored.ts_ns == 456  # restamped at injection time
        assert switch.mirror[0].origin_node == "background"

    def test_replay_scales_gaps_and_counts(self):
        scheduler, switch = make_net()
        switch.attach("background", "bb:bb:bb:00:00:09")
        trace = [TraceRecord(t, "bb:bb:bb:00:00:09", "ff:ff:ff:ff:ff:ff", 0x0800, 60)
                 for t in (1000, 1400, 2000)]
        n = replay_background(switch, scheduler, trace, speed=2.0, start_ns=500)
        assert n == 3
        scheduler.run_until(10_000)
        assert [m.record.ts_ns for m in switch.mirror] == [500, 700, 1000]

    def test_replay_rejects_unsorted_and_bad_speed(self):
        scheduler, switch = make_net()
        switch.attach("background", "bb:bb:bb:00:00:09")
        bad = [TraceRecord(10, "a:b:c:d:e:f", "f:e:d:c:b:a", 0x0800, 60),
               TraceRecord(5, "a:b:c:d:e:f", "f:e:d:c:b:a", 0x0800, 60)]
        with pytest.raises(ConfigError):
            replay_background(switch, scheduler, bad)
        with pytest.raises(ConfigError):
            replay_background(switch, scheduler, [], speed=0.0)

    def test_replay_empty_trace(self):
        scheduler, switch = make_net()
        assert replay_background(switch, scheduler, []) == 0
