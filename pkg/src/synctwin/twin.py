"""Scenario assembly and execution: one DU (master), one RU (slave), one
attacker, and optional background replay on a single switch.

A run produces the capture trace, a 1:1 sidecar of ground-truth origins (used
only for labeling), the attack log, the slave's sync-estimate series, and
counters.  Identical configuration and seed reproduce all outputs byte for
byte.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping

from .attacks import (AttackActor, AttackLog, Flooder, Replayer, Spoofer,
                      parse_schedule, windows_for_run)
from .background import generate_background
from .config import ConfigError, merged_config
from .netsim import (LinkModel, MirrorRecord, PortConfig, PortRole, Switch,
                     read_trace, replay_background, write_trace)
from .ptp import (AnnounceAttributes, MasterPort, MsgType, PtpMessage,
                  SlavePort, SyncEstimate, eui64_identity)
from .timebase import ClockModel, NS_PER_S, Scheduler, ServoState

DU_MAC = "0a:44:57:00:00:01"
RU_MAC = "0a:44:57:00:00:02"
ATTACKER_MAC = "0a:44:57:00:00:a3"
BACKGROUND_MAC = "0a:44:57:00:00:b0"

DU_ANNOUNCE = AnnounceAttributes(
    priority1=128,
    clock_class=6,          # grandmaster-grade source
    clock_accuracy=0x21,
    offset_scaled_log_variance=0x4E5D,
    priority2=128,
    clock_identity=eui64_identity(DU_MAC),
)


@dataclass
class ScenarioConfig:
    seed: int = 1
    duration_s: float = 300.0
    resolution_ns: int = 1
    du_freq_error_ppb: int = 0
    du_noise_std_ns: int = 0
    ru_freq_error_ppb: int = 1000
    ru_noise_std_ns: int = 0
    servo_prop_gain: float = 0.7
    servo_integ_gain: float = 0.3
    servo_max_step_ns: int = 10_000_000
    holdover_timeout_multiplier: int = 3
    announce_interval_ns: int = 125_000_000
    sync_interval_ns: int = 62_500_000
    followup_gap_ns: int = 20_000
    announce_timeout_intervals: int = 3
    base_latency_ns: int = 30
    jitter_std_ns: int = 4
    load_jitter_coeff: float = 0.0005
    attack_kind: str = "none"         # none | spoof | replay | flood
    schedule: str = "30/30"
    attack_start_s: float = 60.0
    replay_delay_ns: int = 1_000_000
    flood_rate_pps: float = 1000.0
    background: str = ""              # profile name, path to a JSONL trace, or empty
    attacker_port_role: str = "dynamic"
    block_duplicate_mac: bool = False

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "ScenarioConfig":
        cfg = merged_config(values)
        return cls(
            seed=int(cfg["sim.seed"]),
            duration_s=float(cfg["sim.duration_s"]),
            resolution_ns=int(cfg["sim.resolution_ns"]),
            du_freq_error_ppb=int(cfg["clock.du.freq_error_ppb"]),
            du_noise_std_ns=int(cfg["clock.du.noise_std_ns"]),
            ru_freq_error_ppb=int(cfg["clock.ru.freq_error_ppb"]),
            ru_noise_std_ns=int(cfg["clock.ru.noise_std_ns"]),
            servo_prop_gain=float(cfg["servo.prop_gain"]),
            servo_integ_gain=float(cfg["servo.integ_gain"]),
            servo_max_step_ns=int(cfg["servo.max_step_ns"]),
            holdover_timeout_multiplier=int(cfg["servo.holdover_timeout_multiplier"]),
            announce_interval_ns=int(cfg["ptp.announce_interval_ns"]),
            sync_interval_ns=int(cfg["ptp.sync_interval_ns"]),
            followup_gap_ns=int(cfg["ptp.followup_gap_ns"]),
            announce_timeout_intervals=int(cfg["ptp.announce_timeout_intervals"]),
            base_latency_ns=int(cfg["link.base_latency_ns"]),
            jitter_std_ns=int(cfg["link.jitter_std_ns"]),
            load_jitter_coeff=float(cfg["link.load_jitter_coeff"]),
            attack_kind=str(cfg["attack.kind"]),
            schedule=str(cfg["attack.schedule"]),
            attack_start_s=float(cfg["attack.start_s"]),
            replay_delay_ns=int(cfg["attack.replay_delay_ns"]),
            flood_rate_pps=float(cfg["attack.flood_rate_pps"]),
            background=str(cfg["net.background"]),
        )

    def run_id(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class RunResult:
    config: ScenarioConfig
    run_id: str
    mirror: list[MirrorRecord]
    attack_log: AttackLog
    estimates: list[SyncEstimate]
    election_history: list[tuple[int, str | None]]
    counters: dict[str, Any]
    slave: SlavePort | None = None
    master: MasterPort | None = None


class RunAbort(Exception):
    """Runtime failure of a scenario or experiment; maps to exit code 3."""


def _readiness_handshake(roles: dict[str, bool]) -> None:
    """All configured roles must report ready before the clock starts."""
    missing = [name for name, ready in roles.items() if not ready]
    if missing:
        raise RunAbort(f"readiness handshake failed; not ready: {', '.join(missing)}")


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    if cfg.duration_s <= 0:
        raise ConfigError("sim.duration_s must be positive")
    if cfg.attack_kind not in ("none", "spoof", "replay", "flood"):
        raise ConfigError(f"unknown attack kind {cfg.attack_kind!r}")
    duration_ns = round(cfg.duration_s * NS_PER_S)
    scheduler = Scheduler()
    link = LinkModel(cfg.base_latency_ns, cfg.jitter_std_ns, cfg.load_jitter_coeff)
    switch = Switch(scheduler, link, seed=cfg.seed)

    du_clock = ClockModel("du", cfg.du_freq_error_ppb, 0, cfg.du_noise_std_ns,
                          cfg.resolution_ns, quality=DU_ANNOUNCE, seed=cfg.seed)
    servo = ServoState(prop_gain=Fraction(str(cfg.servo_prop_gain)),
                       integ_gain=Fraction(str(cfg.servo_integ_gain)),
                       max_step_ns=cfg.servo_max_step_ns)
    ru_clock = ClockModel("ru", cfg.ru_freq_error_ppb, 0, cfg.ru_noise_std_ns,
                          cfg.resolution_ns, servo=servo, seed=cfg.seed)

    master = MasterPort(du_clock, DU_MAC, DU_ANNOUNCE,
                        cfg.announce_interval_ns, cfg.sync_interval_ns, cfg.followup_gap_ns)

    def slave_send(msg: PtpMessage) -> int:
        ru_clock.advance_to(scheduler.now_ns)
        t3 = ru_clock.read_timestamp()
        switch.send("ru", msg, scheduler.now_ns)
        return t3

    slave = SlavePort(ru_clock, RU_MAC,
                      announce_timeout_ns=cfg.announce_timeout_intervals * cfg.announce_interval_ns,
                      holdover_timeout_ns=cfg.holdover_timeout_multiplier * cfg.sync_interval_ns,
                      send=slave_send)

    def on_du_rx(msg: PtpMessage, rx_ns: int) -> None:
        if msg.msg_type is MsgType.DELAY_REQ:
            master.handle_delay_req(msg, rx_ns)
            for out in master.step(rx_ns):
                switch.send("du", out, rx_ns)

    def on_ru_rx(msg: PtpMessage, rx_ns: int) -> None:
        slave.handle(msg, rx_ns)
        if msg.msg_type is MsgType.ANNOUNCE:
            deadline = rx_ns + slave.announce_timeout_ns
            scheduler.schedule(deadline, lambda d=deadline: slave.check_timeouts(d))
        elif msg.msg_type is MsgType.DELAY_RESP:
            check_at = rx_ns + slave.holdover_timeout_ns
            scheduler.schedule(check_at, lambda c=check_at: slave.check_timeouts(c))

    actor_holder: list[AttackActor] = []

    def on_attacker_rx(msg: PtpMessage, rx_ns: int) -> None:
        for actor in actor_holder:
            actor.observe(msg, rx_ns)

    switch.attach("du", DU_MAC, on_du_rx)
    switch.attach("ru", RU_MAC, on_ru_rx)
    switch.attach("attacker", ATTACKER_MAC, on_attacker_rx)
    switch.attach("background", BACKGROUND_MAC, None)

    role = {"dynamic": PortRole.DYNAMIC, "slave_only": PortRole.SLAVE_ONLY,
            "master_only": PortRole.MASTER_ONLY}.get(cfg.attacker_port_role)
    if role is None:
        raise ConfigError(f"unknown attacker port role {cfg.attacker_port_role!r}")
    switch.configure_port("attacker", PortConfig("attacker", role, cfg.block_duplicate_mac))

    def master_tick() -> None:
        now = scheduler.now_ns
        for out in master.step(now):
            switch.send("du", out, now)
        nxt = master.next_due_ns()
        if nxt <= duration_ns:
            scheduler.schedule(nxt, master_tick)

    scheduler.schedule(master.next_due_ns(), master_tick)

    background_frames = 0
    if cfg.background:
        if os.path.exists(cfg.background):
            trace = read_trace(cfg.background)
            trace = [r for r in trace if not r.is_ptp]
        else:
            trace = generate_background(cfg.background, cfg.duration_s, cfg.seed)
        background_frames = replay_background(switch, scheduler, trace)

    attack_rng = random.Random(f"{cfg.seed}/schedule")
    attack_log = AttackLog()
    ready = {"du": True, "ru": True}
    if cfg.attack_kind != "none":
        schedule = parse_schedule(cfg.schedule)
        start_ns = round(cfg.attack_start_s * NS_PER_S)
        windows = windows_for_run(schedule, start_ns, duration_ns, attack_rng)
        ready["attacker"] = bool(windows)

        def attacker_emit(msg: PtpMessage, now_ns: int) -> None:
            switch.send("attacker", msg, now_ns)

        if cfg.attack_kind == "spoof":
            actor = Spoofer(scheduler, ATTACKER_MAC, attacker_emit, windows,
                            cfg.announce_interval_ns)
        elif cfg.attack_kind == "replay":
            actor = Replayer(scheduler, ATTACKER_MAC, attacker_emit, windows,
                             cfg.replay_delay_ns)
        else:
            actor = Flooder(scheduler, ATTACKER_MAC, attacker_emit, windows,
                            cfg.flood_rate_pps, seed=cfg.seed)
        actor_holder.append(actor)
        attack_log = actor.log

    _readiness_handshake(ready)
    try:
        scheduler.run_until(duration_ns)
    except RuntimeError as exc:
        raise RunAbort(f"scenario failed at t={scheduler.now_ns} ns: {exc}") from exc

    counters = {
        "injected": switch.injected,
        "delivered": switch.delivered,
        "dropped": dict(switch.dropped),
        "background_frames": background_frames,
        "attacker_frames": actor_holder[0].frames_emitted if actor_holder else 0,
        "slave": slave.counters.__dict__.copy(),
    }
    return RunResult(cfg, cfg.run_id(), switch.mirror, attack_log, slave.estimates,
                     slave.election_history, counters, slave=slave, master=master)


def estimates_to_csv(estimates: list[SyncEstimate]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["computed_at_ns", "seq_id", "offset_ns", "delay_ns",
                     "drift_ppb", "delay_negative"])
    for est in estimates:
        drift = "" if est.drift is None else repr(float(est.drift * NS_PER_S))
        writer.writerow([est.computed_at, est.sequence_id, est.offset_ns,
                         est.delay_ns, drift, int(est.delay_negative)])
    return buf.getvalue()


def write_run(result: RunResult, out_dir: str) -> dict[str, str]:
    """Persist one run: trace, origin sidecar, attack log, estimates, meta."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "trace": os.path.join(out_dir, "trace.jsonl"),
        "origins": os.path.join(out_dir, "origins.jsonl"),
        "attacks": os.path.join(out_dir, "attacks.jsonl"),
        "estimates": os.path.join(out_dir, "estimates.csv"),
        "meta": os.path.join(out_dir, "meta.json"),
    }
    write_trace(paths["trace"], (m.record for m in result.mirror))
    with open(paths["origins"], "w", encoding="utf-8") as fh:
        for m in result.mirror:
            fh.write(json.dumps({"origin_node": m.origin_node, "origin_mac": m.origin_mac},
                                separators=(",", ":")))
            fh.write("\n")
    result.attack_log.write(paths["attacks"])
    with open(paths["estimates"], "w", encoding="utf-8") as fh:
        fh.write(estimates_to_csv(result.estimates))
    meta = {
        "run_id": result.run_id,
        "config": {k: v for k, v in result.config.__dict__.items()},
        "counters": result.counters,
        "elections": [{"ts_ns": t, "master": m} for t, m in result.election_history],
    }
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return paths


def read_origins(path: str) -> list[dict[str, str]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
