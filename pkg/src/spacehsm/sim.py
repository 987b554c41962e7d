"""Deterministic discrete-event engine wiring the satellite, ground stations,
log server, monitor, vault and adversary together.

Events are ordered by (time, actor id, insertion sequence); all randomness
comes from streams derived from the scenario seed, so equal configs give
byte-identical event streams.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import math
import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable

from . import hsm as hsm_ops
from . import power
from .accumulator import MerkleLog, root
from .config import (
    ForgeRequest, InjectFaults, ScenarioConfig, SpoofBeacon, StealKey, SuppressLogSubmission,
)
from .errors import BrownoutError, ConflictError, FrozenError, MalformedMessage, RejectError
from .ground import (
    BeaconObservation, CertificateLog, EpochSkew, MismatchAlarm, MonitorOk, OfflineVault,
    Pending, build_request, consensus_bootstrap, log_submit, monitor_check, reset_procedure,
)
from .hsm import ChannelKey, PrgState, derive_key
from .link import (
    DUTY_WINDOW_S, Ax25Frame, Direction, LinkChannel, LinkConfig, MessageKind, Reassembler,
    deliver, fragment, next_pass_start, pass_end, pass_index, pass_visible, payload_airtime,
)
from . import signing
from .messages import (
    ATTEST_DOMAIN, Attestation, BeaconMessage, CertResponse, CsrMessage, ErrorResponse,
    SignedCertificate,
)
from .signing import NONCE_SIZE, TAG_SIZE, SchemeId, generate_keypair

log = logging.getLogger(__name__)

SAT_CALL = "SPCHSM"
ADV_CALL = "ADVRSY"
BROADCAST_CALL = "CQ"
AEAD_OVERHEAD = NONCE_SIZE + TAG_SIZE

EVENT_KINDS = (
    "frame_tx", "frame_rx", "frame_drop", "cert_signed", "cert_logged", "beacon", "alarm",
    "epoch_transition", "fault_detected", "brownout", "battery_telemetry",
)


@dataclass(frozen=True)
class SimEvent:
    time: float
    actor: str
    kind: str
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"time": round(self.time, 6), "actor": self.actor, "kind": self.kind,
                           "detail": self.detail}, sort_keys=True, separators=(",", ":"))


@dataclass
class Metrics:
    certs_signed: int = 0
    certs_logged: int = 0
    requests_completed_per_pass: list[int] = field(default_factory=list)
    alarms: int = 0
    time_to_detection_s: list[float] = field(default_factory=list)
    resets: int = 0
    max_dod_percent: float = 0.0
    epoch_transitions: int = 0
    faults_detected: int = 0
    suppressed: int = 0
    orphaned: int = 0
    pending_in_log: int = 0
    in_flight: int = 0
    requests_completed: int = 0
    requests_failed: int = 0
    online_at: float | None = None
    final_epoch: int = 0
    analytic_capacity: int = 0
    downlink_duty_max: float = 0.0
    invariant_violations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def analytic_capacity(link: LinkConfig, request_bytes: int) -> int:
    """Requests per pass if the uplink carried nothing else.

    Airtime counts every bit of every encoded frame, header and AX.25
    overhead included.
    """
    if request_bytes <= 0:
        raise ValueError("request_bytes must be positive")
    return math.floor(link.pass_duration_s / payload_airtime(link, request_bytes) + 1e-9)


def _h(*parts: bytes) -> bytes:
    return hashlib.sha256(b"|".join(parts)).digest()


def _fp(key: bytes) -> str:
    return hashlib.sha256(key).hexdigest()[:16]


@dataclass
class _Request:
    index: int  # workload index, -1 for forged
    csr: CsrMessage
    station: str
    attempts: int = 0
    message_id: int = 0
    sent_in_epoch: int = 0


class Engine:
    def __init__(self, config: ScenarioConfig) -> None:
        self.cfg = config
        self.link = config.link
        self._queue: list = []
        self._seq = 0
        self.now = 0.0
        self.events: list[SimEvent] = []
        self.metrics = Metrics()
        self.seed = config.seed.to_bytes(8, "big")

        self.uplink = LinkChannel(self.link, Direction.UP)
        self.downlink = LinkChannel(self.link, Direction.DOWN)

        scheme = SchemeId.RSA2048 if config.hsm.scheme == "rsa2048" else SchemeId.STANDIN
        self.scheme = scheme
        initial = PrgState(_h(b"prg-seed", self.seed))
        self.hsm, self.boot_beacon = hsm_ops.bootstrap(
            _h(b"hsm-entropy", self.seed), initial, scheme=scheme,
            fault_rate=config.hsm.fault_rate, retry_limit=config.hsm.retry_limit)
        self.hsm_halted = False
        self.sat_rx = Reassembler()
        self.down_mid = 0
        self.beacon_sent = False
        self.sign_times: dict[tuple[int, int], float] = {}
        self.cert_status: dict[tuple[int, int], str] = {}
        self.cert_request: dict[tuple[int, int], bytes] = {}
        self.max_epoch_seen = 0

        self.vault = OfflineVault(initial)
        key0, _ = derive_key(initial)
        self.ground_key: ChannelKey = key0
        self.stations = {s.id: _Station(self, s.id, s.pass_offset_s) for s in config.stations}
        self.station_order = [s.id for s in config.stations]
        self.online_key: bytes | None = None
        self.observations: list[BeaconObservation] = []
        self.conflict_reported = False

        self.logs: dict[int, CertificateLog] = {0: CertificateLog(0, self.hsm.public_key)}
        self.append_times: dict[int, list[float]] = {0: []}
        self.monitor_pending: list[tuple[BeaconMessage, float]] = []
        self.beacons_seen: set[tuple[int, int]] = set()
        self.alarmed_epochs: set[int] = set()
        self.reset_scheduled_for: set[int] = set()

        self.requests = config.requests()
        self.suppress = {a.request for a in config.adversary if isinstance(a, SuppressLogSubmission)}
        self.request_ids = [_h(b"request", self.seed, i.to_bytes(4, "big"))[:16]
                            for i in range(len(self.requests))]
        self.stolen_key: ChannelKey | None = None
        self.adv_rng = self.rng("adversary")
        self.adv_up_rng = self.rng("up", ADV_CALL)
        self.forged_ids: set[bytes] = set()
        self.adv_mid = 0
        self.completions: dict[tuple[str, int], int] = {}
        self.transitions: list[int] = [0]

        self.battery = power.BatteryState.full(config.power)

        g = config.ground
        if g.monitor_grace_s is not None:
            self.monitor_grace = g.monitor_grace_s
        elif self.link.loss_probability == 0:
            self.monitor_grace = 0.0
        else:
            self.monitor_grace = (g.max_retries + 1) * g.response_timeout_s

        sizes = [s for _, s, _ in self.requests] or [2560]
        self.metrics.analytic_capacity = analytic_capacity(self.link, min(sizes) + AEAD_OVERHEAD)

    # --- loop --------------------------------------------------------------------------

    def at(self, t: float, actor: str, fn: Callable, *args: Any) -> None:
        heapq.heappush(self._queue, (t, actor, self._seq, fn, args))
        self._seq += 1

    def emit(self, actor: str, kind: str, **detail: Any) -> None:
        self.events.append(SimEvent(self.now, actor, kind, detail))

    def rng(self, *labels: str) -> random.Random:
        return random.Random(int.from_bytes(_h(b"rng", self.seed, *(l.encode() for l in labels))[:8], "big"))

    def run(self) -> tuple[list[SimEvent], Metrics]:
        self._schedule_initial()
        end = self.cfg.duration_s
        while self._queue and self._queue[0][0] <= end:
            t, _, _, fn, args = heapq.heappop(self._queue)
            self.now = t
            fn(*args)
        self.now = end
        self._finish_power()
        self._finalize()
        return self.events, self.metrics

    def _schedule_initial(self) -> None:
        self.at(0.0, "hsm", self._hsm_boot)
        for i, (t, _, _) in enumerate(self.requests):
            self.at(t, "workload", self._submit_workload, i)
        for a in self.cfg.adversary:
            if isinstance(a, StealKey):
                self.at(a.at, "adversary", self._steal_key)
            elif isinstance(a, ForgeRequest):
                self.at(a.at, "adversary", self._forge_request, a.csr_size)
            elif isinstance(a, SpoofBeacon):
                self.at(a.at, "adversary", self._spoof_beacon, a.station or self.station_order[0])
            elif isinstance(a, InjectFaults):
                self.at(a.start, "adversary", self._set_fault_rate, a.rate, "start")
                self.at(a.end, "adversary", self._set_fault_rate, self.cfg.hsm.fault_rate, "end")
        if self.cfg.attestation is not None:
            self.at(self.cfg.attestation.at, "hsm", self._attest, self.cfg.attestation.peers)
        p = self.cfg.power
        if p.daylight_s > 0:
            self.at(p.daylight_s, "power", self._power_phase, 0, True)
        else:
            self.at(p.orbit_period_s, "power", self._power_phase, 0, False)

    # --- power ---------------------------------------------------------------------------

    def _power_phase(self, orbit: int, daylight: bool) -> None:
        p = self.cfg.power
        dt = p.daylight_s if daylight else p.eclipse_s
        self._power_step(dt, daylight)
        if daylight:
            if p.eclipse_s > 0:
                self.at(orbit * p.orbit_period_s + p.orbit_period_s, "power",
                        self._power_phase, orbit, False)
                return
        self._telemetry(orbit)
        if p.daylight_s > 0:
            self.at((orbit + 1) * p.orbit_period_s + p.daylight_s, "power",
                    self._power_phase, orbit + 1, True)
        else:
            self.at((orbit + 2) * p.orbit_period_s, "power", self._power_phase, orbit + 1, False)

    def _power_step(self, dt: float, daylight: bool) -> None:
        if self.hsm_halted or dt <= 0:
            return
        try:
            self.battery = power.step(self.battery, self.cfg.power, dt, daylight)
        except BrownoutError as exc:
            self.hsm_halted = True
            self.battery = power.BatteryState(0.0, 0.0)
            self.emit("hsm", "brownout", reason=str(exc))

    def _telemetry(self, orbit: int) -> None:
        dod = power.depth_of_discharge(self.battery, self.cfg.power)
        self.metrics.max_dod_percent = max(self.metrics.max_dod_percent, dod)
        self.emit("power", "battery_telemetry", orbit=orbit,
                  min_charge_wh=round(self.battery.min_charge_wh, 9), dod_percent=round(dod, 9))

    def _finish_power(self) -> None:
        # partial phase at the end of the run
        p = self.cfg.power
        t = self.cfg.duration_s
        orbit_start = math.floor(t / p.orbit_period_s) * p.orbit_period_s
        into = t - orbit_start
        if into <= 0:
            return
        if into < p.daylight_s:
            self._power_step(into, True)
        elif into > p.daylight_s:
            self._power_step(into - p.daylight_s, False)
        dod = power.depth_of_discharge(self.battery, self.cfg.power)
        self.metrics.max_dod_percent = max(self.metrics.max_dod_percent, dod)

    # --- downlink ------------------------------------------------------------------------

    def any_station_visible(self, t: float) -> bool:
        return any(pass_visible(self.link, t, s.offset) for s in self.stations.values())

    def next_visibility(self, t: float) -> float:
        return min(next_pass_start(self.link, t, s.offset) for s in self.stations.values())

    def _send_down(self, payload: bytes, kind: MessageKind, dest: str = BROADCAST_CALL) -> None:
        self.down_mid = (self.down_mid + 1) & 0xFFFF
        frames = fragment(payload, kind, self.down_mid, src=SAT_CALL, dest=dest)
        for f, s, e in self.downlink.schedule(frames, self.now):
            self.at(s, "hsm", self._frame_tx, "hsm", f, s, e, "down")

    def uplink_slot(self, t: float, need: float, offset: float = 0.0) -> float:
        """Earliest start >= t with the uplink free and the whole burst inside a pass."""
        t = max(t, self.uplink.busy_until)
        while not (pass_visible(self.link, t, offset) and t + need <= pass_end(self.link, t, offset)):
            if pass_visible(self.link, t, offset):
                t = pass_end(self.link, t, offset)
            t = next_pass_start(self.link, t, offset)
        return t

    def _frame_tx(self, actor: str, frame: Ax25Frame, start: float, end: float,
                  direction: str) -> None:
        self.emit(actor, "frame_tx", direction=direction, end=round(end, 6), frame=frame.hexdump())
        if direction == "down":
            for st in self.stations.values():
                arrival, reason = deliver(self.link, start, end, st.down_rng, st.offset)
                if arrival is None:
                    if reason == "lost":
                        self.at(end, st.actor, self._frame_drop, st.actor, reason)
                else:
                    self.at(end, st.actor, st.on_frame, frame)
        else:
            src = self.stations.get(frame.src)
            offset = src.offset if src else 0.0
            rng = src.up_rng if src else self.adv_up_rng
            arrival, reason = deliver(self.link, start, end, rng, offset)
            if arrival is None:
                self.at(end, "hsm", self._frame_drop, "hsm", reason)
            else:
                self.at(end, "hsm", self._hsm_frame, frame)

    def _frame_drop(self, actor: str, reason: str) -> None:
        self.emit(actor, "frame_drop", reason=reason)

    # --- satellite -----------------------------------------------------------------------

    def _hsm_boot(self) -> None:
        self.emit("hsm", "bootstrap", public_key=_fp(self.hsm.public_key), scheme=self.scheme.name)
        self._beacon_tick()

    def _beacon_tick(self) -> None:
        if self.hsm_halted:
            return
        if not self.any_station_visible(self.now):
            self.at(self.next_visibility(self.now), "hsm", self._beacon_tick)
            return
        if not self.beacon_sent:
            beacon = self.boot_beacon
            self.beacon_sent = True
        else:
            self.hsm, beacon = hsm_ops.make_beacon(self.hsm)
        self.emit("hsm", "beacon", sequence=beacon.sequence, epoch=beacon.epoch,
                  log_size=beacon.log_size, root=beacon.accumulator_root.hex())
        self._send_down(beacon.to_bytes(), MessageKind.BEACON)
        self.at(self.now + self.cfg.hsm.beacon_period_s, "hsm", self._beacon_tick)

    def _hsm_frame(self, frame: Ax25Frame) -> None:
        self.emit("hsm", "frame_rx", src=frame.src, frame=frame.hexdump())
        if self.hsm_halted:
            return
        try:
            done = self.sat_rx.add(frame)
        except (ValueError, MalformedMessage):
            return
        if done is None:
            return
        kind, payload = done
        if kind is not MessageKind.REQUEST:
            return
        before = self.hsm
        self.hsm, resp = hsm_ops.process_uplink(self.hsm, payload)
        after = self.hsm
        if after.epoch != before.epoch:
            self.metrics.epoch_transitions += 1
            self.transitions.append(after.epoch)
            self.emit("hsm", "epoch_transition", old_epoch=before.epoch, new_epoch=after.epoch)
        for _ in range(after.faults_detected - before.faults_detected):
            self.emit("hsm", "fault_detected")
        if after.total_signed > before.total_signed:
            cert_key = (after.epoch, after.log.size - 1)
            rid = CertResponse.from_bytes(resp).request_id
            self.sign_times[cert_key] = self.now
            self.cert_request[cert_key] = rid
            self.cert_status[cert_key] = "withheld" if rid in self.forged_ids else "in_flight"
            self.emit("hsm", "cert_signed", epoch=cert_key[0], leaf_index=cert_key[1],
                      request_id=rid.hex(), root=root(after.log).hex())
        if isinstance(resp, ErrorResponse):
            self.emit("hsm", "error_response", reason=resp.reason, detail=resp.detail)
        elif resp is None:
            self.emit("hsm", "request_dropped", reason="decrypt_failed", src=frame.src)
        elif self.cfg.ground.broadcast_certificates:
            # the full certificate goes out so any listener can publish it
            r = CertResponse.from_bytes(resp)
            leaf = self.hsm.log_for_epoch(r.signer_epoch).leaves[r.leaf_index]
            self._send_down(leaf, MessageKind.RESPONSE)
        else:
            self._send_down(resp, MessageKind.RESPONSE)

    def _set_fault_rate(self, rate: float, phase: str) -> None:
        self.hsm = replace(self.hsm, fault_rate=rate)
        self.emit("adversary", "inject_faults", rate=rate, phase=phase)

    def _attest(self, peers: int) -> None:
        if self.hsm_halted:
            return
        for k in range(peers):
            peer = generate_keypair(_h(b"peer", self.seed, k.to_bytes(2, "big")), self.scheme)
            ours = hsm_ops.attest_peer(self.hsm, peer.public_key)
            theirs = Attestation(self.hsm.public_key, peer.public_key,
                                 signing.sign(peer, ATTEST_DOMAIN + self.hsm.public_key))
            self.emit("hsm", "attestation", peer=_fp(peer.public_key))
            self._send_down(ours.to_bytes(), MessageKind.ATTESTATION)
            self._send_down(theirs.to_bytes(), MessageKind.ATTESTATION)

    # --- ground: consensus, log, monitor, reset ------------------------------------------------

    def observe_beacon(self, station: str, beacon: BeaconMessage) -> None:
        if self.online_key is None:
            self.observations.append(BeaconObservation(station, beacon, self.now))
            try:
                key = consensus_bootstrap(self.observations, self.cfg.consensus_threshold,
                                          self.cfg.consensus_window_s)
            except ConflictError as exc:
                if not self.conflict_reported:
                    self.conflict_reported = True
                    self.emit("ground", "consensus_conflict", reason=str(exc))
                return
            if key is None:
                return
            self.online_key = key
            self.metrics.online_at = self.now
            self.emit("ground", "online", public_key=_fp(key))
            for st in self.stations.values():
                st.kick()
        if not hsm_ops.verify_beacon(beacon, self.online_key):
            self.emit(station, "beacon_rejected", sequence=beacon.sequence)
            return
        self.monitor_beacon(beacon)

    def current_log(self) -> CertificateLog:
        return self.logs[max(self.logs)]

    def submit(self, station: str, cert: SignedCertificate) -> None:
        ck = (cert.signer_epoch, cert.leaf_index)
        log_ = self.logs.get(cert.signer_epoch)
        if log_ is None:
            self.emit("log", "cert_rejected", reason="unknown epoch", epoch=cert.signer_epoch)
            return
        try:
            new = log_submit(log_, cert, self.online_key)
        except FrozenError:
            if self.cert_status.get(ck) != "logged":
                self.cert_status[ck] = "orphaned"
            self.emit("log", "cert_orphaned", epoch=ck[0], leaf_index=ck[1], station=station)
            return
        except RejectError as exc:
            self.emit("log", "cert_rejected", reason=str(exc), epoch=ck[0], leaf_index=ck[1])
            return
        if new is log_:
            return
        self.logs[cert.signer_epoch] = new
        times = self.append_times[cert.signer_epoch]
        for i in range(log_.size, new.size):
            times.append(self.now)
            self.cert_status[(cert.signer_epoch, i)] = "logged"
            self.emit("log", "cert_logged", epoch=cert.signer_epoch, leaf_index=i, size=i + 1)
        if cert.leaf_index in new.pending:
            self.cert_status[ck] = "pending"
        if new.size > log_.size:
            self._recheck_pending()

    def monitor_beacon(self, beacon: BeaconMessage) -> None:
        ident = (beacon.epoch, beacon.sequence)
        if ident in self.beacons_seen:
            return
        self.beacons_seen.add(ident)
        self._judge(beacon, self.now, final=False)

    def _judge(self, beacon: BeaconMessage, received_at: float, final: bool) -> bool:
        """Returns True when the beacon no longer needs watching."""
        log_ = self.current_log()
        if beacon.epoch in self.alarmed_epochs:
            return True
        uncovered = None
        times = self.append_times.get(log_.epoch, [])
        if beacon.log_size < len(times):
            uncovered = times[beacon.log_size]
        res = monitor_check(beacon, log_, final=final, received_at=self.now,
                            uncovered_since=uncovered, grace_s=self.monitor_grace)
        if isinstance(res, MonitorOk):
            self.emit("monitor", "beacon_ok", sequence=beacon.sequence, epoch=beacon.epoch)
            return True
        if isinstance(res, Pending):
            if not final and all(b is not beacon for b, _ in self.monitor_pending):
                self.monitor_pending.append((beacon, received_at))
                self.at(received_at + self.monitor_grace, "monitor",
                        self._finalize_beacon, beacon, received_at)
            return False
        if isinstance(res, EpochSkew):
            self.emit("monitor", "epoch_skew", beacon_epoch=res.beacon_epoch, log_epoch=res.log_epoch)
            if res.beacon_epoch > res.log_epoch:
                self._schedule_reset(res.log_epoch)
            return True
        self._raise_alarm(res)
        return True

    def _raise_alarm(self, alarm: MismatchAlarm) -> None:
        self.alarmed_epochs.add(alarm.epoch)
        self.monitor_pending = [(b, t) for b, t in self.monitor_pending if b.epoch != alarm.epoch]
        self.metrics.alarms += 1
        unlogged = [t for (e, i), t in self.sign_times.items()
                    if e == alarm.epoch and self.cert_status.get((e, i)) != "logged"]
        ttd = round(self.now - min(unlogged), 6) if unlogged else None
        if ttd is not None:
            self.metrics.time_to_detection_s.append(ttd)
        self.emit("monitor", "alarm", epoch=alarm.epoch, reason=alarm.reason,
                  beacon_sequence=alarm.beacon_sequence, beacon_log_size=alarm.beacon_log_size,
                  local_log_size=alarm.local_log_size, beacon_root=alarm.beacon_root.hex(),
                  log_root=alarm.log_root.hex(), time_to_detection_s=ttd)
        self._schedule_reset(alarm.epoch)

    def _recheck_pending(self) -> None:
        keep = []
        for beacon, t in self.monitor_pending:
            if beacon.epoch in self.alarmed_epochs:
                continue
            if not self._judge_existing(beacon, t):
                keep.append((beacon, t))
        self.monitor_pending = keep

    def _judge_existing(self, beacon: BeaconMessage, t: float) -> bool:
        log_ = self.current_log()
        if beacon.epoch != log_.epoch or beacon.log_size > log_.size:
            return beacon.epoch != log_.epoch
        return self._judge(beacon, t, final=False)

    def _finalize_beacon(self, beacon: BeaconMessage, received_at: float) -> None:
        if all(b is not beacon for b, _ in self.monitor_pending):
            return
        self.monitor_pending = [(b, t) for b, t in self.monitor_pending if b is not beacon]
        self._judge(beacon, received_at, final=True)

    def _schedule_reset(self, epoch: int) -> None:
        delay = self.cfg.ground.reset_delay_s
        if delay is None or epoch in self.reset_scheduled_for:
            return
        self.reset_scheduled_for.add(epoch)
        self.at(self.now + delay, "vault", self._reset, epoch)

    def _reset(self, epoch: int) -> None:
        if max(self.logs) != epoch:
            return
        key, self.vault, self.logs = reset_procedure(self.vault, self.logs)
        self.append_times[key.epoch] = []
        self.ground_key = key
        self.metrics.resets += 1
        self.monitor_pending = []
        self.emit("vault", "reset", frozen_epoch=epoch, new_epoch=key.epoch)
        for st in self.stations.values():
            st.kick()

    # --- workload and adversary ----------------------------------------------------------------

    def _submit_workload(self, index: int) -> None:
        t, size, station = self.requests[index]
        if station is None:
            station = self.station_order[index % len(self.station_order)]
        csr = CsrMessage.of_size(size, self.request_ids[index], round(t, 6),
                                 subject_prefix=b"CN=req-%d.example" % index)
        self.emit("workload", "request_queued", index=index, station=station,
                  request_id=csr.request_id.hex())
        self.stations[station].enqueue(_Request(index, csr, station))

    def _steal_key(self) -> None:
        self.stolen_key = self.ground_key
        self.emit("adversary", "key_stolen", epoch=self.stolen_key.epoch)

    def _forge_request(self, size: int) -> None:
        key = self.stolen_key or self.ground_key
        rid = bytes(self.adv_rng.getrandbits(8) for _ in range(16))
        self.forged_ids.add(rid)
        csr = CsrMessage.of_size(size, rid, round(self.now, 6), subject_prefix=b"CN=bank.example")
        payload = build_request(csr, key, _h(b"forge", self.seed, rid))
        self.adv_mid = (self.adv_mid + 1) & 0xFFFF
        frames = fragment(payload, MessageKind.REQUEST, self.adv_mid, src=ADV_CALL, dest=SAT_CALL)
        need = sum(f.bits for f in frames) / self.link.uplink_bps
        t = self.uplink_slot(self.now, need)
        self.emit("adversary", "forged_request", request_id=rid.hex(), epoch=key.epoch,
                  start=round(t, 6))
        for f, s, e in self.uplink.schedule(frames, t):
            self.at(s, "adversary", self._frame_tx, "adversary", f, s, e, "up")

    def _spoof_beacon(self, target: str) -> None:
        fake = generate_keypair(_h(b"spoof", self.seed, str(self.now).encode()), SchemeId.STANDIN)
        b = BeaconMessage(fake.public_key, root(MerkleLog()), 0, 0, self.hsm.beacon_sequence + 1)
        b = hsm_ops.sign_beacon(fake, b)
        frames = fragment(b.to_bytes(), MessageKind.BEACON, 0xFFFF, src=ADV_CALL, dest=BROADCAST_CALL)
        air = sum(f.bits for f in frames) / self.link.downlink_bps
        self.emit("adversary", "beacon_spoofed", public_key=_fp(fake.public_key), station=target)
        # a terrestrial transmitter: ignores pass windows but is heard by one station only
        st = self.stations[target]
        for f in frames:
            self.at(self.now + air, st.actor, st.on_frame, f)

    # --- end of run ------------------------------------------------------------------------

    def _finalize(self) -> None:
        m = self.metrics
        m.certs_signed = self.hsm.total_signed
        m.certs_logged = sum(l.size for l in self.logs.values())
        m.final_epoch = self.hsm.epoch
        m.faults_detected = self.hsm.faults_detected
        statuses = list(self.cert_status.values())
        m.suppressed = statuses.count("suppressed") + statuses.count("withheld")
        m.orphaned = statuses.count("orphaned")
        m.pending_in_log = statuses.count("pending")
        m.in_flight = statuses.count("in_flight")
        m.requests_completed = sum(self.completions.values())
        m.requests_completed_per_pass = [
            n for (_, _), n in sorted(self.completions.items(), key=lambda kv: (kv[0][1], kv[0][0]))]
        m.downlink_duty_max = round(self._max_duty(), 9)
        self._check_invariants()

    def _max_duty(self) -> float:
        worst = 0.0
        for _, e in self.downlink.intervals:
            worst = max(worst, self.downlink.airtime_between(e - DUTY_WINDOW_S, e) / DUTY_WINDOW_S)
        return worst

    def _check_invariants(self) -> None:
        m = self.metrics
        v = m.invariant_violations
        if m.certs_logged > m.certs_signed:
            v.append("certs_logged exceeds certs_signed")
        logged = sum(1 for s in self.cert_status.values() if s == "logged")
        if logged != m.certs_logged:
            v.append(f"logged bookkeeping {logged} != log sizes {m.certs_logged}")
        pending = sum(len(l.pending) for l in self.logs.values())
        if pending != m.pending_in_log:
            v.append(f"pending bookkeeping {m.pending_in_log} != log buffers {pending}")
        total = m.certs_logged + m.pending_in_log + m.suppressed + m.orphaned + m.in_flight
        if total != m.certs_signed:
            v.append(f"conservation: {total} accounted vs {m.certs_signed} signed")
        for n in m.requests_completed_per_pass:
            if n > m.analytic_capacity:
                v.append(f"pass completed {n} requests > capacity {m.analytic_capacity}")
        budget = self.link.tx_duty_cycle
        eps = max((e - s for s, e in self.downlink.intervals), default=0.0) / DUTY_WINDOW_S
        if m.downlink_duty_max > budget + 1e-9:
            v.append(f"downlink duty {m.downlink_duty_max:.4f} exceeds {budget}")
        pass_time = self._visible_time()
        if pass_time > 0:
            ratio = sum(e - s for s, e in self.downlink.intervals) / pass_time
            if ratio > budget + eps + 1e-9:
                v.append(f"downlink airtime/pass time {ratio:.4f} exceeds {budget}")
        if self.transitions != sorted(self.transitions):
            v.append("HSM epoch decreased")
        for e, l in self.logs.items():
            for i in range(l.size):
                if l.certificate(i).signer_epoch != e:
                    v.append(f"epoch {e} log holds a certificate from another epoch")
                    break
        for e in range(len(self.hsm.archived_logs) + 1):
            hl = self.hsm.log_for_epoch(e)
            if root(MerkleLog.from_leaves(hl.leaves)) != root(hl):
                v.append(f"HSM accumulator for epoch {e} differs from recomputation")
        times = [ev.time for ev in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            v.append("events out of time order")

    def _visible_time(self) -> float:
        """Length of the union of all stations' pass windows within the run."""
        period, dur, end = self.link.orbit_period_s, self.link.pass_duration_s, self.cfg.duration_s
        spans = []
        for st in self.stations.values():
            first = math.floor(-st.offset / period) - 1
            for k in range(first, math.ceil(end / period) + 1):
                s = max(0.0, st.offset + k * period)
                e = min(end, st.offset + k * period + dur)
                if e > s:
                    spans.append((s, e))
        spans.sort()
        total, cur_s, cur_e = 0.0, None, None
        for s, e in spans:
            if cur_e is None or s > cur_e:
                if cur_e is not None:
                    total += cur_e - cur_s
                cur_s, cur_e = s, e
            else:
                cur_e = max(cur_e, e)
        if cur_e is not None:
            total += cur_e - cur_s
        return total


class _Station:
    def __init__(self, engine: Engine, sid: str, offset: float) -> None:
        self.engine = engine
        self.id = sid
        self.actor = sid
        self.offset = offset
        self.queue: deque[_Request] = deque()
        self.awaiting: dict[bytes, _Request] = {}
        self.rx = Reassembler()
        self.mid = 0
        self.wake_token = 0
        self.down_rng = engine.rng("down", sid)
        self.up_rng = engine.rng("up", sid)

    @property
    def cfg(self) -> ScenarioConfig:
        return self.engine.cfg

    def enqueue(self, req: _Request) -> None:
        self.queue.append(req)
        self.kick()

    def kick(self) -> None:
        self.wake_token += 1
        self.engine.at(self.engine.now, self.actor, self._try_send, self.wake_token)

    def _try_send(self, token: int) -> None:
        if token != self.wake_token:
            return
        eng = self.engine
        if eng.online_key is None or not self.queue:
            return
        req = self.queue[0]
        need = payload_airtime(eng.link, len(req.csr.to_bytes()) + AEAD_OVERHEAD)
        if need > eng.link.pass_duration_s:
            self.queue.popleft()
            eng.metrics.requests_failed += 1
            eng.emit(self.actor, "request_failed", index=req.index, reason="longer than a pass")
            self.kick()
            return
        t = eng.uplink_slot(eng.now, need, self.offset)
        if t > eng.now:
            self.wake_token += 1
            eng.at(t, self.actor, self._try_send, self.wake_token)
            return
        self.queue.popleft()
        key = eng.ground_key
        payload = build_request(req.csr, key, _h(b"nonce", eng.seed, req.csr.request_id,
                                                 req.attempts.to_bytes(2, "big")))
        self.mid = (self.mid + 1) & 0xFFFF
        frames = fragment(payload, MessageKind.REQUEST, self.mid, src=self.id, dest=SAT_CALL)
        req.attempts += 1
        req.message_id = self.mid
        req.sent_in_epoch = key.epoch
        self.awaiting[req.csr.request_id] = req
        eng.emit(self.actor, "request_sent", index=req.index, attempt=req.attempts, epoch=key.epoch,
                 request_id=req.csr.request_id.hex(), frames=len(frames))
        for f, s, e in eng.uplink.schedule(frames, t):
            eng.at(s, self.actor, eng._frame_tx, self.actor, f, s, e, "up")
        eng.at(t + need + self.cfg.ground.response_timeout_s, self.actor, self._timeout,
               req.csr.request_id, req.attempts)
        self.kick()

    def _timeout(self, rid: bytes, attempt: int) -> None:
        req = self.awaiting.get(rid)
        if req is None or req.attempts != attempt:
            return
        eng = self.engine
        del self.awaiting[rid]
        if req.attempts > self.cfg.ground.max_retries:
            eng.metrics.requests_failed += 1
            eng.emit(self.actor, "request_failed", index=req.index, reason="no response")
            return
        eng.emit(self.actor, "request_retry", index=req.index, attempt=req.attempts)
        self.queue.appendleft(req)
        self.kick()

    def on_frame(self, frame: Ax25Frame) -> None:
        eng = self.engine
        eng.emit(self.actor, "frame_rx", src=frame.src, frame=frame.hexdump())
        try:
            done = self.rx.add(frame)
        except (ValueError, MalformedMessage):
            return
        if done is None:
            return
        kind, payload = done
        try:
            if kind is MessageKind.BEACON:
                eng.observe_beacon(self.id, BeaconMessage.from_bytes(payload))
            elif kind is MessageKind.RESPONSE and eng.cfg.ground.broadcast_certificates:
                self._on_broadcast_cert(SignedCertificate.from_bytes(payload))
            elif kind is MessageKind.RESPONSE:
                self._on_response(CertResponse.from_bytes(payload))
            elif kind is MessageKind.ATTESTATION:
                att = Attestation.from_bytes(payload)
                eng.emit(self.actor, "attestation_rx", attester=_fp(att.attester_key),
                         attested=_fp(att.attested_key), valid=hsm_ops.verify_attestation(att))
        except (MalformedMessage, ValueError) as exc:
            eng.emit(self.actor, "malformed_message", kind=kind.name, reason=str(exc))

    def _complete(self, req: _Request, cert: SignedCertificate) -> None:
        eng = self.engine
        pidx = pass_index(eng.link, eng.now, self.offset)
        eng.completions[(self.id, pidx)] = eng.completions.get((self.id, pidx), 0) + 1
        eng.emit(self.actor, "request_completed", index=req.index, epoch=cert.signer_epoch,
                 leaf_index=cert.leaf_index, attempts=req.attempts)

    def _on_response(self, resp: CertResponse) -> None:
        eng = self.engine
        req = self.awaiting.pop(resp.request_id, None)
        if req is None:
            return
        cert = resp.certificate(req.csr)
        self._complete(req, cert)
        ck = (cert.signer_epoch, cert.leaf_index)
        if req.index in eng.suppress:
            eng.cert_status[ck] = "suppressed"
            eng.emit("adversary", "submission_suppressed", index=req.index, epoch=ck[0],
                     leaf_index=ck[1])
            return
        eng.at(eng.now + self.cfg.ground.log_submit_delay_s, "log", eng.submit, self.id, cert)

    def _on_broadcast_cert(self, cert: SignedCertificate) -> None:
        # broadcast mitigation: every listener publishes what it hears
        eng = self.engine
        req = self.awaiting.pop(cert.csr.request_id, None)
        if req is not None:
            self._complete(req, cert)
        eng.at(eng.now + self.cfg.ground.log_submit_delay_s, "log", eng.submit, self.id, cert)


def run_scenario(config: ScenarioConfig) -> tuple[list[SimEvent], Metrics]:
    return Engine(config).run()


def serialize_events(events: list[SimEvent]) -> str:
    return "".join(e.to_json() + "\n" for e in events)
