import hashlib
import itertools
from dataclasses import replace

import pytest

from spacehsm import signing
from spacehsm.accumulator import EMPTY_ROOT, MerkleLog, prefix_root, root
from spacehsm.errors import ConflictError, FrozenError, MalformedMessage, RejectError
from spacehsm.ground import (
    BeaconObservation, CertificateLog, EpochSkew, MismatchAlarm, MonitorOk, OfflineVault, Pending,
    build_request, consensus_bootstrap, export_logs, inclusion_proof_for, load_log_export,
    log_submit, monitor_check, reset_procedure, verify_certificate,
)
from spacehsm.hsm import key_at, make_beacon, sign_beacon, sign_certificate, try_decrypt
from spacehsm.messages import BeaconMessage, CsrMessage
from spacehsm.signing import SchemeId


def csr(i):
    return CsrMessage.of_size(200, hashlib.sha256(b"g%d" % i).digest()[:16], float(i))


def signed(hsm, n):
    certs = []
    for i in range(n):
        hsm, c = sign_certificate(hsm, csr(i))
        certs.append(c)
    return hsm, certs


def fresh_log(hsm, epoch=0):
    return CertificateLog(epoch, hsm.public_key)


# --- consensus ----------------------------------------------------------------------

HONEST = signing.generate_keypair(b"\x10" * 32, SchemeId.STANDIN)
ROGUE = signing.generate_keypair(b"\x20" * 32, SchemeId.STANDIN)


def beacon_from(kp, claimed_key=None):
    b = BeaconMessage(claimed_key or kp.public_key, EMPTY_ROOT, 0, 0, 0)
    return replace(b, beacon_signature=signing.sign(kp, b"SPACEHSM-BEACON\x00" + b.signed_body()))


VIEWS = {
    "honest": beacon_from(HONEST),
    "rogue": beacon_from(ROGUE),
    "spoofed": beacon_from(ROGUE, claimed_key=HONEST.public_key),  # carries honest key, bad sig
}


def test_consensus_exhaustive_safety():
    # Every assignment of {honest, rogue, spoofed, silent} to up to 5 stations
    # and every threshold: the answer is exactly the unique key that enough
    # stations saw with a valid signature.
    for n in range(1, 6):
        for views in itertools.product(["honest", "rogue", "spoofed", None], repeat=n):
            obs = [BeaconObservation(f"S{i}", VIEWS[v], float(i)) for i, v in enumerate(views) if v]
            counts = {HONEST.public_key: views.count("honest"), ROGUE.public_key: views.count("rogue")}
            for t in range(1, n + 1):
                winners = [k for k, c in counts.items() if c >= t]
                if len(winners) > 1:
                    with pytest.raises(ConflictError):
                        consensus_bootstrap(obs, t, window=600)
                else:
                    assert consensus_bootstrap(obs, t, window=600) == (winners[0] if winners else None)


def test_consensus_counts_distinct_stations_only():
    obs = [BeaconObservation("S1", VIEWS["honest"], float(i)) for i in range(5)]
    assert consensus_bootstrap(obs, 2, 600) is None
    assert consensus_bootstrap(obs, 1, 600) == HONEST.public_key


def test_consensus_window():
    obs = [BeaconObservation("S1", VIEWS["honest"], 0.0), BeaconObservation("S2", VIEWS["honest"], 700.0)]
    assert consensus_bootstrap(obs, 2, 600) is None
    assert consensus_bootstrap(obs, 2, 800) == HONEST.public_key
    with pytest.raises(ValueError):
        consensus_bootstrap(obs, 0, 600)


# --- log -----------------------------------------------------------------------------

def test_log_submit_in_order(hsm):
    hsm, certs = signed(hsm, 4)
    log = fresh_log(hsm)
    for c in certs:
        log = log_submit(log, c)
    assert log.size == 4 and log.root == prefix_root(hsm.log, 4)
    assert log.certificate(2) == certs[2]
    assert log_submit(log, certs[1]) is log  # idempotent


def test_log_buffers_out_of_order(hsm):
    hsm, certs = signed(hsm, 4)
    log = log_submit(fresh_log(hsm), certs[0])
    log = log_submit(log, certs[2])
    log = log_submit(log, certs[3])
    assert log.size == 1 and sorted(log.pending) == [2, 3]
    log = log_submit(log, certs[1])
    assert log.size == 4 and not log.pending
    assert log.root == prefix_root(hsm.log, 4)


def test_log_rejections(hsm):
    hsm, certs = signed(hsm, 2)
    log = log_submit(fresh_log(hsm), certs[0])
    with pytest.raises(RejectError):
        log_submit(log, replace(certs[1], signature=bytes(256)))
    with pytest.raises(RejectError):
        log_submit(log, replace(certs[1], signer_epoch=1))
    with pytest.raises(RejectError):
        log_submit(log, replace(certs[1], leaf_index=0))
    with pytest.raises(FrozenError):
        log_submit(replace(log, frozen=True), certs[1])


# --- monitor ---------------------------------------------------------------------------

def test_monitor_ok_and_lagging_beacon(hsm):
    hsm, certs = signed(hsm, 3)
    _, beacon = make_beacon(hsm)
    log = fresh_log(hsm)
    for c in certs:
        log = log_submit(log, c)
    assert isinstance(monitor_check(beacon, log), MonitorOk)
    # a beacon from before the third signature still matches the prefix
    older = sign_beacon(hsm.keypair, replace(beacon, log_size=2, accumulator_root=prefix_root(hsm.log, 2)))
    assert isinstance(monitor_check(older, log, received_at=10, uncovered_since=5, grace_s=60), MonitorOk)
    stale = monitor_check(older, log, received_at=100, uncovered_since=5, grace_s=60)
    assert isinstance(stale, MismatchAlarm) and stale.reason == "stale_beacon"


def test_monitor_detects_missing_certificate(hsm):
    hsm, certs = signed(hsm, 3)
    _, beacon = make_beacon(hsm)
    log = log_submit(log_submit(fresh_log(hsm), certs[0]), certs[1])
    assert monitor_check(beacon, log, final=False) == Pending(3, 2)
    alarm = monitor_check(beacon, log, received_at=42.0)
    assert isinstance(alarm, MismatchAlarm)
    assert (alarm.reason, alarm.beacon_log_size, alarm.local_log_size, alarm.raised_at) == ("log_behind", 3, 2, 42.0)


def test_monitor_detects_root_mismatch(hsm):
    hsm, certs = signed(hsm, 2)
    _, beacon = make_beacon(hsm)
    log = log_submit(log_submit(fresh_log(hsm), certs[0]), certs[1])
    rewritten = MerkleLog.from_leaves([b"some other history"])
    forged = sign_beacon(hsm.keypair, replace(beacon, accumulator_root=root(rewritten), log_size=1))
    alarm = monitor_check(forged, log)
    assert isinstance(alarm, MismatchAlarm) and alarm.reason == "root_mismatch"


def test_monitor_epoch_skew(hsm):
    _, beacon = make_beacon(hsm)
    assert monitor_check(replace(beacon, epoch=1), fresh_log(hsm)) == EpochSkew(1, 0)


# --- reset -------------------------------------------------------------------------------

def test_reset_procedure_moves_ground_and_hsm_together(hsm, initial_ratchet):
    hsm, certs = signed(hsm, 3)
    logs = {0: fresh_log(hsm)}
    for c in certs:
        logs[0] = log_submit(logs[0], c)
    vault = OfflineVault(initial_ratchet)
    key, vault2, logs2 = reset_procedure(vault, logs)
    assert key == key_at(initial_ratchet, 1) and vault2.epoch == 1
    assert logs2[0].frozen and logs2[0].size == 3 and logs2[1].size == 0
    assert not logs[0].frozen  # input untouched
    state, _, advanced = try_decrypt(hsm, build_request(csr(9), key, b"n"))
    assert advanced and state.epoch == 1
    # old certificates still verify with proofs against the frozen log
    for c in certs:
        proof = inclusion_proof_for(c, logs2)
        assert verify_certificate(c, hsm.public_key, logs2, proof)
    with pytest.raises(ValueError):
        reset_procedure(vault, logs2)


def test_vault_hides_snapshot(initial_ratchet):
    vault = OfflineVault(initial_ratchet)
    assert "snapshot" not in repr(vault) and vault.epoch == 0
    with pytest.raises(AttributeError):
        vault.extra = 1


# --- verification and export ------------------------------------------------------------------

def test_verify_certificate(hsm):
    hsm, certs = signed(hsm, 5)
    logs = {0: fresh_log(hsm)}
    for c in certs[:4]:
        logs[0] = log_submit(logs[0], c)
    assert verify_certificate(certs[4], hsm.public_key)  # signature only
    assert inclusion_proof_for(certs[4], logs) is None
    proof = inclusion_proof_for(certs[1], logs)
    assert verify_certificate(certs[1], hsm.public_key, logs, proof)
    assert not verify_certificate(certs[2], hsm.public_key, logs, proof)
    forged = replace(certs[1], csr=csr(99))
    assert not verify_certificate(forged, hsm.public_key, logs, proof)
    assert not verify_certificate(certs[1], hsm.public_key, logs, replace(proof, tree_size=99))


def test_export_round_trip(hsm):
    hsm, certs = signed(hsm, 3)
    logs = {0: fresh_log(hsm)}
    for c in certs:
        logs[0] = log_submit(logs[0], c)
    logs[0] = replace(logs[0], frozen=True)
    logs[1] = CertificateLog(1, hsm.public_key)
    key, back = load_log_export(export_logs(logs))
    assert key == hsm.public_key
    assert back[0].root == logs[0].root and back[0].frozen and back[1].size == 0


def test_export_tampering_detected(hsm):
    hsm, certs = signed(hsm, 2)
    logs = {0: log_submit(log_submit(fresh_log(hsm), certs[0]), certs[1])}
    lines = export_logs(logs).splitlines()
    with pytest.raises(MalformedMessage):
        load_log_export("\n".join(lines[:-1]))
    with pytest.raises(MalformedMessage):
        load_log_export("\n".join(lines[1:]))
