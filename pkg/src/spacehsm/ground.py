"""Terrestrial actors: request building, bootstrap consensus, the public
certificate log, monitors, the offline vault and certificate verification.
"""

from __future__ import annotations

import base64
import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping

from . import signing
from .accumulator import (
    Digest, InclusionProof, MerkleLog, append, prefix_root, prove_inclusion, root,
    verify_inclusion,
)
from .errors import ConflictError, FrozenError, MalformedMessage, RejectError
from .hsm import ChannelKey, PrgState, derive_key, verify_beacon
from .messages import BeaconMessage, CsrMessage, SignedCertificate


def build_request(csr: CsrMessage, key: ChannelKey, rng_seed: bytes) -> bytes:
    nonce = hashlib.sha256(b"nonce|" + rng_seed).digest()[:signing.NONCE_SIZE]
    return signing.seal(key.key, csr.to_bytes(), nonce)


# --- bootstrap consensus ----------------------------------------------------------

@dataclass(frozen=True)
class BeaconObservation:
    station_id: str
    beacon: BeaconMessage
    received_at: float


def _stations_in_window(obs: list[BeaconObservation], window: float) -> int:
    obs = sorted(obs, key=lambda o: o.received_at)
    best = 0
    lo = 0
    for hi in range(len(obs)):
        while obs[hi].received_at - obs[lo].received_at > window:
            lo += 1
        best = max(best, len({o.station_id for o in obs[lo:hi + 1]}))
    return best


def consensus_bootstrap(observations: Iterable[BeaconObservation], threshold: int,
                        window: float) -> bytes | None:
    """Public key seen by at least ``threshold`` distinct stations within
    ``window`` seconds, or None while no key qualifies.

    Only beacons that verify under the key they carry are counted.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    by_key: dict[bytes, list[BeaconObservation]] = defaultdict(list)
    for o in observations:
        if verify_beacon(o.beacon):
            by_key[o.beacon.public_key].append(o)
    winners = sorted(k for k, obs in by_key.items() if _stations_in_window(obs, window) >= threshold)
    if len(winners) > 1:
        raise ConflictError(f"{len(winners)} distinct public keys reached threshold {threshold}")
    return winners[0] if winners else None


# --- certificate log ---------------------------------------------------------------

@dataclass(frozen=True)
class CertificateLog:
    """Public append-only log for one epoch.

    Certificates are placed at their own ``leaf_index``; ones that arrive
    ahead of a gap wait in ``pending`` until the gap fills.
    """

    epoch: int
    public_key: bytes
    entries: MerkleLog = field(default_factory=MerkleLog)
    frozen: bool = False
    pending: Mapping[int, bytes] = field(default_factory=lambda: MappingProxyType({}))

    @property
    def size(self) -> int:
        return self.entries.size

    @property
    def root(self) -> Digest:
        return root(self.entries)

    def certificate(self, index: int) -> SignedCertificate:
        return SignedCertificate.from_bytes(self.entries.leaves[index])


def log_submit(log: CertificateLog, cert: SignedCertificate,
               hsm_key: bytes | None = None) -> CertificateLog:
    if log.frozen:
        raise FrozenError(f"epoch {log.epoch} log is frozen")
    key = log.public_key if hsm_key is None else hsm_key
    if not signing.verify(key, cert.csr.to_bytes(), cert.signature):
        raise RejectError("signature does not verify under the HSM key")
    if cert.signer_epoch != log.epoch:
        raise RejectError(f"certificate from epoch {cert.signer_epoch} submitted to epoch {log.epoch} log")
    data = cert.to_bytes()
    idx = cert.leaf_index
    if idx < log.size:
        if log.entries.leaves[idx] == data:
            return log
        raise RejectError(f"leaf {idx} already holds a different certificate")
    if idx in log.pending:
        if log.pending[idx] == data:
            return log
        raise RejectError(f"leaf {idx} already pending with a different certificate")
    pending = dict(log.pending)
    pending[idx] = data
    entries = log.entries
    while entries.size in pending:
        entries = append(entries, pending.pop(entries.size))
    return replace(log, entries=entries, pending=MappingProxyType(pending))


# --- monitor -----------------------------------------------------------------------

@dataclass(frozen=True)
class MonitorOk:
    pass


@dataclass(frozen=True)
class Pending:
    """Beacon reports more certificates than the log holds; not yet judged."""

    beacon_log_size: int
    local_log_size: int


@dataclass(frozen=True)
class EpochSkew:
    beacon_epoch: int
    log_epoch: int


@dataclass(frozen=True)
class MismatchAlarm:
    beacon_root: Digest
    log_root: Digest
    beacon_log_size: int
    local_log_size: int
    raised_at: float
    epoch: int = 0
    beacon_sequence: int = 0
    reason: str = "mismatch"


def monitor_check(beacon: BeaconMessage, log: CertificateLog, *, final: bool = True,
                  received_at: float = 0.0, uncovered_since: float | None = None,
                  grace_s: float = 60.0) -> MonitorOk | Pending | EpochSkew | MismatchAlarm:
    """Compare a broadcast accumulator with the log.

    A beacon that lags the log is fine if it matches the log's prefix of the
    same size, unless the first entry it fails to cover has been in the log
    for longer than ``grace_s`` (``uncovered_since``). A beacon ahead of the
    log is Pending when ``final`` is False and an alarm otherwise.
    """
    if beacon.epoch != log.epoch:
        return EpochSkew(beacon.epoch, log.epoch)

    def alarm(reason: str) -> MismatchAlarm:
        return MismatchAlarm(beacon.accumulator_root, log.root, beacon.log_size, log.size,
                             received_at, log.epoch, beacon.sequence, reason)

    if beacon.log_size > log.size:
        return alarm("log_behind") if final else Pending(beacon.log_size, log.size)
    if prefix_root(log.entries, beacon.log_size) != beacon.accumulator_root:
        return alarm("root_mismatch")
    if (beacon.log_size < log.size and uncovered_since is not None
            and received_at - uncovered_since > grace_s):
        return alarm("stale_beacon")
    return MonitorOk()


# --- offline vault and reset -------------------------------------------------------

class OfflineVault:
    """Offline copy of the channel-key PRG state.

    Only :func:`reset_procedure` reads the snapshot.
    """

    __slots__ = ("_snapshot",)

    def __init__(self, ratchet_snapshot: PrgState) -> None:
        self._snapshot = ratchet_snapshot

    @property
    def epoch(self) -> int:
        return self._snapshot.counter

    def __repr__(self) -> str:
        return f"OfflineVault(epoch={self.epoch})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, OfflineVault) and other._snapshot == self._snapshot

    def __hash__(self) -> int:
        return hash(self._snapshot)


def reset_procedure(vault: OfflineVault, logs: Mapping[int, CertificateLog]
                    ) -> tuple[ChannelKey, OfflineVault, dict[int, CertificateLog]]:
    """Move the ground segment to the next channel key.

    The current log is frozen (still readable) and an empty log is opened
    for the new epoch.
    """
    current = max(logs)
    if vault.epoch != current:
        raise ValueError(f"vault at epoch {vault.epoch} but active log is epoch {current}")
    _, nxt = derive_key(vault._snapshot)
    key, _ = derive_key(nxt)
    out = dict(logs)
    out[current] = replace(logs[current], frozen=True)
    out[key.epoch] = CertificateLog(epoch=key.epoch, public_key=logs[current].public_key)
    return key, OfflineVault(nxt), out


# --- verification --------------------------------------------------------------------

def verify_certificate(cert: SignedCertificate, hsm_key: bytes,
                       logs: Mapping[int, CertificateLog] | None = None,
                       proof: InclusionProof | None = None) -> bool:
    """Signature check, plus log inclusion when a proof is given."""
    try:
        if not signing.verify(hsm_key, cert.csr.to_bytes(), cert.signature):
            return False
        if proof is None:
            return True
        log = (logs or {}).get(cert.signer_epoch)
        if log is None or proof.leaf_index != cert.leaf_index:
            return False
        if not 0 < proof.tree_size <= log.size:
            return False
        return verify_inclusion(prefix_root(log.entries, proof.tree_size), cert.to_bytes(), proof)
    except (ValueError, IndexError, MalformedMessage):
        return False


def inclusion_proof_for(cert: SignedCertificate, logs: Mapping[int, CertificateLog]) -> InclusionProof | None:
    log = logs.get(cert.signer_epoch)
    if log is None or cert.leaf_index >= log.size:
        return None
    return prove_inclusion(log.entries, cert.leaf_index)


# --- export format ---------------------------------------------------------------------

def _b64(b: bytes) -> str:
    return base64.b64encode(b).decode("ascii")


def export_logs(logs: Mapping[int, CertificateLog]) -> str:
    """Newline-delimited JSON: one header line, then one line per certificate."""
    if not logs:
        raise ValueError("nothing to export")
    first = logs[min(logs)]
    header = {
        "kind": "header",
        "public_key": _b64(first.public_key),
        "epochs": {str(e): {"frozen": l.frozen, "size": l.size} for e, l in sorted(logs.items())},
    }
    lines = [json.dumps(header, sort_keys=True)]
    for e, log in sorted(logs.items()):
        for i, leaf in enumerate(log.entries.leaves):
            lines.append(json.dumps({"kind": "entry", "epoch": e, "leaf_index": i, "cert": _b64(leaf)},
                                    sort_keys=True))
    return "\n".join(lines) + "\n"


def load_log_export(text: str) -> tuple[bytes, dict[int, CertificateLog]]:
    """Rebuild logs from :func:`export_logs` output, re-verifying every entry."""
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not rows or rows[0].get("kind") != "header":
        raise MalformedMessage("log export must start with a header record")
    header, entries = rows[0], rows[1:]
    key = base64.b64decode(header["public_key"])
    logs = {int(e): CertificateLog(epoch=int(e), public_key=key) for e in header["epochs"]}
    for row in sorted(entries, key=lambda r: (r["epoch"], r["leaf_index"])):
        cert = SignedCertificate.from_bytes(base64.b64decode(row["cert"]))
        if cert.leaf_index != row["leaf_index"] or cert.signer_epoch != row["epoch"]:
            raise MalformedMessage("record position disagrees with certificate")
        logs[row["epoch"]] = log_submit(logs[row["epoch"]], cert)
    for e, meta in header["epochs"].items():
        log = logs[int(e)]
        if log.size != meta["size"]:
            raise MalformedMessage(f"epoch {e}: expected {meta['size']} entries, got {log.size}")
        logs[int(e)] = replace(log, frozen=bool(meta["frozen"]))
    return key, logs
