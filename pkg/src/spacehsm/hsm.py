"""Satellite-side state machine.

Every operation takes an :class:`HsmState` and returns a new one; nothing is
mutated in place, so a scenario can keep old states around for inspection.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping

from . import signing
from .accumulator import MerkleLog, append, root
from .errors import DecryptError, FaultDetected, MalformedMessage
from .messages import (
    ATTEST_DOMAIN, BEACON_DOMAIN, Attestation, BeaconMessage, CertResponse, CsrMessage,
    ErrorResponse, SignedCertificate,
)
from .signing import KeyPair, SchemeId


@dataclass(frozen=True)
class PrgState:
    state: bytes
    counter: int = 0

    def __post_init__(self) -> None:
        if len(self.state) != 32:
            raise ValueError("PRG state must be 32 bytes")


@dataclass(frozen=True)
class ChannelKey:
    key: bytes
    epoch: int


def derive_key(ratchet: PrgState) -> tuple[ChannelKey, PrgState]:
    """Key for ``ratchet.counter`` and the successor state.

    The successor is a one-way hash of the current state, so holding it
    reveals nothing about earlier keys.
    """
    key = hashlib.sha256(ratchet.state + b"key").digest()
    nxt = hashlib.sha256(ratchet.state + b"next").digest()
    return ChannelKey(key, ratchet.counter), PrgState(nxt, ratchet.counter + 1)


def key_at(initial: PrgState, epoch: int) -> ChannelKey:
    r = initial
    while r.counter < epoch:
        _, r = derive_key(r)
    return derive_key(r)[0]


@dataclass(frozen=True)
class HsmState:
    keypair: KeyPair
    ratchet: PrgState  # state that produced current_key
    current_key: ChannelKey
    log: MerkleLog = field(default_factory=MerkleLog)
    archived_logs: tuple[MerkleLog, ...] = ()  # one per finished epoch
    beacon_sequence: int = 0
    fault_rate: float = 0.0
    retry_limit: int = 3
    fault_seed: bytes = b"\x00" * 32
    fault_counter: int = 0
    faults_detected: int = 0
    issued: Mapping[bytes, bytes] = field(default_factory=lambda: MappingProxyType({}))

    @property
    def epoch(self) -> int:
        return self.current_key.epoch

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key

    @property
    def total_signed(self) -> int:
        return self.log.size + sum(l.size for l in self.archived_logs)

    def log_for_epoch(self, epoch: int) -> MerkleLog:
        if epoch == self.epoch:
            return self.log
        return self.archived_logs[epoch]


def sign_beacon(keypair: KeyPair, beacon: BeaconMessage) -> BeaconMessage:
    sig = signing.sign(keypair, BEACON_DOMAIN + beacon.signed_body())
    return replace(beacon, beacon_signature=sig)


def verify_beacon(beacon: BeaconMessage, public_key: bytes | None = None) -> bool:
    key = beacon.public_key if public_key is None else public_key
    return signing.verify(key, BEACON_DOMAIN + beacon.signed_body(), beacon.beacon_signature)


def _beacon_for(state: HsmState, sequence: int) -> BeaconMessage:
    b = BeaconMessage(state.public_key, root(state.log), state.log.size, state.epoch, sequence)
    return sign_beacon(state.keypair, b)


def bootstrap(entropy: bytes, initial_ratchet: PrgState, *,
              scheme: SchemeId = SchemeId.RSA2048, fault_rate: float = 0.0,
              retry_limit: int = 3) -> tuple[HsmState, BeaconMessage]:
    keypair = signing.generate_keypair(entropy, scheme)
    key, _ = derive_key(initial_ratchet)
    state = HsmState(
        keypair=keypair, ratchet=initial_ratchet, current_key=key,
        fault_rate=fault_rate, retry_limit=retry_limit,
        fault_seed=hashlib.sha256(b"fault|" + entropy).digest(),
    )
    return state, _beacon_for(state, 0)


def make_beacon(state: HsmState) -> tuple[HsmState, BeaconMessage]:
    seq = state.beacon_sequence + 1
    return replace(state, beacon_sequence=seq), _beacon_for(state, seq)


def _advance_epoch(state: HsmState) -> HsmState:
    _, nxt = derive_key(state.ratchet)
    key, _ = derive_key(nxt)
    return replace(state, ratchet=nxt, current_key=key,
                   archived_logs=state.archived_logs + (state.log,), log=MerkleLog(),
                   issued=MappingProxyType({}))


def try_decrypt(state: HsmState, ciphertext: bytes) -> tuple[HsmState, bytes, bool]:
    """Decrypt under the current key, falling back to exactly one key ahead.

    Success under the next key moves the HSM to that epoch for good.
    """
    try:
        return state, signing.open_sealed(state.current_key.key, ciphertext), False
    except DecryptError:
        pass
    _, nxt = derive_key(state.ratchet)
    lookahead, _ = derive_key(nxt)
    plaintext = signing.open_sealed(lookahead.key, ciphertext)  # raises DecryptError
    return _advance_epoch(state), plaintext, True


def _fault_draw(state: HsmState, sig_len: int) -> int | None:
    h = hashlib.sha256(state.fault_seed + state.fault_counter.to_bytes(8, "big")).digest()
    if int.from_bytes(h[:8], "big") / 2**64 >= state.fault_rate:
        return None
    return int.from_bytes(h[8:16], "big") % (sig_len * 8)


def _flip(sig: bytes, bit: int) -> bytes:
    buf = bytearray(sig)
    buf[bit // 8] ^= 1 << (bit % 8)
    return bytes(buf)


def sign_certificate(state: HsmState, csr: CsrMessage) -> tuple[HsmState, SignedCertificate]:
    """Sign, check the signature, and only then commit it to the accumulator.

    A corrupted signature (injected fault) is never released; signing is
    retried up to ``retry_limit`` more times before FaultDetected is raised.
    The exception carries the post-attempt state as ``exc.state``.
    """
    message = csr.to_bytes()
    for _ in range(state.retry_limit + 1):
        sig = signing.sign(state.keypair, message)
        bit = _fault_draw(state, len(sig))
        if bit is not None:
            sig = _flip(sig, bit)
        state = replace(state, fault_counter=state.fault_counter + 1)
        if signing.verify(state.public_key, message, sig):
            cert = SignedCertificate(csr, sig, state.epoch, state.log.size)
            return replace(state, log=append(state.log, cert.to_bytes())), cert
        state = replace(state, faults_detected=state.faults_detected + 1)
    exc = FaultDetected(f"signature failed self-check {state.retry_limit + 1} times")
    exc.state = state
    raise exc


def attest_peer(state: HsmState, peer_public_key: bytes) -> Attestation:
    sig = signing.sign(state.keypair, ATTEST_DOMAIN + peer_public_key)
    return Attestation(peer_public_key, state.public_key, sig)


def verify_attestation(att: Attestation, attester_key: bytes | None = None) -> bool:
    key = att.attester_key if attester_key is None else attester_key
    return signing.verify(key, ATTEST_DOMAIN + att.attested_key, att.signature)


def process_uplink(state: HsmState, payload: bytes
                   ) -> tuple[HsmState, bytes | ErrorResponse | None]:
    """Handle one reassembled uplink message.

    Returns response bytes (a :class:`CertResponse`), an ErrorResponse for
    requests that decrypted but could not be served, or None when the
    payload did not authenticate (dropped silently).
    """
    try:
        state, plaintext, _ = try_decrypt(state, payload)
    except DecryptError:
        return state, None
    try:
        csr = CsrMessage.from_bytes(plaintext)
    except (MalformedMessage, ValueError) as exc:
        return state, ErrorResponse("malformed_csr", str(exc))
    cached = state.issued.get(csr.request_id)
    if cached is not None:
        return state, cached
    try:
        state, cert = sign_certificate(state, csr)
    except FaultDetected as exc:
        return exc.state, ErrorResponse("fault_detected", str(exc))
    resp = CertResponse(csr.request_id, cert.signer_epoch, cert.leaf_index,
                        state.log.size, root(state.log), cert.signature).to_bytes()
    issued = MappingProxyType({**state.issued, csr.request_id: resp})
    return replace(state, issued=issued), resp
