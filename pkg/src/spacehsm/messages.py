"""Canonical byte layouts for everything that crosses the link or lands in a log.

All integers are big-endian. Variable-length fields carry a length prefix.

CsrMessage          u32 subject_len | subject | request_id[16] | f64 timestamp
SignedCertificate   u32 csr_len | csr | u32 signer_epoch | u64 leaf_index | u16 sig_len | sig
BeaconMessage       u16 pk_len | pk | root[32] | u64 log_size | u32 epoch | u64 sequence
                    | u16 sig_len | sig          (signature covers everything before sig_len)
Attestation         u16 len | attested_key | u16 len | attester_key | u16 sig_len | sig
CertResponse        request_id[16] | u32 epoch | u64 leaf_index | u64 log_size | root[32]
                    | u16 sig_len | sig
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .accumulator import Digest
from .errors import MalformedMessage

CSR_DEFAULT_SIZE = 2560
CSR_OVERHEAD = 4 + 16 + 8
BEACON_DOMAIN = b"SPACEHSM-BEACON\x00"
ATTEST_DOMAIN = b"SPACEHSM-ATTEST\x00"


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise MalformedMessage("truncated message")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(">" + fmt)
        return s.unpack(self.take(s.size))

    def blob(self, prefix: str) -> bytes:
        (n,) = self.unpack(prefix)
        return self.take(n)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedMessage("trailing bytes")


@dataclass(frozen=True)
class CsrMessage:
    subject: bytes
    request_id: bytes
    timestamp: float

    def __post_init__(self) -> None:
        if len(self.request_id) != 16:
            raise MalformedMessage("request_id must be 16 bytes")

    @classmethod
    def of_size(cls, size: int, request_id: bytes, timestamp: float,
                subject_prefix: bytes = b"CN=example.org") -> "CsrMessage":
        """Build a CSR whose serialization is exactly ``size`` bytes."""
        body = size - CSR_OVERHEAD
        if body < 0:
            raise ValueError(f"CSR size must be at least {CSR_OVERHEAD}")
        subject = (subject_prefix + b"\x00" * body)[:body]
        return cls(subject, request_id, timestamp)

    def to_bytes(self) -> bytes:
        return (struct.pack(">I", len(self.subject)) + self.subject + self.request_id
                + struct.pack(">d", self.timestamp))

    @classmethod
    def from_bytes(cls, data: bytes) -> "CsrMessage":
        r = _Reader(data)
        subject = r.blob("I")
        rid = r.take(16)
        (ts,) = r.unpack("d")
        r.done()
        return cls(subject, rid, ts)


@dataclass(frozen=True)
class SignedCertificate:
    csr: CsrMessage
    signature: bytes
    signer_epoch: int
    leaf_index: int

    def to_bytes(self) -> bytes:
        csr = self.csr.to_bytes()
        return (struct.pack(">I", len(csr)) + csr
                + struct.pack(">IQH", self.signer_epoch, self.leaf_index, len(self.signature))
                + self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SignedCertificate":
        r = _Reader(data)
        csr = CsrMessage.from_bytes(r.blob("I"))
        epoch, index = r.unpack("IQ")
        sig = r.blob("H")
        r.done()
        return cls(csr, sig, epoch, index)


@dataclass(frozen=True)
class BeaconMessage:
    public_key: bytes
    accumulator_root: Digest
    log_size: int
    epoch: int
    sequence: int
    beacon_signature: bytes = b""

    def signed_body(self) -> bytes:
        return (struct.pack(">H", len(self.public_key)) + self.public_key
                + bytes(self.accumulator_root)
                + struct.pack(">QIQ", self.log_size, self.epoch, self.sequence))

    def to_bytes(self) -> bytes:
        return (self.signed_body() + struct.pack(">H", len(self.beacon_signature))
                + self.beacon_signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BeaconMessage":
        r = _Reader(data)
        pk = r.blob("H")
        root = Digest(r.take(32))
        size, epoch, seq = r.unpack("QIQ")
        sig = r.blob("H")
        r.done()
        return cls(pk, root, size, epoch, seq, sig)


@dataclass(frozen=True)
class Attestation:
    attested_key: bytes
    attester_key: bytes
    signature: bytes

    def to_bytes(self) -> bytes:
        return (struct.pack(">H", len(self.attested_key)) + self.attested_key
                + struct.pack(">H", len(self.attester_key)) + self.attester_key
                + struct.pack(">H", len(self.signature)) + self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Attestation":
        r = _Reader(data)
        attested, attester, sig = r.blob("H"), r.blob("H"), r.blob("H")
        r.done()
        return cls(attested, attester, sig)


@dataclass(frozen=True)
class CertResponse:
    """What the satellite actually downlinks after signing."""

    request_id: bytes
    signer_epoch: int
    leaf_index: int
    log_size: int
    root: Digest
    signature: bytes

    def to_bytes(self) -> bytes:
        return (self.request_id
                + struct.pack(">IQQ", self.signer_epoch, self.leaf_index, self.log_size)
                + bytes(self.root) + struct.pack(">H", len(self.signature)) + self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CertResponse":
        r = _Reader(data)
        rid = r.take(16)
        epoch, index, size = r.unpack("IQQ")
        root = Digest(r.take(32))
        sig = r.blob("H")
        r.done()
        return cls(rid, epoch, index, size, root, sig)

    def certificate(self, csr: CsrMessage) -> SignedCertificate:
        if csr.request_id != self.request_id:
            raise MalformedMessage("response does not answer this CSR")
        return SignedCertificate(csr, self.signature, self.signer_epoch, self.leaf_index)


@dataclass(frozen=True)
class ErrorResponse:
    reason: str
    detail: str = ""
