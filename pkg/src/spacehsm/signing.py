"""Signature schemes and the authenticated ground-to-satellite channel.

Public keys are self-describing: the first byte is the scheme tag, the rest
is scheme-specific key material. Both schemes produce 256-byte signatures,
the size of an RSA-2048 signature.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
from dataclasses import dataclass
from functools import lru_cache

import gmpy2
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ed25519, padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import DecryptError

SIGNATURE_SIZE = 256
NONCE_SIZE = 12
TAG_SIZE = 16
RSA_E = 65537


class SchemeId(enum.IntEnum):
    RSA2048 = 1
    STANDIN = 2  # Ed25519 stretched to 256 bytes; fast, for bulk runs


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes
    scheme_id: SchemeId

    def sign(self, message: bytes) -> bytes:
        return sign(self, message)


def _stream(seed: bytes, label: bytes, n: int) -> bytes:
    return hashlib.shake_256(b"spacehsm-keygen|" + label + b"|" + seed).digest(n)


def _prime_from(seed: bytes, label: bytes, bits: int) -> int:
    attempt = 0
    while True:
        raw = _stream(seed, label + attempt.to_bytes(4, "big"), bits // 8)
        # top two bits set so p*q has the full modulus length
        candidate = int.from_bytes(raw, "big") | (3 << (bits - 2)) | 1
        p = int(gmpy2.next_prime(candidate))
        if p.bit_length() == bits and gmpy2.gcd(p - 1, RSA_E) == 1:
            return p
        attempt += 1


@lru_cache(maxsize=64)
def _rsa_from_seed(entropy: bytes) -> rsa.RSAPrivateKey:
    p = _prime_from(entropy, b"p", 1024)
    q = _prime_from(entropy, b"q", 1024)
    if p == q:  # pragma: no cover - astronomically unlikely
        raise ValueError("degenerate RSA seed")
    phi = (p - 1) * (q - 1)
    d = pow(RSA_E, -1, phi)
    pub = rsa.RSAPublicNumbers(RSA_E, p * q)
    priv = rsa.RSAPrivateNumbers(
        p=p, q=q, d=d,
        dmp1=rsa.rsa_crt_dmp1(d, p), dmq1=rsa.rsa_crt_dmq1(d, q),
        iqmp=rsa.rsa_crt_iqmp(p, q), public_numbers=pub,
    )
    return priv.private_key()


def generate_keypair(entropy: bytes, scheme: SchemeId = SchemeId.RSA2048) -> KeyPair:
    """Deterministic key generation from a 32-byte seed."""
    if len(entropy) != 32:
        raise ValueError("entropy must be 32 bytes")
    scheme = SchemeId(scheme)
    tag = bytes([scheme])
    if scheme is SchemeId.RSA2048:
        key = _rsa_from_seed(bytes(entropy))
        pub = key.public_key().public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo)
        priv = key.private_bytes(serialization.Encoding.DER,
                                 serialization.PrivateFormat.PKCS8,
                                 serialization.NoEncryption())
    else:
        seed = hashlib.sha256(b"spacehsm-ed25519|" + entropy).digest()
        key = ed25519.Ed25519PrivateKey.from_private_bytes(seed)
        pub = key.public_key().public_bytes(serialization.Encoding.Raw,
                                            serialization.PublicFormat.Raw)
        priv = seed
    return KeyPair(public_key=tag + pub, private_key=tag + priv, scheme_id=scheme)


@lru_cache(maxsize=64)
def _load_private(private_key: bytes):
    scheme, body = SchemeId(private_key[0]), private_key[1:]
    if scheme is SchemeId.RSA2048:
        return scheme, serialization.load_der_private_key(body, password=None)
    return scheme, ed25519.Ed25519PrivateKey.from_private_bytes(body)


@lru_cache(maxsize=256)
def _load_public(public_key: bytes):
    scheme, body = SchemeId(public_key[0]), public_key[1:]
    if scheme is SchemeId.RSA2048:
        return scheme, serialization.load_der_public_key(body)
    return scheme, ed25519.Ed25519PublicKey.from_public_bytes(body)


def _stretch(public_raw: bytes, message: bytes, sig64: bytes) -> bytes:
    return hashlib.shake_256(b"spacehsm-stretch|" + public_raw + sig64 + message).digest(
        SIGNATURE_SIZE - 64)


def sign(keypair: KeyPair, message: bytes) -> bytes:
    scheme, key = _load_private(keypair.private_key)
    if scheme is SchemeId.RSA2048:
        return key.sign(message, padding.PKCS1v15(), hashes.SHA256())
    sig = key.sign(message)
    return sig + _stretch(keypair.public_key[1:], message, sig)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` is valid; never raises on malformed input."""
    try:
        scheme, key = _load_public(bytes(public_key))
    except (ValueError, IndexError, TypeError):
        return False
    if len(signature) != SIGNATURE_SIZE:
        return False
    try:
        if scheme is SchemeId.RSA2048:
            key.verify(signature, message, padding.PKCS1v15(), hashes.SHA256())
            return True
        sig64 = signature[:64]
        key.verify(sig64, message)
    except InvalidSignature:
        return False
    return hmac.compare_digest(signature[64:], _stretch(public_key[1:], message, sig64))


# --- channel encryption ------------------------------------------------------

def seal(key: bytes, plaintext: bytes, nonce: bytes, aad: bytes = b"") -> bytes:
    """AES-256-GCM; output is nonce || ciphertext || tag."""
    return nonce + AESGCM(key).encrypt(nonce, plaintext, aad or None)


def open_sealed(key: bytes, data: bytes, aad: bytes = b"") -> bytes:
    if len(data) < NONCE_SIZE + TAG_SIZE:
        raise DecryptError("ciphertext too short")
    try:
        return AESGCM(key).decrypt(data[:NONCE_SIZE], data[NONCE_SIZE:], aad or None)
    except InvalidTag as exc:
        raise DecryptError("authentication failed") from exc
