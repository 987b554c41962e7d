import hashlib

import pytest
from cryptography.hazmat.primitives import serialization

from spacehsm.errors import DecryptError
from spacehsm.signing import (
    SIGNATURE_SIZE, SchemeId, generate_keypair, open_sealed, seal, sign, verify,
)

SHA256_DIGEST_INFO = bytes.fromhex("3031300d060960864801650304020105000420")


def textbook_pkcs1_ok(public_key, message, signature):
    # EMSA-PKCS1-v1_5 checked by hand with modular exponentiation.
    pub = serialization.load_der_public_key(public_key[1:]).public_numbers()
    k = (pub.n.bit_length() + 7) // 8
    em = pow(int.from_bytes(signature, "big"), pub.e, pub.n).to_bytes(k, "big")
    t = SHA256_DIGEST_INFO + hashlib.sha256(message).digest()
    return em == b"\x00\x01" + b"\xff" * (k - len(t) - 3) + b"\x00" + t


def test_rsa_keygen_is_deterministic_and_2048_bit(rsa_keys):
    again = generate_keypair(b"\x01" * 32, SchemeId.RSA2048)
    assert again.public_key == rsa_keys.public_key
    pub = serialization.load_der_public_key(rsa_keys.public_key[1:]).public_numbers()
    assert pub.n.bit_length() == 2048 and pub.e == 65537
    assert rsa_keys.public_key != generate_keypair(b"\x02" * 32).public_key


def test_rsa_signature_matches_textbook_check(rsa_keys):
    sig = sign(rsa_keys, b"csr bytes")
    assert len(sig) == SIGNATURE_SIZE
    assert textbook_pkcs1_ok(rsa_keys.public_key, b"csr bytes", sig)
    assert verify(rsa_keys.public_key, b"csr bytes", sig)
    assert not verify(rsa_keys.public_key, b"other", sig)


def test_standin_signature_is_256_bytes(standin_keys):
    sig = sign(standin_keys, b"m")
    assert len(sig) == SIGNATURE_SIZE
    assert verify(standin_keys.public_key, b"m", sig)


@pytest.mark.parametrize("scheme", [SchemeId.RSA2048, SchemeId.STANDIN])
def test_any_bit_flip_breaks_signature(scheme):
    kp = generate_keypair(b"\x03" * 32, scheme)
    sig = sign(kp, b"message")
    for pos in range(0, SIGNATURE_SIZE * 8, 7):
        bad = bytearray(sig)
        bad[pos // 8] ^= 1 << (pos % 8)
        assert not verify(kp.public_key, b"message", bytes(bad))


@pytest.mark.parametrize("key", [b"", b"\x09abc", b"\x01not der"])
def test_verify_never_raises(key, standin_keys):
    assert verify(key, b"m", bytes(256)) is False
    assert verify(standin_keys.public_key, b"m", b"short") is False


def test_cross_key_rejected(standin_keys):
    other = generate_keypair(b"\x08" * 32, SchemeId.STANDIN)
    assert not verify(other.public_key, b"m", sign(standin_keys, b"m"))


def test_entropy_length_checked():
    with pytest.raises(ValueError):
        generate_keypair(b"short")


def test_seal_round_trip_and_tamper():
    key = bytes(range(32))
    ct = seal(key, b"payload", b"\x00" * 12)
    assert len(ct) == len(b"payload") + 28
    assert open_sealed(key, ct) == b"payload"
    bad = bytearray(ct)
    bad[15] ^= 1
    with pytest.raises(DecryptError):
        open_sealed(key, bytes(bad))
    with pytest.raises(DecryptError):
        open_sealed(bytes(32), ct)
    with pytest.raises(DecryptError):
        open_sealed(key, b"tiny")
