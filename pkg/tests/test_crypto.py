import random

import pytest
from hypothesis import given, settings, strategies as st

from appraide import crypto_core as cc


@pytest.fixture(scope="module")
def keys512():
    return cc.generate_keypair(512, random.Random(1))


def test_keygen_is_deterministic_for_a_seed():
    a = cc.generate_keypair(256, random.Random(7))
    b = cc.generate_keypair(256, random.Random(7))
    assert a == b
    assert a.modulus_n.bit_length() == 256


@pytest.mark.parametrize("bits", [16, 32, 64, 128, 512])
def test_keygen_sizes(bits):
    kp = cc.generate_keypair(bits, random.Random(bits))
    assert kp.modulus_n.bit_length() == bits
    assert cc.is_valid_keypair(kp)
    assert kp.p * kp.q == kp.modulus_n


def test_keygen_rejects_tiny_modulus():
    with pytest.raises(ValueError):
        cc.generate_keypair(8)


def test_textbook_key_is_valid():
    assert cc.is_valid_keypair(cc.KeyPair(55, 3, 27))
    assert not cc.is_valid_keypair(cc.KeyPair(55, 3, 26))


def test_sign_verify(keys512):
    sig = cc.sign(keys512, b"bonjour")
    assert cc.verify(keys512.public, b"bonjour", sig)
    assert not cc.verify(keys512.public, b"bonjouR", sig)
    assert not cc.verify(keys512.public, b"bonjour", cc.Signature(sig.value ^ 1))
    assert not cc.verify(keys512.public, b"bonjour", cc.Signature(keys512.modulus_n + 1))


def test_signature_oracle(keys512):
    # hash-then-sign computed by hand
    import hashlib
    h = int.from_bytes(hashlib.sha256(b"x").digest(), "big") % keys512.modulus_n
    assert cc.sign(keys512, b"x").value == pow(h, keys512.private_d, keys512.modulus_n)


def test_envelope_roundtrip_and_wrong_key(keys512):
    other = cc.generate_keypair(512, random.Random(2))
    env = cc.encrypt_envelope(keys512.public, b"secret body", random.Random(3))
    assert cc.decrypt_envelope(keys512, env) == b"secret body"
    with pytest.raises(cc.IntegrityError):
        cc.decrypt_envelope(other, env)


def test_envelope_tamper_detected(keys512):
    env = cc.encrypt_envelope(keys512.public, b"abc", random.Random(4))
    flipped = bytes([env.body[0] ^ 0x01]) + env.body[1:]
    with pytest.raises(cc.IntegrityError):
        cc.decrypt_envelope(keys512, cc.Envelope(env.wrapped_key, flipped, env.nonce))
    with pytest.raises(cc.IntegrityError):
        cc.decrypt_envelope(keys512, cc.Envelope(env.wrapped_key ^ 2, env.body, env.nonce))


def test_envelope_bytes_roundtrip(keys512):
    env = cc.encrypt_envelope(keys512.public, b"", random.Random(5))
    assert cc.envelope_from_bytes(cc.envelope_to_bytes(env)) == env


@given(st.lists(st.binary(max_size=40), max_size=6))
def test_frame_roundtrip(fields):
    assert cc.unframe(cc.frame(*fields)) == fields


@settings(max_examples=30, deadline=None)
@given(st.binary(max_size=200), st.integers(0, 2**32))
def test_envelope_property(data, seed):
    kp = cc.generate_keypair(64, random.Random(seed % 97))
    env = cc.encrypt_envelope(kp.public, data, random.Random(seed))
    assert cc.decrypt_envelope(kp, env) == data


def test_unframe_truncated():
    with pytest.raises(ValueError):
        cc.unframe(b"\x00\x00\x00\x05ab")
    with pytest.raises(ValueError):
        cc.unframe(b"\x00\x00")


def test_hash_examples():
    assert cc.digest(b"") != cc.digest(b"a")
    assert cc.digest(b"") == bytes.fromhex("e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
    data = bytes(random.Random(8).getrandbits(8) for _ in range(1024))
    flipped = bytes([data[0] ^ 0x80]) + data[1:]
    assert cc.digest(data) != cc.digest(flipped)


def test_toy_key_exhaustive():
    assert all(pow(m, 81, 55) == m for m in range(55))
    assert (3 * 27) % 40 == 1 and (3 * 26) % 40 != 1
