import base64
import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from syncforensics.errors import BadAlphabet, EntropyUnavailable, WrongKeyKind
from syncforensics.keys import (
    AccessKey,
    KeyKind,
    PeerId,
    ShareId,
    base32_decode,
    base32_encode,
    classify_key,
    derive_one_time,
    derive_read_only,
    generate_rw_key,
    share32_from,
    share_id_from_key,
)

bodies = st.binary(min_size=20, max_size=20)


def fixed(n):
    return b"\x07" * n


@pytest.mark.parametrize("prefix,kind", [
    ("A", KeyKind.READ_WRITE), ("B", KeyKind.READ_ONLY), ("C", KeyKind.ONE_TIME),
    ("D", KeyKind.ENCRYPTED_READ_WRITE), ("E", KeyKind.ENCRYPTED_READ_DECRYPT),
    ("F", KeyKind.ENCRYPTED_READ_ONLY), ("R", KeyKind.LEGACY_READ_ONLY),
])
def test_classify_by_prefix(prefix, kind):
    assert classify_key(prefix + "A" * 32) is kind


@pytest.mark.parametrize("text", ["", "A" * 32, "A" * 34, "Z" + "A" * 32, "a" + "A" * 32, "A" + "1" * 32,
                                  "my-own-secret"])
def test_non_standard_is_custom(text):
    assert classify_key(text) is KeyKind.CUSTOM


def test_generated_key_shape():
    key = generate_rw_key(fixed)
    assert key.kind is KeyKind.READ_WRITE
    assert len(key.display) == 33 and key.display[0] == "A"
    assert AccessKey.parse(key.display) == key


def test_entropy_failure():
    def broken(n):
        raise OSError("no entropy")
    with pytest.raises(EntropyUnavailable):
        generate_rw_key(broken)
    with pytest.raises(EntropyUnavailable):
        generate_rw_key(lambda n: b"short")


def test_read_only_derivation_is_deterministic_and_typed():
    rw = generate_rw_key(fixed)
    ro = derive_read_only(rw)
    assert ro.kind is KeyKind.READ_ONLY and ro.display[0] == "B"
    assert derive_read_only(rw) == ro
    with pytest.raises(WrongKeyKind):
        derive_read_only(ro)


def test_one_time_agrees_for_rw_and_ro():
    rw = generate_rw_key(fixed)
    assert derive_one_time(rw) == derive_one_time(derive_read_only(rw))
    assert derive_one_time(rw).display[0] == "C"
    with pytest.raises(WrongKeyKind):
        derive_one_time(derive_one_time(rw))


def test_custom_key_share_id():
    key = AccessKey.parse("my-own-secret")
    assert key.kind is KeyKind.CUSTOM
    assert share_id_from_key(key) == hashlib.sha1(b"my-own-secret").digest()


def test_base32_alphabet():
    assert base32_encode(b"\x00" * 5) == "AAAAAAAA"
    with pytest.raises(BadAlphabet):
        base32_decode("abc")
    with pytest.raises(BadAlphabet):
        base32_decode("A")


def test_fixed_width_ids():
    with pytest.raises(ValueError):
        ShareId(b"x" * 19)
    assert PeerId.generate(fixed) == b"\x07" * 20
    assert repr(ShareId(bytes(20))).startswith("ShareId(")


def test_share32_depends_on_address():
    share = bytes(20)
    a = share32_from(share, "192.168.0.2", 41000)
    assert len(a) == 32
    assert a == share32_from(share, "192.168.0.2", 41000)
    assert a != share32_from(share, "192.168.0.3", 41000)
    assert a != share32_from(share, "192.168.0.2", 41001)


@given(bodies)
def test_rw_and_ro_locate_same_share(body):
    rw = AccessKey.from_body(KeyKind.READ_WRITE, body)
    assert share_id_from_key(rw) == share_id_from_key(derive_read_only(rw))


@given(bodies)
def test_display_round_trip(body):
    key = AccessKey.from_body(KeyKind.READ_WRITE, body)
    assert base64.b32decode(key.display[1:]) == body
    assert AccessKey.parse(str(key)) == key
