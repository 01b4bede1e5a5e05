"""Access keys, share IDs and peer IDs.

The genuine BTSync derivations (read-only key from read-write key, share ID
from secret, the 32-byte share ID) were never published. The functions here
use documented digests with domain separation instead, so every value is
internally consistent but NOT interchangeable with the real network.
"""

from __future__ import annotations

import base64
import binascii
import enum
import hashlib
import ipaddress
import os
import re
from dataclasses import dataclass
from typing import Callable

from .errors import BadAlphabet, EntropyUnavailable, WrongKeyKind

BODY_LEN = 20
DISPLAY_LEN = 33
DISPLAY_RE = re.compile(r"^[A-FR][A-Z2-7]{32}$")
_B32_RE = re.compile(r"^[A-Z2-7]*$")

_RO_DOMAIN = b"syncforensics/read-only/v1"
_OT_DOMAIN = b"syncforensics/one-time/v1"
_S32_DOMAIN = b"syncforensics/share32/v1"


class KeyKind(enum.Enum):
    READ_WRITE = "A"
    READ_ONLY = "B"
    ONE_TIME = "C"
    ENCRYPTED_READ_WRITE = "D"
    ENCRYPTED_READ_DECRYPT = "E"
    ENCRYPTED_READ_ONLY = "F"
    LEGACY_READ_ONLY = "R"
    CUSTOM = ""

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


_BY_PREFIX = {k.value: k for k in KeyKind if k.value}


def base32_encode(data: bytes) -> str:
    return base64.b32encode(data).decode("ascii").rstrip("=")


def base32_decode(text: str) -> bytes:
    if not _B32_RE.match(text):
        raise BadAlphabet(f"not Base32: {text!r}")
    padded = text + "=" * (-len(text) % 8)
    try:
        return base64.b32decode(padded)
    except binascii.Error as exc:
        raise BadAlphabet(f"invalid Base32 length in {text!r}") from exc


@dataclass(frozen=True)
class AccessKey:
    kind: KeyKind
    body: bytes
    display: str

    @classmethod
    def from_body(cls, kind: KeyKind, body: bytes) -> "AccessKey":
        if kind is KeyKind.CUSTOM:
            raise WrongKeyKind("custom keys are parsed from text, not built from a body")
        if len(body) != BODY_LEN:
            raise ValueError(f"key body must be {BODY_LEN} bytes, got {len(body)}")
        return cls(kind, bytes(body), kind.value + base32_encode(body))

    @classmethod
    def parse(cls, display: str) -> "AccessKey":
        kind = classify_key(display)
        if kind is KeyKind.CUSTOM:
            try:
                body = base64.b64decode(display, validate=True)
            except (binascii.Error, ValueError):
                body = display.encode("utf-8")
            return cls(kind, body, display)
        return cls(kind, base32_decode(display[1:]), display)

    def __str__(self) -> str:
        return self.display


def classify_key(display: str) -> KeyKind:
    """Kind implied by the prefix letter; anything non-standard is CUSTOM.

    The prefix is a convention, not a guarantee: a user-supplied key can carry
    any letter.
    """
    if len(display) != DISPLAY_LEN or not DISPLAY_RE.match(display):
        return KeyKind.CUSTOM
    try:
        base32_decode(display[1:])
    except BadAlphabet:
        return KeyKind.CUSTOM
    return _BY_PREFIX[display[0]]


def _entropy(source: Callable[[int], bytes] | None, n: int) -> bytes:
    source = source or os.urandom
    try:
        data = source(n)
    except (OSError, NotImplementedError) as exc:
        raise EntropyUnavailable(str(exc)) from exc
    if not isinstance(data, (bytes, bytearray)) or len(data) != n:
        raise EntropyUnavailable(f"entropy source returned {len(data or b'')} of {n} bytes")
    return bytes(data)


def generate_rw_key(entropy: Callable[[int], bytes] | None = None) -> AccessKey:
    return AccessKey.from_body(KeyKind.READ_WRITE, _entropy(entropy, BODY_LEN))


def derive_read_only(rw: AccessKey) -> AccessKey:
    if rw.kind is not KeyKind.READ_WRITE:
        raise WrongKeyKind(f"read-only keys derive from read-write keys, not {rw.kind.label}")
    body = hashlib.sha256(_RO_DOMAIN + rw.body).digest()[:BODY_LEN]
    return AccessKey.from_body(KeyKind.READ_ONLY, body)


def derive_one_time(key: AccessKey) -> AccessKey:
    # Derived via the read-only key, so A and its B yield the same C.
    if key.kind is KeyKind.READ_WRITE:
        key = derive_read_only(key)
    elif key.kind is not KeyKind.READ_ONLY:
        raise WrongKeyKind(f"one-time keys derive from A or B keys, not {key.kind.label}")
    body = hashlib.sha256(_OT_DOMAIN + key.body).digest()[:BODY_LEN]
    return AccessKey.from_body(KeyKind.ONE_TIME, body)


def share_id_from_key(key: AccessKey) -> "ShareId":
    """20-byte lookup hash of a key.

    A read-write key is first reduced to its read-only key, so every
    permission level of one share locates the same peers. One-time keys are
    resolved server-side by the real service and get an unrelated id here.
    """
    if key.kind is KeyKind.READ_WRITE:
        key = derive_read_only(key)
    material = key.display.encode() if key.kind is KeyKind.CUSTOM else key.body
    return ShareId(hashlib.sha1(material).digest())


class _FixedBytes(bytes):
    WIDTH = 0

    def __new__(cls, value: bytes):
        if len(value) != cls.WIDTH:
            raise ValueError(f"{cls.__name__} must be {cls.WIDTH} bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def from_hex(cls, text: str):
        return cls(bytes.fromhex(text))

    @property
    def hex_id(self) -> str:
        return self.hex()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.hex()!r})"


class ShareId(_FixedBytes):
    WIDTH = 20


class ShareId32(_FixedBytes):
    WIDTH = 32


class PeerId(_FixedBytes):
    WIDTH = 20

    @classmethod
    def generate(cls, entropy: Callable[[int], bytes] | None = None) -> "PeerId":
        return cls(_entropy(entropy, cls.WIDTH))


def share32_from(share: bytes, local_ip: str, local_port: int) -> ShareId32:
    """Wide share id bound to the announcing peer's local address."""
    if len(share) != ShareId.WIDTH:
        raise ValueError("share id must be 20 bytes")
    ip = ipaddress.IPv4Address(local_ip).packed
    return ShareId32(hashlib.sha256(_S32_DOMAIN + share + ip + local_port.to_bytes(2, "big")).digest())
