"""Bencoding for BTSync payloads.

Values map onto Python types as follows:

* byte string -> ``bytes``
* integer     -> ``int`` (signed 64-bit)
* list        -> ``list``
* dictionary  -> :class:`BDict`

Dictionaries keep the order their pairs were written in, and keep duplicate
keys, because captured packets are evidence and must survive a decode/encode
cycle byte for byte.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence, Union

from .errors import MalformedBencode

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1
MAX_DEPTH = 256

_DIGITS = frozenset(b"0123456789")


class BDict:
    """Ordered, duplicate-preserving bencoded dictionary.

    Lookups by key return the first matching pair.
    """

    __slots__ = ("_pairs",)

    def __init__(self, pairs: Iterable = ()):
        if isinstance(pairs, dict):
            pairs = pairs.items()
        items = []
        for k, v in pairs:
            if isinstance(k, str):
                k = k.encode()
            if not isinstance(k, bytes):
                raise TypeError(f"dictionary keys must be bytes, not {type(k).__name__}")
            items.append((k, v))
        self._pairs = tuple(items)

    def pairs(self) -> tuple:
        return self._pairs

    items = pairs

    def keys(self):
        return [k for k, _ in self._pairs]

    def get(self, key, default=None):
        if isinstance(key, str):
            key = key.encode()
        for k, v in self._pairs:
            if k == key:
                return v
        return default

    def __getitem__(self, key):
        sentinel = object()
        v = self.get(key, sentinel)
        if v is sentinel:
            raise KeyError(key)
        return v

    def __contains__(self, key) -> bool:
        sentinel = object()
        return self.get(key, sentinel) is not sentinel

    def __iter__(self) -> Iterator[bytes]:
        return iter(self.keys())

    def __len__(self) -> int:
        return len(self._pairs)

    def __eq__(self, other) -> bool:
        if isinstance(other, BDict):
            return self._pairs == other._pairs
        return NotImplemented

    def __hash__(self):
        raise TypeError("BDict is not hashable")

    def __repr__(self) -> str:
        inner = ", ".join(f"{k!r}: {v!r}" for k, v in self._pairs)
        return f"BDict({{{inner}}})"


BValue = Union[bytes, int, list, BDict]


def encode(value: BValue) -> bytes:
    out: list[bytes] = []
    _encode_into(value, out)
    return b"".join(out)


def _encode_into(value, out: list) -> None:
    if isinstance(value, bool):
        raise TypeError("bool is not a bencode value")
    if isinstance(value, bytes):
        out.append(b"%d:" % len(value))
        out.append(value)
    elif isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise OverflowError(f"integer {value} does not fit in 64 bits")
        out.append(b"i%de" % value)
    elif isinstance(value, (list, tuple)):
        out.append(b"l")
        for item in value:
            _encode_into(item, out)
        out.append(b"e")
    elif isinstance(value, BDict):
        out.append(b"d")
        for k, v in value.pairs():
            out.append(b"%d:" % len(k))
            out.append(k)
            _encode_into(v, out)
        out.append(b"e")
    elif isinstance(value, dict):
        _encode_into(BDict(value), out)
    else:
        raise TypeError(f"cannot bencode {type(value).__name__}")


def decode(data: bytes, offset: int = 0) -> tuple[BValue, int]:
    """Decode the value starting at ``offset``.

    Returns ``(value, consumed)``. Bytes after the value are not inspected.
    """
    data = bytes(data)
    if not 0 <= offset < len(data):
        raise MalformedBencode(f"offset {offset} outside buffer of {len(data)} bytes")
    value, end = _decode_at(data, offset, 0)
    return value, end - offset


def decode_exact(data: bytes) -> BValue:
    """Decode ``data`` as exactly one value with nothing trailing."""
    value, consumed = decode(data)
    if consumed != len(data):
        raise MalformedBencode(f"{len(data) - consumed} trailing bytes after value")
    return value


def _decode_at(data: bytes, pos: int, depth: int) -> tuple[BValue, int]:
    if depth > MAX_DEPTH:
        raise MalformedBencode(f"nesting deeper than {MAX_DEPTH}")
    if pos >= len(data):
        raise MalformedBencode(f"truncated input at offset {pos}")
    lead = data[pos]
    if lead == 0x69:  # i
        return _decode_int(data, pos)
    if lead == 0x6C:  # l
        items = []
        pos += 1
        while True:
            if pos >= len(data):
                raise MalformedBencode("unterminated list")
            if data[pos] == 0x65:
                return items, pos + 1
            item, pos = _decode_at(data, pos, depth + 1)
            items.append(item)
    if lead == 0x64:  # d
        pairs = []
        pos += 1
        while True:
            if pos >= len(data):
                raise MalformedBencode("unterminated dictionary")
            if data[pos] == 0x65:
                return BDict(pairs), pos + 1
            if data[pos] not in _DIGITS:
                raise MalformedBencode(f"dictionary key at offset {pos} is not a byte string")
            key, pos = _decode_string(data, pos)
            val, pos = _decode_at(data, pos, depth + 1)
            pairs.append((key, val))
    if lead in _DIGITS:
        return _decode_string(data, pos)
    raise MalformedBencode(f"unexpected byte 0x{lead:02x} at offset {pos}")


def _decode_int(data: bytes, pos: int) -> tuple[int, int]:
    end = data.find(b"e", pos + 1)
    if end < 0:
        raise MalformedBencode("unterminated integer")
    body = data[pos + 1 : end]
    digits = body[1:] if body.startswith(b"-") else body
    if not digits.isdigit():
        raise MalformedBencode(f"bad integer literal {body!r}")
    if digits[0] == 0x30 and (len(digits) > 1 or body.startswith(b"-")):
        raise MalformedBencode(f"non-canonical integer {body!r}")
    value = int(body)
    if not INT64_MIN <= value <= INT64_MAX:
        raise MalformedBencode(f"integer {body!r} exceeds 64 bits")
    return value, end + 1


def _decode_string(data: bytes, pos: int) -> tuple[bytes, int]:
    colon = data.find(b":", pos)
    if colon < 0:
        raise MalformedBencode("byte string length has no ':'")
    digits = data[pos:colon]
    if not digits.isdigit():
        raise MalformedBencode(f"bad byte string length {digits!r}")
    if digits[0] == 0x30 and len(digits) > 1:
        raise MalformedBencode(f"non-canonical length {digits!r}")
    length = int(digits)
    start = colon + 1
    if start + length > len(data):
        raise MalformedBencode(
            f"byte string needs {length} bytes, {len(data) - start} available"
        )
    return data[start : start + length], start + length


def get_path(value: BValue, path: Sequence) -> BValue | None:
    """Follow ``path`` through nested dictionaries; ``None`` when any step is missing."""
    cur = value
    for key in path:
        if not isinstance(cur, BDict):
            return None
        cur = cur.get(key)
        if cur is None:
            return None
    return cur
