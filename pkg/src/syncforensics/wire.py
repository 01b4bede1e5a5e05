"""Byte-exact codecs for BTSync traffic.

Three framings occur on the wire:

* tracker traffic: a 20-byte uTP header followed by a bencoded dictionary;
* LAN pings: the ``BSYNC\\x00`` magic followed by a bencoded dictionary;
* relay negotiation: a 16-bit length word, an opaque 4-byte counter, the
  ``BSYNC\\x00`` magic and a step-specific body.

The relay layouts are reconstructed from an informal byte listing and are not
authoritative; see ``encode_relay_message``.
"""

from __future__ import annotations

import enum
import functools
import ipaddress
import socket
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union
from urllib.parse import quote, unquote

from . import bencode
from .bencode import BDict
from .keys import base32_decode
from .errors import (
    BadExpiry,
    BadMagic,
    DecodeError,
    DialectMismatch,
    MalformedMessage,
    MalformedPeerEntry,
    MissingMandatoryField,
    TruncatedHeader,
    UnknownPacketType,
    UnsupportedVersion,
    WrongWidth,
)

MAGIC = b"BSYNC\x00"
LEGACY_MAGIC = b"BSync\x80"
UTP_VERSION = 1
UTP_HEADER_LEN = 20
PEER_ID_LEN = 20
NONCE_LEN = 16
COUNTER_LEN = 4
SHARE_WIDTHS = (20, 32)

LINK_BASE = "https://link.getsync.com/"


@functools.lru_cache(maxsize=4096)
def _canonical_ipv4(ip) -> str:
    try:
        addr = ipaddress.ip_address(ip)
    except ValueError as exc:
        raise WrongWidth(f"not an IP address: {ip!r}") from exc
    if addr.version != 4:
        raise WrongWidth(f"only IPv4 endpoints fit a 6-byte address field: {ip}")
    return str(addr)


@functools.lru_cache(maxsize=4096)
def _packed_ipv4(ip: str) -> bytes:
    return ipaddress.IPv4Address(ip).packed


class Endpoint(NamedTuple):
    """IPv4 address and port; packs to 6 bytes in network order."""

    ip: str
    port: int

    @classmethod
    def of(cls, ip, port: int) -> "Endpoint":
        if not isinstance(port, int) or isinstance(port, bool) or not 0 <= port <= 0xFFFF:
            raise WrongWidth(f"port out of range: {port!r}")
        return cls(_canonical_ipv4(ip), port)

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        ip, sep, port = text.rpartition(":")
        if not sep or not port.isdigit():
            raise WrongWidth(f"expected IP:PORT, got {text!r}")
        return cls.of(ip, int(port))

    @classmethod
    def unpack(cls, raw: bytes) -> "Endpoint":
        if not isinstance(raw, bytes) or len(raw) != 6:
            raise WrongWidth(f"address field must be 6 bytes, got {len(raw) if isinstance(raw, bytes) else raw!r}")
        return cls(socket.inet_ntoa(raw[:4]), int.from_bytes(raw[4:], "big"))

    def pack(self) -> bytes:
        return _packed_ipv4(self.ip) + self.port.to_bytes(2, "big")

    def __str__(self) -> str:
        return f"{self.ip}:{self.port}"


# -- uTP ---------------------------------------------------------------------


class UtpPacketType(enum.IntEnum):
    DATA = 0
    FIN = 1
    STATE = 2
    RST = 3
    SYN = 4


_UTP = struct.Struct(">BBHIIIHH")


@dataclass(frozen=True)
class UtpHeader:
    packet_type: UtpPacketType
    version: int = UTP_VERSION
    extension: int = 0
    connection_id: int = 0
    timestamp_us: int = 0
    timestamp_diff_us: int = 0
    window_size: int = 0
    seq_nr: int = 0
    ack_nr: int = 0


def encode_utp_header(h: UtpHeader) -> bytes:
    return _UTP.pack(
        (int(h.packet_type) << 4) | (h.version & 0x0F),
        h.extension,
        h.connection_id,
        h.timestamp_us,
        h.timestamp_diff_us,
        h.window_size,
        h.seq_nr,
        h.ack_nr,
    )


def decode_utp_header(data: bytes, strict: bool = True) -> UtpHeader:
    """Parse the first 20 bytes of ``data``.

    With ``strict=False`` a version other than 1 is returned as-is instead of
    raising, so the dissector can keep near-miss evidence.
    """
    if len(data) < UTP_HEADER_LEN:
        raise TruncatedHeader(f"uTP header needs {UTP_HEADER_LEN} bytes, got {len(data)}")
    b0, ext, cid, ts, tsd, wnd, seq, ack = _UTP.unpack_from(data)
    ptype, version = b0 >> 4, b0 & 0x0F
    if ptype > UtpPacketType.SYN:
        raise UnknownPacketType(f"uTP packet type {ptype}")
    if version != UTP_VERSION and strict:
        raise UnsupportedVersion(version)
    return UtpHeader(UtpPacketType(ptype), version, ext, cid, ts, tsd, wnd, seq, ack)


# -- messages ----------------------------------------------------------------


class Dialect(enum.Enum):
    V14 = 20
    V20 = 32

    @property
    def share_width(self) -> int:
        return self.value


def _check_width(name: str, value, widths) -> bytes:
    if not isinstance(value, (bytes, bytearray)):
        raise WrongWidth(f"{name} must be bytes")
    if len(value) not in widths:
        raise WrongWidth(f"{name} must be {' or '.join(map(str, widths))} bytes, got {len(value)}")
    return bytes(value)


def _check_endpoint(name: str, value) -> Endpoint:
    if not isinstance(value, Endpoint):
        raise WrongWidth(f"{name} must be an Endpoint")
    return Endpoint.of(value.ip, value.port)


@dataclass(frozen=True)
class GetPeers:
    local_addr: Endpoint
    local_port: int
    peer_id: bytes
    share_id: bytes

    def __post_init__(self):
        object.__setattr__(self, "local_addr", _check_endpoint("local_addr", self.local_addr))
        object.__setattr__(self, "peer_id", _check_width("peer_id", self.peer_id, (PEER_ID_LEN,)))
        object.__setattr__(self, "share_id", _check_width("share_id", self.share_id, SHARE_WIDTHS))

    @property
    def dialect(self) -> Dialect:
        return Dialect(len(self.share_id))


@dataclass(frozen=True)
class PeerEntry:
    addr: Endpoint
    local_addr: Endpoint
    peer_id: bytes

    def __post_init__(self):
        object.__setattr__(self, "addr", _check_endpoint("addr", self.addr))
        object.__setattr__(self, "local_addr", _check_endpoint("local_addr", self.local_addr))
        object.__setattr__(self, "peer_id", _check_width("peer_id", self.peer_id, (PEER_ID_LEN,)))


@dataclass(frozen=True)
class PeersResponse:
    external_addr: Endpoint
    peers: tuple
    share_id: bytes
    time: int

    def __post_init__(self):
        object.__setattr__(self, "external_addr", _check_endpoint("external_addr", self.external_addr))
        object.__setattr__(self, "peers", tuple(self.peers))
        object.__setattr__(self, "share_id", _check_width("share_id", self.share_id, (20,)))

    @property
    def lint_flags(self) -> tuple:
        # The tracker always lists the requester, so an empty list is anomalous.
        return ("empty-peer-list",) if not self.peers else ()


@dataclass(frozen=True)
class Ping:
    """``port`` is absent (None) in the multicast form, which carries only m, peer and share."""

    peer_id: bytes
    port: Optional[int]
    share_id: bytes

    def __post_init__(self):
        object.__setattr__(self, "peer_id", _check_width("peer_id", self.peer_id, (PEER_ID_LEN,)))
        object.__setattr__(self, "share_id", _check_width("share_id", self.share_id, SHARE_WIDTHS))
        if self.port is not None and (isinstance(self.port, bool) or not isinstance(self.port, int)
                                      or not 0 <= self.port <= 0xFFFF):
            raise WrongWidth(f"ping port out of range: {self.port!r}")

    @property
    def is_multicast_form(self) -> bool:
        return len(self.share_id) == 32


@dataclass(frozen=True)
class RelayInit:
    remote_peer_id: bytes
    local_peer_id: bytes
    counter_a: bytes = bytes(COUNTER_LEN)
    counter_b: bytes = bytes(COUNTER_LEN)

    def __post_init__(self):
        for name, width in (("remote_peer_id", PEER_ID_LEN), ("local_peer_id", PEER_ID_LEN),
                            ("counter_a", COUNTER_LEN), ("counter_b", COUNTER_LEN)):
            object.__setattr__(self, name, _check_width(name, getattr(self, name), (width,)))


@dataclass(frozen=True)
class RelayNonce:
    nonce: bytes
    share_id: bytes
    counter_a: bytes = bytes(COUNTER_LEN)

    def __post_init__(self):
        object.__setattr__(self, "nonce", _check_width("nonce", self.nonce, (NONCE_LEN,)))
        object.__setattr__(self, "share_id", _check_width("share_id", self.share_id, (20,)))
        object.__setattr__(self, "counter_a", _check_width("counter_a", self.counter_a, (COUNTER_LEN,)))


SyncMessage = Union[GetPeers, PeersResponse, Ping, RelayInit, RelayNonce]


def _require(d, key: bytes, kind, what: str):
    value = d.get(key)
    if value is None or not isinstance(value, kind) or isinstance(value, bool):
        raise MalformedMessage(f"{what}: field {key.decode()!r} missing or wrong type")
    return value


def _bytes_field(d, key: bytes, widths, what: str, exc=MalformedMessage) -> bytes:
    value = _require(d, key, bytes, what)
    if len(value) not in widths:
        raise exc(f"{what}: field {key.decode()!r} has {len(value)} bytes")
    return value


def _int_field(d, key: bytes, what: str, lo=0, hi=2**63 - 1) -> int:
    value = _require(d, key, int, what)
    if not lo <= value <= hi:
        raise MalformedMessage(f"{what}: field {key.decode()!r} out of range: {value}")
    return value


def _utp_dict(data: bytes, expect_m: bytes, what: str) -> tuple[UtpHeader, BDict]:
    header = decode_utp_header(data)
    if header.packet_type is not UtpPacketType.DATA:
        raise MalformedMessage(f"{what} travels in a DATA packet, got {header.packet_type.name}")
    if len(data) == UTP_HEADER_LEN:
        raise MalformedMessage(f"{what}: empty payload")
    payload = bencode.decode_exact(data[UTP_HEADER_LEN:])
    if not isinstance(payload, BDict) or payload.get(b"m") != expect_m:
        raise MalformedMessage(f"payload is not a {what} message")
    return header, payload


def _data_header(header: Optional[UtpHeader]) -> UtpHeader:
    if header is None:
        return UtpHeader(UtpPacketType.DATA)
    if header.packet_type is not UtpPacketType.DATA:
        raise ValueError("message payloads ride in DATA packets")
    return header


def encode_get_peers(m: GetPeers, dialect: Optional[Dialect] = None,
                     header: Optional[UtpHeader] = None) -> bytes:
    if dialect is not None and len(m.share_id) != dialect.share_width:
        raise DialectMismatch(
            f"{dialect.name} needs a {dialect.share_width}-byte share id, got {len(m.share_id)}"
        )
    body = BDict([
        (b"la", m.local_addr.pack()),
        (b"lp", m.local_port),
        (b"m", b"get_peers"),
        (b"peer", m.peer_id),
        (b"share", m.share_id),
    ])
    return encode_utp_header(_data_header(header)) + bencode.encode(body)


def decode_get_peers(data: bytes, dialect: Optional[Dialect] = None) -> GetPeers:
    _, d = _utp_dict(data, b"get_peers", "get_peers")
    what = "get_peers"
    share = _bytes_field(d, b"share", SHARE_WIDTHS, what)
    if dialect is not None and len(share) != dialect.share_width:
        raise DialectMismatch(f"expected {dialect.name}, share id has {len(share)} bytes")
    return GetPeers(
        local_addr=Endpoint.unpack(_bytes_field(d, b"la", (6,), what, WrongWidth)),
        local_port=_int_field(d, b"lp", what, 0, 0xFFFF),
        peer_id=_bytes_field(d, b"peer", (PEER_ID_LEN,), what),
        share_id=share,
    )


def _encode_entry(e: PeerEntry) -> BDict:
    return BDict([(b"a", e.addr.pack()), (b"la", e.local_addr.pack()), (b"p", e.peer_id)])


def _decode_entry(v) -> PeerEntry:
    if not isinstance(v, BDict):
        raise MalformedPeerEntry("peer list item is not a dictionary")
    what = "peer entry"
    return PeerEntry(
        addr=Endpoint.unpack(_bytes_field(v, b"a", (6,), what, MalformedPeerEntry)),
        local_addr=Endpoint.unpack(_bytes_field(v, b"la", (6,), what, MalformedPeerEntry)),
        peer_id=_bytes_field(v, b"p", (PEER_ID_LEN,), what, MalformedPeerEntry),
    )


def encode_peers_response(m: PeersResponse, header: Optional[UtpHeader] = None) -> bytes:
    body = BDict([
        (b"ea", m.external_addr.pack()),
        (b"m", b"peers"),
        (b"peers", [_encode_entry(e) for e in m.peers]),
        (b"share", m.share_id),
        (b"time", m.time),
    ])
    return encode_utp_header(_data_header(header)) + bencode.encode(body)


def decode_peers_response(data: bytes) -> PeersResponse:
    _, d = _utp_dict(data, b"peers", "peers")
    what = "peers"
    peers = _require(d, b"peers", list, what)
    return PeersResponse(
        external_addr=Endpoint.unpack(_bytes_field(d, b"ea", (6,), what, WrongWidth)),
        peers=tuple(_decode_entry(v) for v in peers),
        share_id=_bytes_field(d, b"share", (20,), what),
        time=_int_field(d, b"time", what, -(2**63)),
    )


def encode_bsync_frame(payload) -> bytes:
    return MAGIC + bencode.encode(payload)


def decode_bsync_frame(data: bytes):
    if not data.startswith(MAGIC):
        raise BadMagic("frame does not start with BSYNC\\x00")
    return bencode.decode_exact(data[len(MAGIC):])


def encode_ping(m: Ping, share_width: Optional[int] = None) -> bytes:
    """Multicast pings carry the 32-byte share id, unicast replies the 20-byte one.

    The label is written ``PING`` in the multicast form and ``ping`` in replies,
    as each appears in captured traffic; decoders accept either.
    """
    if share_width is not None and len(m.share_id) != share_width:
        raise WrongWidth(f"ping share width {share_width} but share id has {len(m.share_id)} bytes")
    pairs = [(b"m", b"PING" if m.is_multicast_form else b"ping"), (b"peer", m.peer_id)]
    if m.port is not None:
        pairs.append((b"port", m.port))
    pairs.append((b"share", m.share_id))
    return encode_bsync_frame(BDict(pairs))


def decode_ping(data: bytes) -> Ping:
    d = decode_bsync_frame(data)
    if not isinstance(d, BDict) or not isinstance(d.get(b"m"), bytes) or d[b"m"].lower() != b"ping":
        raise MalformedMessage("BSYNC payload is not a ping")
    what = "ping"
    return Ping(
        peer_id=_bytes_field(d, b"peer", (PEER_ID_LEN,), what),
        port=_int_field(d, b"port", what, 0, 0xFFFF) if b"port" in d else None,
        share_id=_bytes_field(d, b"share", SHARE_WIDTHS, what),
    )


# Relay frames: u16 length | counter_a | BSYNC\0 | zero pad | body.
# Step 1 body: remote peer id | counter_b | "peer20" | local peer id.
# Step 3 body: bencoded {nonce, share}.
_RELAY_INIT_PAD = b"\x00" * 2
_RELAY_NONCE_PAD = b"\x00" * 3
_RELAY_PEER_TAG = b"peer20"
_RELAY_HEAD = 2 + COUNTER_LEN + len(MAGIC)


def encode_relay_message(step: Union[RelayInit, RelayNonce]) -> bytes:
    if isinstance(step, RelayInit):
        body = (step.counter_a + MAGIC + _RELAY_INIT_PAD + step.remote_peer_id
                + step.counter_b + _RELAY_PEER_TAG + step.local_peer_id)
    elif isinstance(step, RelayNonce):
        inner = bencode.encode(BDict([(b"nonce", step.nonce), (b"share", step.share_id)]))
        body = step.counter_a + MAGIC + _RELAY_NONCE_PAD + inner
    else:
        raise TypeError(f"not a relay message: {type(step).__name__}")
    return struct.pack(">H", len(body)) + body


def decode_relay_message(data: bytes) -> Union[RelayInit, RelayNonce]:
    if len(data) < _RELAY_HEAD:
        raise MalformedMessage("relay frame shorter than its fixed header")
    (length,) = struct.unpack_from(">H", data)
    if length != len(data) - 2:
        raise MalformedMessage(f"relay length word {length} but {len(data) - 2} bytes follow")
    if data[6:12] != MAGIC:
        raise BadMagic("relay frame lacks BSYNC\\x00 after the counter")
    counter_a = data[2:6]
    rest = data[12:]
    if rest.startswith(_RELAY_NONCE_PAD + b"d"):
        d = bencode.decode_exact(rest[3:])
        if not isinstance(d, BDict):
            raise MalformedMessage("relay nonce body is not a dictionary")
        return RelayNonce(
            nonce=_bytes_field(d, b"nonce", (NONCE_LEN,), "relay nonce", WrongWidth),
            share_id=_bytes_field(d, b"share", (20,), "relay nonce", WrongWidth),
            counter_a=counter_a,
        )
    if rest.startswith(_RELAY_INIT_PAD):
        body = rest[2:]
        if len(body) != PEER_ID_LEN + COUNTER_LEN + len(_RELAY_PEER_TAG) + PEER_ID_LEN:
            raise WrongWidth(f"relay init body has {len(body)} bytes")
        if body[24:30] != _RELAY_PEER_TAG:
            raise MalformedMessage("relay init lacks the peer20 tag")
        return RelayInit(
            remote_peer_id=body[:20], local_peer_id=body[30:], counter_a=counter_a,
            counter_b=body[20:24],
        )
    raise MalformedMessage("unrecognised relay body")


# -- share links ---------------------------------------------------------------


@dataclass(frozen=True)
class ShareLink:
    folder_name: str
    share_id_b32: str
    one_time_key: str
    size_hint: Optional[str] = None
    server_peer_id: Optional[str] = None
    expiry: Optional[int] = None
    version: Optional[str] = None
    extra: tuple = ()

    def share_id(self) -> bytes:
        return base32_decode(self.share_id_b32)

    def as_dict(self) -> dict:
        return {
            "f": self.folder_name,
            "sz": self.size_hint,
            "s": self.share_id_b32,
            "i": self.one_time_key,
            "p": self.server_peer_id,
            "e": self.expiry,
            "v": self.version,
        }


_LINK_ORDER = ("f", "sz", "s", "i", "p", "e", "v")


def parse_share_link(url: str) -> ShareLink:
    _, hash_, fragment = url.partition("#")
    if not hash_:
        fragment = url.partition("?")[2]
    params: dict[str, str] = {}
    extra = []
    for part in fragment.split("&"):
        if not part:
            continue
        key, _, value = part.partition("=")
        value = unquote(value)
        if key in _LINK_ORDER:
            params.setdefault(key, value)
        else:
            extra.append((key, value))
    missing = [k for k in ("f", "s", "i") if not params.get(k)]
    if missing:
        raise MissingMandatoryField(f"share link lacks {', '.join(missing)}")
    expiry = params.get("e") or None
    if expiry is not None:
        if not expiry.isdigit():
            raise BadExpiry(f"expiry is not a unix timestamp: {expiry!r}")
        expiry = int(expiry)
    return ShareLink(
        folder_name=params["f"],
        share_id_b32=params["s"],
        one_time_key=params["i"],
        size_hint=params.get("sz") or None,
        server_peer_id=params.get("p") or None,
        expiry=expiry,
        version=params.get("v") or None,
        extra=tuple(extra),
    )


def format_share_link(link: ShareLink) -> str:
    parts = []
    for key, value in link.as_dict().items():
        if value is None:
            continue
        parts.append(f"{key}={quote(str(value), safe='')}")
    parts.extend(f"{k}={quote(v, safe='')}" for k, v in link.extra)
    return LINK_BASE + "#" + "&".join(parts)


# -- classification -------------------------------------------------------------


class FrameKind(enum.Enum):
    UTP_CONTROL = "utp-control"
    GET_PEERS = "get-peers"
    PEERS_RESPONSE = "peers"
    PING = "ping"
    RELAY = "relay"
    UNKNOWN_BSYNC = "unknown-bsync"
    NOT_BTSYNC = "not-btsync"


DECODABLE_KINDS = frozenset({FrameKind.GET_PEERS, FrameKind.PEERS_RESPONSE, FrameKind.PING, FrameKind.RELAY})


@dataclass(frozen=True)
class Classification:
    kind: FrameKind
    utp_type: Optional[UtpPacketType] = None
    note: str = field(default="", compare=False)

    def __str__(self) -> str:
        if self.kind is FrameKind.UTP_CONTROL:
            return f"{self.kind.value}({self.utp_type.name})"
        return self.kind.value


def _bencoded_dict_with_m(payload: bytes):
    try:
        d = bencode.decode_exact(payload)
    except DecodeError:
        return None
    if isinstance(d, BDict) and isinstance(d.get(b"m"), bytes):
        return d
    return None


def dissect_frame(data: bytes, transport: Optional[str] = None):
    """Classify ``data`` and decode it when it is a known message.

    Returns ``(Classification, message_or_None)``; never raises on bytes.
    """
    data = bytes(data)
    if data.startswith(MAGIC):
        try:
            ping = decode_ping(data)
        except DecodeError as exc:
            return Classification(FrameKind.UNKNOWN_BSYNC, note=str(exc)), None
        note = "multicast" if ping.is_multicast_form else "reply"
        return Classification(FrameKind.PING, note=note), ping
    if data.startswith(LEGACY_MAGIC):
        return Classification(FrameKind.UNKNOWN_BSYNC, note="legacy BSync header"), None
    if len(data) >= _RELAY_HEAD and data[6:12] == MAGIC:
        try:
            msg = decode_relay_message(data)
        except DecodeError as exc:
            return Classification(FrameKind.UNKNOWN_BSYNC, note=str(exc)), None
        return Classification(FrameKind.RELAY, note=type(msg).__name__), msg
    if len(data) >= UTP_HEADER_LEN and data[0] >> 4 <= UtpPacketType.SYN:
        ptype = UtpPacketType(data[0] >> 4)
        version = data[0] & 0x0F
        payload = data[UTP_HEADER_LEN:]
        if version != UTP_VERSION:
            if payload and _bencoded_dict_with_m(payload) is not None:
                return Classification(FrameKind.UNKNOWN_BSYNC, ptype, f"uTP version {version}"), None
            return Classification(FrameKind.NOT_BTSYNC), None
        if data[1] != 0:
            return Classification(FrameKind.NOT_BTSYNC), None
        if ptype is UtpPacketType.DATA and payload:
            d = _bencoded_dict_with_m(payload)
            if d is not None:
                m = d[b"m"]
                decoder = {b"get_peers": (decode_get_peers, FrameKind.GET_PEERS),
                           b"peers": (decode_peers_response, FrameKind.PEERS_RESPONSE)}.get(m)
                if decoder is None:
                    return Classification(FrameKind.UNKNOWN_BSYNC, ptype, f"message {m!r}"), None
                try:
                    return Classification(decoder[1], ptype), decoder[0](data)
                except DecodeError as exc:
                    return Classification(FrameKind.UNKNOWN_BSYNC, ptype, str(exc)), None
        return Classification(FrameKind.UTP_CONTROL, ptype), None
    return Classification(FrameKind.NOT_BTSYNC), None


def classify_frame(data: bytes, transport: Optional[str] = None) -> Classification:
    return dissect_frame(data, transport)[0]


def encode_message(m: SyncMessage, header: Optional[UtpHeader] = None) -> bytes:
    """Encode any message with its natural framing."""
    if isinstance(m, GetPeers):
        return encode_get_peers(m, header=header)
    if isinstance(m, PeersResponse):
        return encode_peers_response(m, header=header)
    if isinstance(m, Ping):
        return encode_ping(m)
    if isinstance(m, (RelayInit, RelayNonce)):
        return encode_relay_message(m)
    raise TypeError(f"not a sync message: {type(m).__name__}")
