import os
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from syncforensics.bencode import BDict, encode
from syncforensics.errors import (
    BadExpiry,
    BadMagic,
    DecodeError,
    DialectMismatch,
    MalformedPeerEntry,
    MissingMandatoryField,
    TruncatedHeader,
    UnknownPacketType,
    UnsupportedVersion,
    WrongWidth,
)
from syncforensics.wire import (
    MAGIC,
    Classification,
    Dialect,
    Endpoint,
    FrameKind,
    GetPeers,
    PeerEntry,
    PeersResponse,
    Ping,
    RelayInit,
    RelayNonce,
    ShareLink,
    UtpHeader,
    UtpPacketType,
    classify_frame,
    decode_get_peers,
    decode_peers_response,
    decode_ping,
    decode_relay_message,
    decode_utp_header,
    dissect_frame,
    encode_get_peers,
    encode_message,
    encode_peers_response,
    encode_ping,
    encode_relay_message,
    encode_utp_header,
    format_share_link,
    parse_share_link,
)
from strategies import get_peers, messages, peers_responses, pings, relay_inits, relay_nonces, share_links, utp_headers

WINHEX = ("https://link.getsync.com/#f=winhex&sz=35E5&s=XIQSFD2MCDPS2QKITWKJROJ2VUSV2YNA"
          "&i=CKKR3V2BBM7MXIOTPU3XWK55JBUFWG3EY&p=CALSNMDGCZZAUQXBXEIR6Q57UMTVOSFI&e=1431277452")

PEER = bytes(range(20))
SHARE20 = bytes(range(100, 120))
SHARE32 = bytes(range(200, 232))
LA = Endpoint("192.168.1.10", 3369)


# -- endpoints ---------------------------------------------------------------------


def test_endpoint_pack_round_trip():
    ep = Endpoint.of("10.0.0.1", 3838)
    assert ep.pack() == bytes([10, 0, 0, 1, 0x0E, 0xFE])
    assert Endpoint.unpack(ep.pack()) == ep
    assert Endpoint.parse("10.0.0.1:3838") == ep
    assert str(ep) == "10.0.0.1:3838"


@pytest.mark.parametrize("ip,port", [("::1", 80), ("10.0.0.1", 70000), ("nonsense", 1)])
def test_endpoint_rejects(ip, port):
    with pytest.raises(WrongWidth):
        Endpoint.of(ip, port)


# -- uTP ----------------------------------------------------------------------------


@pytest.mark.parametrize("ptype,first", [
    (UtpPacketType.DATA, 0x01), (UtpPacketType.FIN, 0x11), (UtpPacketType.STATE, 0x21),
    (UtpPacketType.RST, 0x31), (UtpPacketType.SYN, 0x41),
])
def test_utp_first_byte(ptype, first):
    raw = encode_utp_header(UtpHeader(ptype))
    assert len(raw) == 20
    assert raw[0] == first


def test_utp_zero_fields_round_trip():
    raw = encode_utp_header(UtpHeader(UtpPacketType.STATE))
    assert raw == b"\x21" + bytes(19)
    assert decode_utp_header(raw) == UtpHeader(UtpPacketType.STATE)


def test_utp_errors():
    with pytest.raises(TruncatedHeader):
        decode_utp_header(b"\x21" * 19)
    with pytest.raises(UnknownPacketType):
        decode_utp_header(b"\x51" + bytes(19))
    with pytest.raises(UnsupportedVersion):
        decode_utp_header(b"\x22" + bytes(19))
    assert decode_utp_header(b"\x22" + bytes(19), strict=False).version == 2


@given(utp_headers)
def test_utp_round_trip(h):
    assert decode_utp_header(encode_utp_header(h)) == h


# -- get_peers ----------------------------------------------------------------------


def test_get_peers_v14_template():
    raw = encode_get_peers(GetPeers(LA, 3369, PEER, SHARE20), Dialect.V14)
    assert raw[0] == 0x01
    body = raw[20:]
    assert body == (b"d2:la6:" + LA.pack() + b"2:lpi3369e1:m9:get_peers4:peer20:" + PEER
                    + b"5:share20:" + SHARE20 + b"e")
    assert b"9:get_peers" in raw and b"5:share20:" in raw


def test_get_peers_v20_template():
    raw = encode_get_peers(GetPeers(LA, 3369, PEER, SHARE32), Dialect.V20)
    assert b"5:share32:" + SHARE32 in raw
    assert decode_get_peers(raw).dialect is Dialect.V20


def test_get_peers_dialect_mismatch():
    with pytest.raises(DialectMismatch):
        encode_get_peers(GetPeers(LA, 3369, PEER, SHARE32), Dialect.V14)
    raw = encode_get_peers(GetPeers(LA, 3369, PEER, SHARE20))
    with pytest.raises(DialectMismatch):
        decode_get_peers(raw, Dialect.V20)


def test_message_widths_enforced():
    with pytest.raises(WrongWidth):
        GetPeers(LA, 1, PEER[:19], SHARE20)
    with pytest.raises(WrongWidth):
        Ping(PEER, 1, SHARE20[:19])
    with pytest.raises(WrongWidth):
        RelayNonce(bytes(15), SHARE20)


@given(get_peers)
def test_get_peers_round_trip(m):
    assert decode_get_peers(encode_get_peers(m)) == m


# -- peers response -------------------------------------------------------------------


def test_peers_response_includes_requester():
    me = PeerEntry(Endpoint("203.0.113.5", 41000), LA, PEER)
    raw = encode_peers_response(PeersResponse(me.addr, (me,), SHARE20, 1410048000))
    assert b"5:peersl" in raw
    assert b"d1:a6:" + me.addr.pack() + b"2:la6:" + LA.pack() + b"1:p20:" + PEER + b"e" in raw
    decoded = decode_peers_response(raw)
    assert decoded.peers == (me,)
    assert decoded.lint_flags == ()


def test_empty_peer_list_is_flagged_not_rejected():
    raw = encode_peers_response(PeersResponse(LA, (), SHARE20, 0))
    assert b"5:peersle" in raw
    assert decode_peers_response(raw).lint_flags == ("empty-peer-list",)


def test_bad_peer_entry():
    raw = encode_utp_header(UtpHeader(UtpPacketType.DATA)) + encode(BDict([
        (b"ea", LA.pack()), (b"m", b"peers"),
        (b"peers", [BDict([(b"a", b"short"), (b"la", LA.pack()), (b"p", PEER)])]),
        (b"share", SHARE20), (b"time", 0),
    ]))
    with pytest.raises(MalformedPeerEntry):
        decode_peers_response(raw)


@given(peers_responses)
def test_peers_round_trip(m):
    assert decode_peers_response(encode_peers_response(m)) == m


# -- ping ---------------------------------------------------------------------------------


def test_multicast_ping_layout():
    raw = encode_ping(Ping(PEER, None, SHARE32), 32)
    assert raw == MAGIC + b"d1:m4:PING4:peer20:" + PEER + b"5:share32:" + SHARE32 + b"e"


def test_reply_ping_layout():
    raw = encode_ping(Ping(PEER, 3369, SHARE20), 20)
    assert raw == MAGIC + b"d1:m4:ping4:peer20:" + PEER + b"4:porti3369e5:share20:" + SHARE20 + b"e"


def test_ping_errors():
    with pytest.raises(BadMagic):
        decode_ping(b"BSYNX\x00de")
    with pytest.raises(WrongWidth):
        encode_ping(Ping(PEER, 1, SHARE20), 32)
    with pytest.raises(DecodeError):
        decode_ping(MAGIC + b"d1:m4:pinge")


@given(pings)
def test_ping_round_trip(m):
    assert decode_ping(encode_ping(m)) == m


# -- relay ---------------------------------------------------------------------------------


def test_relay_nonce_bytes():
    m = RelayNonce(b"N" * 16, SHARE20, b"\x00\x00\x00\x07")
    raw = encode_relay_message(m)
    assert b"5:nonce16:" + b"N" * 16 in raw
    assert int.from_bytes(raw[:2], "big") == len(raw) - 2
    assert raw[6:12] == MAGIC


def test_relay_init_length_word():
    raw = encode_relay_message(RelayInit(b"R" * 20, b"L" * 20))
    assert int.from_bytes(raw[:2], "big") == len(raw) - 2 == 0x3E


def test_relay_bad_magic():
    raw = bytearray(encode_relay_message(RelayInit(b"R" * 20, b"L" * 20)))
    raw[6] = ord("X")
    with pytest.raises(BadMagic):
        decode_relay_message(bytes(raw))


@given(st.one_of(relay_inits, relay_nonces))
def test_relay_round_trip(m):
    assert decode_relay_message(encode_relay_message(m)) == m


# -- share links ---------------------------------------------------------------------------


def test_winhex_link():
    link = parse_share_link(WINHEX)
    assert (link.folder_name, link.size_hint, link.share_id_b32, link.one_time_key,
            link.server_peer_id, link.expiry) == (
        "winhex", "35E5", "XIQSFD2MCDPS2QKITWKJROJ2VUSV2YNA", "CKKR3V2BBM7MXIOTPU3XWK55JBUFWG3EY",
        "CALSNMDGCZZAUQXBXEIR6Q57UMTVOSFI", 1431277452)
    assert link.version is None
    assert format_share_link(link) == WINHEX


def test_minimal_link():
    link = parse_share_link("https://link.getsync.com/#f=docs&s=XIQSFD2MCDPS2QKITWKJROJ2VUSV2YNA&i=CKKR")
    assert link.folder_name == "docs" and link.size_hint is None and link.expiry is None


def test_link_canonical_order_and_extras():
    link = parse_share_link("https://link.getsync.com/#e=5&i=I&zz=1&s=S&f=F")
    assert format_share_link(link) == "https://link.getsync.com/#f=F&s=S&i=I&e=5&zz=1"


def test_link_errors():
    with pytest.raises(MissingMandatoryField):
        parse_share_link("https://link.getsync.com/#f=a&s=b")
    with pytest.raises(BadExpiry):
        parse_share_link("https://link.getsync.com/#f=a&s=b&i=c&e=soon")


def test_link_quoting():
    link = ShareLink("my folder & co", "S", "I")
    assert parse_share_link(format_share_link(link)) == link


@given(share_links)
def test_link_round_trip(link):
    assert parse_share_link(format_share_link(link)) == link


# -- classification --------------------------------------------------------------------------


def test_state_packet_classifies_as_control():
    assert str(classify_frame(b"\x21" + bytes(19))) == "utp-control(STATE)"


def test_ping_classifies():
    assert classify_frame(encode_ping(Ping(PEER, None, SHARE32))).kind is FrameKind.PING


def test_random_bytes_not_btsync():
    assert classify_frame(b"\xff" + os.urandom(40)).kind is FrameKind.NOT_BTSYNC
    assert classify_frame(b"").kind is FrameKind.NOT_BTSYNC


def test_version_mismatch_is_soft():
    raw = bytearray(encode_get_peers(GetPeers(LA, 1, PEER, SHARE20)))
    raw[0] = 0x02
    assert classify_frame(bytes(raw)).kind is FrameKind.UNKNOWN_BSYNC


def test_unknown_message_in_data_packet():
    raw = encode_utp_header(UtpHeader(UtpPacketType.DATA)) + encode(BDict({"m": b"hello"}))
    assert classify_frame(raw).kind is FrameKind.UNKNOWN_BSYNC


def test_classification_note_ignored_in_equality():
    assert Classification(FrameKind.PING, note="a") == Classification(FrameKind.PING, note="b")


_KIND = {GetPeers: FrameKind.GET_PEERS, PeersResponse: FrameKind.PEERS_RESPONSE, Ping: FrameKind.PING,
         RelayInit: FrameKind.RELAY, RelayNonce: FrameKind.RELAY}


@given(messages)
def test_dissect_recovers_encoder(m):
    cls, decoded = dissect_frame(encode_message(m))
    assert cls.kind is _KIND[type(m)]
    assert decoded == m


@given(st.binary(max_size=200))
def test_dissect_never_raises(data):
    cls, _ = dissect_frame(data)
    assert isinstance(cls, Classification)


def test_decoders_raise_only_typed_errors():
    rng = random.Random(11)
    decoders = (decode_utp_header, decode_get_peers, decode_peers_response, decode_ping, decode_relay_message)
    seeds = [encode_message(m) for m in (
        GetPeers(LA, 1, PEER, SHARE20), Ping(PEER, 2, SHARE20),
        RelayNonce(bytes(16), SHARE20), PeersResponse(LA, (), SHARE20, 1))]
    for _ in range(2000):
        base = bytearray(rng.choice(seeds))
        for _ in range(rng.randint(1, 4)):
            base[rng.randrange(len(base))] = rng.randrange(256)
        for dec in decoders:
            try:
                dec(bytes(base[: rng.randint(0, len(base))]))
            except DecodeError:
                pass
