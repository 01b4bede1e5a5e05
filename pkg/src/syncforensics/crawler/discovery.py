"""Lookup-hash identification and peer enumeration against a transport.

A transport is anything shaped like :class:`syncforensics.simnet.SimTransport`:
``peer_id``, ``local``, ``external``, ``trackers``, ``predefined_hosts``,
``now()``, ``join()``, ``request()``, ``multicast()``, ``dht_lookup()`` and
``pex()``.
"""

from __future__ import annotations

import logging
import os
import re
from typing import Iterable

from ..capture import Transport
from ..errors import AllSourcesFailed, DecodeError, NoRoute, SyncError, UnrecognisedInput
from ..keys import AccessKey, KeyKind, ShareId, classify_key, share32_from, share_id_from_key
from ..wire import (
    FrameKind,
    GetPeers,
    Ping,
    UtpHeader,
    UtpPacketType,
    dissect_frame,
    encode_get_peers,
    encode_ping,
    parse_share_link,
)
from .model import PeerRecord, PeerSource, Snapshot

log = logging.getLogger(__name__)

DEFAULT_DEADLINE_S = 30.0

_HEX40 = re.compile(r"[0-9a-fA-F]{40}")


def lookup_input_kind(text: str) -> str:
    """Which accepted shape ``text`` has: key, share-id, db-filename or share-link."""
    text = text.strip()
    if not text:
        raise UnrecognisedInput("empty input")
    if "#" in text or text.startswith(("http://", "https://")):
        return "share-link"
    base = os.path.basename(text)
    if base.lower().endswith(".db") and _HEX40.fullmatch(base[:-3]):
        return "db-filename"
    if _HEX40.fullmatch(text):
        return "share-id"
    if classify_key(text) is not KeyKind.CUSTOM:
        return "key"
    raise UnrecognisedInput(f"not a key, 40-hex share id, .db filename or share link: {text!r}")


def derive_lookup_hash(text: str) -> ShareId:
    kind = lookup_input_kind(text)
    text = text.strip()
    if kind == "key":
        return share_id_from_key(AccessKey.parse(text))
    if kind == "share-id":
        return ShareId.from_hex(text)
    if kind == "db-filename":
        return ShareId.from_hex(os.path.basename(text)[:-3])
    try:
        raw = parse_share_link(text).share_id()
        return ShareId(raw)
    except (DecodeError, ValueError) as exc:
        raise UnrecognisedInput(f"share link does not carry a usable share id: {exc}") from exc


# -- individual sources ---------------------------------------------------------


def _records_from_replies(replies, share: bytes, now: float) -> list:
    out = []
    for rec in replies:
        cls, msg = dissect_frame(rec.payload, rec.transport.value)
        if cls.kind is FrameKind.PEERS_RESPONSE and msg.share_id == share:
            out.extend(PeerRecord(e.peer_id, e.addr, e.local_addr, PeerSource.TRACKER, now) for e in msg.peers)
    return out


def _query_tracker(share: bytes, transport, deadline_s: float) -> list:
    if not transport.trackers:
        raise NoRoute("no tracker configured")
    request = GetPeers(transport.local, transport.local.port, transport.peer_id, share)
    header = UtpHeader(UtpPacketType.DATA, connection_id=int.from_bytes(transport.peer_id[:2], "big"), seq_nr=1)
    payload = encode_get_peers(request, header=header)
    records, answered = [], False
    for tracker in transport.trackers:
        # the client sends the same request over UDP and TCP; expect ack + peers on each
        replies = transport.request(tracker, payload, (Transport.UDP, Transport.TCP), deadline_s, expect=4)
        found = _records_from_replies(replies, share, transport.now())
        answered = answered or bool(found)
        records.extend(found)
    if not answered:
        raise NoRoute("no tracker answered before the deadline")
    return records


def _query_lpd(share: bytes, transport, deadline_s: float) -> list:
    me = transport.local
    ping = Ping(transport.peer_id, None, share32_from(share, me.ip, me.port))
    replies = transport.multicast(encode_ping(ping, 32), deadline_s)
    out = []
    for rec in replies:
        cls, msg = dissect_frame(rec.payload, rec.transport.value)
        if cls.kind is FrameKind.PING and msg.share_id == share:
            ep = type(rec.src)(rec.src.ip, msg.port if msg.port is not None else rec.src.port)
            out.append(PeerRecord(msg.peer_id, ep, ep, PeerSource.LPD, transport.now()))
    return out


def _query_predefined(share: bytes, transport, deadline_s: float) -> list:
    hosts = transport.predefined_hosts
    if not hosts:
        raise NoRoute("no predefined hosts configured")
    out, answered = [], False
    for host in hosts:
        ping = Ping(transport.peer_id, transport.external.port, share)
        replies = transport.request(host, encode_ping(ping, 20), (Transport.TCP,), deadline_s, expect=1)
        for rec in replies:
            cls, msg = dissect_frame(rec.payload, rec.transport.value)
            if cls.kind is FrameKind.PING and msg.share_id == share:
                answered = True
                local = type(rec.src)(rec.src.ip, msg.port if msg.port is not None else rec.src.port)
                out.append(PeerRecord(msg.peer_id, rec.src, local, PeerSource.PREDEFINED, transport.now()))
    if not answered:
        raise NoRoute("no predefined host answered before the deadline")
    return out


def _query_dht(share: bytes, transport, deadline_s: float) -> list:
    entries = transport.dht_lookup(share)
    return [PeerRecord(e.peer_id, e.addr, e.local_addr, PeerSource.DHT, transport.now()) for e in entries]


def _query_pex(share: bytes, transport, seeds: Iterable[PeerRecord]) -> list:
    seeds = list(seeds)
    if not seeds:
        raise NoRoute("peer exchange needs at least one known peer")
    out = []
    seen_endpoints = set()
    for seed in seeds:
        if seed.external in seen_endpoints:
            continue
        seen_endpoints.add(seed.external)
        for e in transport.pex(seed.external, share):
            out.append(PeerRecord(e.peer_id, e.addr, e.local_addr, PeerSource.PEX, transport.now()))
    return out


_DIRECT = {
    PeerSource.TRACKER: _query_tracker,
    PeerSource.LPD: _query_lpd,
    PeerSource.PREDEFINED: _query_predefined,
    PeerSource.DHT: _query_dht,
}


def enumerate_peers(share: bytes, sources, transport, deadline_s: float = DEFAULT_DEADLINE_S) -> Snapshot:
    """Query every enabled source and merge what they report.

    PEX runs last because it is seeded with the peers the other sources found.
    The investigator's own id is dropped from the result.
    """
    sources = frozenset(sources)
    if not sources:
        raise ValueError("at least one discovery source must be enabled")
    share = ShareId(share)
    transport.join(share)
    taken_at = transport.now()
    records, failures = [], {}
    for source in PeerSource:
        if source not in sources:
            continue
        try:
            if source is PeerSource.PEX:
                found = _query_pex(share, transport, records)
            else:
                found = _DIRECT[source](share, transport, deadline_s)
        except SyncError as exc:
            log.info("source %s failed: %s", source.value, exc)
            failures[source.value] = str(exc)
            continue
        records.extend(r for r in found if r.peer_id != transport.peer_id)
    if len(failures) == len(sources):
        raise AllSourcesFailed(failures)
    return Snapshot(share, taken_at, tuple(records))
