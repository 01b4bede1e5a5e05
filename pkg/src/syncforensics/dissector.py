"""Capture dissection: classify packets, extract share ids, summarise flows."""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .capture import CaptureFormat, CaptureRecord, parse_hexdump_lines, parse_raw_frames
from .errors import BadFormat
from .keys import share32_from
from .wire import (
    DECODABLE_KINDS,
    Classification,
    GetPeers,
    PeersResponse,
    Ping,
    RelayNonce,
    dissect_frame,
)

DEFAULT_TRACKER_IPS = ("54.225.100.8", "54.225.92.50", "54.225.196.38")
# historical names, kept for reports only
TRACKER_HOSTNAME = "t.usyncapp.com"
RELAY_HOSTNAME = "r.usyncapp.com"
LPD_PORT = 3838
RELAY_PORT = 3000


class RoleHint(enum.Enum):
    TRACKER = "TrackerTraffic"
    RELAY = "RelayTraffic"
    LPD = "LpdTraffic"


@dataclass(frozen=True)
class ClassifiedPacket:
    index: int
    record: CaptureRecord
    classification: Classification
    decoded: object = None
    role_hints: frozenset = frozenset()

    def listing_line(self) -> str:
        r = self.record
        hints = ",".join(sorted(h.value for h in self.role_hints)) or "-"
        return (f"{self.index} {r.timestamp} {r.transport.value} {r.src} -> {r.dst} "
                f"{self.classification} {hints} len={len(r.payload)}")


def read_capture(path, fmt) -> Iterator[CaptureRecord]:
    """Records from ``path`` in the declared format; the format is never sniffed."""
    fmt = CaptureFormat(fmt) if not isinstance(fmt, CaptureFormat) else fmt
    if fmt is CaptureFormat.HEXDUMP_LINES:
        with open(path, encoding="utf-8") as fh:
            yield from parse_hexdump_lines(fh)
    else:
        with open(path, "rb") as fh:
            data = fh.read()
        yield from parse_raw_frames(data)


@dataclass(frozen=True)
class Dissector:
    """Role-hint configuration; the tracker list defaults to the historical addresses."""

    tracker_ips: tuple = DEFAULT_TRACKER_IPS
    lpd_port: int = LPD_PORT
    relay_port: int = RELAY_PORT

    def hints(self, record: CaptureRecord) -> frozenset:
        out = set()
        ends = (record.src, record.dst)
        if any(e.port == self.lpd_port for e in ends):
            out.add(RoleHint.LPD)
        if any(e.ip in self.tracker_ips for e in ends):
            out.add(RoleHint.TRACKER)
        # trackers also listen on the relay port; only untracked hosts count as relays
        if any(e.port == self.relay_port and e.ip not in self.tracker_ips for e in ends):
            out.add(RoleHint.RELAY)
        return frozenset(out)

    def classify(self, record: CaptureRecord, index: int = 0) -> ClassifiedPacket:
        cls, msg = dissect_frame(record.payload, record.transport.value)
        if cls.kind not in DECODABLE_KINDS:
            msg = None
        return ClassifiedPacket(index, record, cls, msg, self.hints(record))


def classify_stream(records: Iterable[CaptureRecord], dissector: Optional[Dissector] = None) -> Iterator[ClassifiedPacket]:
    d = dissector or Dissector()
    for i, record in enumerate(records):
        yield d.classify(record, i)


# -- share ids ----------------------------------------------------------------------


def _share_of(pkt: ClassifiedPacket) -> Optional[tuple]:
    """(share id, ip, port) the id may be bound to, for messages that carry one."""
    m = pkt.decoded
    if isinstance(m, GetPeers):
        return m.share_id, m.local_addr.ip, m.local_addr.port
    if isinstance(m, Ping):
        return m.share_id, pkt.record.src.ip, m.port if m.port is not None else pkt.record.src.port
    if isinstance(m, (PeersResponse, RelayNonce)):
        return m.share_id, None, None
    return None


@dataclass
class ShareSighting:
    share_id: bytes
    first_seen: int
    packets: list = field(default_factory=list)
    wide_forms: set = field(default_factory=set)   # 32-byte forms resolved to this id

    @property
    def width(self) -> int:
        return len(self.share_id)

    def to_dict(self) -> dict:
        return {"share_id": self.share_id.hex(), "width": self.width, "first_seen": self.first_seen,
                "packets": list(self.packets), "wide_forms": sorted(w.hex() for w in self.wide_forms)}


def extract_share_ids(packets: Iterable[ClassifiedPacket], known_shares: Iterable[bytes] = ()) -> list:
    """Distinct share ids carried by decoded messages, earliest first.

    A 32-byte id is folded into its 20-byte id when the latter was also seen
    (or is in ``known_shares``) and rebinding it to the sender's advertised
    local address reproduces the wide form. Unresolved wide ids are kept as is.
    """
    narrow: dict = {}
    wide: list = []
    for pkt in packets:
        got = _share_of(pkt)
        if got is None:
            continue
        share, ip, port = got
        if len(share) == 20:
            s = narrow.setdefault(share, ShareSighting(share, pkt.record.timestamp))
            s.first_seen = min(s.first_seen, pkt.record.timestamp)
            s.packets.append(pkt.index)
        else:
            wide.append((share, ip, port, pkt))
    candidates = list(narrow) + [bytes(k) for k in known_shares if bytes(k) not in narrow]
    unresolved: dict = {}
    for share, ip, port, pkt in wide:
        match = None
        if ip is not None:
            match = next((c for c in candidates if share32_from(c, ip, port) == share), None)
        if match is None:
            s = unresolved.setdefault(share, ShareSighting(share, pkt.record.timestamp))
        else:
            s = narrow.get(match)
            if s is None:
                s = narrow[match] = ShareSighting(match, pkt.record.timestamp)
            s.wide_forms.add(share)
        s.first_seen = min(s.first_seen, pkt.record.timestamp)
        s.packets.append(pkt.index)
    out = list(narrow.values()) + list(unresolved.values())
    for s in out:
        s.packets.sort()
    return sorted(out, key=lambda s: (s.first_seen, s.share_id))


# -- flows ----------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowSummary:
    endpoints: tuple
    transport: str
    counts: dict
    first: int
    last: int
    share_ids: frozenset
    peer_ids: frozenset

    @property
    def packets(self) -> int:
        return sum(self.counts.values())

    def to_dict(self) -> dict:
        return {
            "endpoints": [str(e) for e in self.endpoints],
            "transport": self.transport,
            "packets": self.packets,
            "counts": dict(sorted(self.counts.items())),
            "first": self.first,
            "last": self.last,
            "share_ids": sorted(s.hex() for s in self.share_ids),
            "peer_ids": sorted(p.hex() for p in self.peer_ids),
        }


def _peer_ids_of(m) -> set:
    if isinstance(m, (GetPeers, Ping)):
        return {m.peer_id}
    if isinstance(m, PeersResponse):
        return {e.peer_id for e in m.peers}
    return set()


def reconstruct_flows(packets: Iterable[ClassifiedPacket]) -> list:
    """Group by unordered endpoint pair plus transport, ordered by first packet."""
    groups: dict = {}
    for pkt in packets:
        r = pkt.record
        a, b = sorted((r.src, r.dst), key=lambda e: e.pack())
        key = (a, b, r.transport.value)
        g = groups.get(key)
        if g is None:
            g = groups[key] = {"counts": Counter(), "first": r.timestamp, "last": r.timestamp,
                               "shares": set(), "peers": set(), "order": pkt.index}
        g["counts"][str(pkt.classification)] += 1
        g["first"] = min(g["first"], r.timestamp)
        g["last"] = max(g["last"], r.timestamp)
        got = _share_of(pkt)
        if got is not None:
            g["shares"].add(got[0])
        g["peers"] |= _peer_ids_of(pkt.decoded)
    flows = [
        FlowSummary((a, b), t, dict(g["counts"]), g["first"], g["last"], frozenset(g["shares"]), frozenset(g["peers"]))
        for (a, b, t), g in sorted(groups.items(), key=lambda kv: (kv[1]["first"], kv[1]["order"]))
    ]
    return flows


def dissection_report(packets: list, flows: list, shares: list) -> str:
    doc = {
        "packets": len(packets),
        "classification_counts": dict(sorted(Counter(str(p.classification) for p in packets).items())),
        "flows": [f.to_dict() for f in flows],
        "share_ids": [s.to_dict() for s in shares],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


__all__ = [
    "BadFormat",
    "ClassifiedPacket",
    "DEFAULT_TRACKER_IPS",
    "Dissector",
    "FlowSummary",
    "RoleHint",
    "ShareSighting",
    "classify_stream",
    "dissection_report",
    "extract_share_ids",
    "read_capture",
    "reconstruct_flows",
]
