"""Deterministic event loop that owns every simulated actor.

All traffic between actors is real wire bytes: each datagram is appended to
``capture`` and logged to ``trace`` before delivery. DHT, PEX and chunk
transfer stay in memory; no wire layout for them is modelled.
"""

from __future__ import annotations

import heapq
import itertools
import random
import struct
from typing import Callable, Optional

from ..capture import CaptureRecord, Transport
from ..errors import ChunkAbsent, NoRoute
from ..keys import KeyKind, share32_from
from ..wire import (
    FrameKind,
    GetPeers,
    Ping,
    PeerEntry,
    RelayInit,
    RelayNonce,
    UtpHeader,
    UtpPacketType,
    dissect_frame,
    encode_get_peers,
    encode_peers_response,
    encode_ping,
    encode_relay_message,
    encode_utp_header,
    decode_utp_header,
)
from .dht import build_dht, dht_announce, dht_lookup
from .peer import PeerOptions, SimPeer, pex_exchange, peer_serve_chunk
from .relay import RelayEvent, RelaySession, RelayStep, relay_advance
from .scenario import Scenario
from .tracker import TrackerState, tracker_handle_get_peers

LATENCY_US = 1_000
START_JITTER_US = 5_000_000
LPD_REPLY_WINDOW_US = 1_000_000
US = 1_000_000

TRACE_HEADER = "# time | actor | direction | classification | summary"

INVESTIGATOR = "investigator"


def _short(b: bytes) -> str:
    return b.hex()[:12]


def summarize(msg) -> str:
    if isinstance(msg, GetPeers):
        return f"get_peers peer={_short(msg.peer_id)} share{len(msg.share_id)}={_short(msg.share_id)} la={msg.local_addr}"
    if isinstance(msg, Ping):
        port = "-" if msg.port is None else msg.port
        return f"ping peer={_short(msg.peer_id)} port={port} share{len(msg.share_id)}={_short(msg.share_id)}"
    if isinstance(msg, RelayInit):
        return f"relay-init local={_short(msg.local_peer_id)} remote={_short(msg.remote_peer_id)}"
    if isinstance(msg, RelayNonce):
        return f"relay-nonce nonce={_short(msg.nonce)} share={_short(msg.share_id)}"
    if msg is not None and hasattr(msg, "peers"):
        return f"peers n={len(msg.peers)} share={_short(msg.share_id)} ea={msg.external_addr}"
    return ""


def _opaque_blob(rng: random.Random, size: int) -> bytes:
    # 16-bit length word like the other relay frames; body is opaque.
    return struct.pack(">H", size) + rng.randbytes(size)


class _RelayConversation:
    """Scripted relay negotiation between two peers through one relay server."""

    def __init__(self, net: "Network", a: SimPeer, b: SimPeer, share: bytes, relay_ep):
        self.net, self.a, self.b, self.share, self.relay = net, a, b, share, relay_ep
        rng = net.rng
        self.counter_a = rng.randbytes(4)
        self.counter_b = rng.randbytes(4)
        self.nonce_a = rng.randbytes(16)
        self.nonce_b = rng.randbytes(16)
        self.key_a = rng.randbytes(32)
        self.key_b = rng.randbytes(32)
        self.session = RelaySession()
        self.stage = 0

    def _advance(self, step: RelayStep, payload=b"") -> None:
        self.session = relay_advance(self.session, RelayEvent(step, payload))

    def start(self) -> None:
        if not (self.a.online and self.b.online):
            return
        msg = RelayInit(self.b.peer_id, self.a.peer_id, self.counter_a, self.counter_b)
        self.net.send(self.a.name, self.a.external, self.relay, Transport.TCP, encode_relay_message(msg))

    def at_relay(self, record: CaptureRecord, msg) -> None:
        net, a, b = self.net, self.a, self.b
        if record.src == a.external and isinstance(msg, RelayInit) and self.stage == 0:
            self._advance(RelayStep.INIT, msg)
            net.send("relay", self.relay, a.external, Transport.TCP, b"")
            self._advance(RelayStep.ACK)
            self.stage = 1
        elif record.src == a.external and isinstance(msg, RelayNonce) and self.stage == 1:
            self._advance(RelayStep.NONCE_A, msg)
            counters = (self.counter_a + a.peer_id + a.external.pack() + self.counter_b)
            net.send("relay", self.relay, b.external, Transport.TCP, struct.pack(">H", len(counters)) + counters)
            self._advance(RelayStep.COUNTERS, counters)
            self.stage = 2
        elif record.src == b.external and isinstance(msg, RelayNonce) and self.stage == 2:
            fwd = RelayNonce(msg.nonce, msg.share_id, self.counter_b)
            net.send("relay", self.relay, a.external, Transport.TCP, encode_relay_message(fwd))
            self._advance(RelayStep.NONCE_B, fwd)
            net.send("relay", self.relay, a.external, Transport.TCP, _opaque_blob(net.rng, 32))
            self._advance(RelayStep.REMOTE_KEY, self.key_b)
            self.stage = 3
        elif record.src == a.external and self.stage == 3:
            self._advance(RelayStep.LOCAL_KEY, self.key_a)
            self.stage = 4
        elif record.src == a.external and self.stage == 4:
            self._advance(RelayStep.TRAFFIC, record.payload)
            net.send("relay", self.relay, b.external, Transport.TCP, record.payload)
            self.stage = 5

    def at_peer(self, peer: SimPeer, record: CaptureRecord) -> None:
        net = self.net
        if peer is self.a and self.stage == 1 and not record.payload:
            nonce = RelayNonce(self.nonce_a, self.share, self.counter_a)
            net.send(peer.name, peer.external, self.relay, Transport.TCP, encode_relay_message(nonce))
        elif peer is self.b and self.stage == 2:
            nonce = RelayNonce(self.nonce_b, self.share, self.counter_b)
            net.send(peer.name, peer.external, self.relay, Transport.TCP, encode_relay_message(nonce))
        elif peer is self.a and self.stage == 3 and dissect_frame(record.payload)[0].kind is not FrameKind.RELAY:
            net.send(peer.name, peer.external, self.relay, Transport.TCP, _opaque_blob(net.rng, 32))
            net.send(peer.name, peer.external, self.relay, Transport.TCP, _opaque_blob(net.rng, 64))


class Network:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.rng = random.Random(scenario.seed)
        self.epoch_us = int(round(scenario.epoch * US))
        self.now_us = 0
        self._queue: list = []
        self._seq = itertools.count()
        self._started = False
        self.capture: list = []
        self.trace: list = [TRACE_HEADER]
        self.tracker = TrackerState(announce_interval=scenario.announce_interval)
        # the tracker can only place 32-byte ids for shares it knows about
        self.tracker.known_shares.extend(s.share_id for s in scenario.shares.values())
        self.trackers = list(scenario.trackers)
        self.relays = list(scenario.relays)
        self.lpd_group = scenario.lpd_group
        self.share_names = {s.share_id: name for name, s in scenario.shares.items()}
        self.peers: dict = {}
        self._conn_ids: dict = {}
        self._seq_nrs: dict = {}
        self._contacted: set = set()
        self._lpd_waiting: dict = {}
        self.conversations: list = []
        self._build_peers()
        self.dht_nodes = build_dht(scenario.dht_nodes, self.rng, scenario.dht_k) if scenario.dht_nodes else []
        inv = scenario.investigator
        self.investigator = SimPeer(
            INVESTIGATOR, inv.peer_id, inv.external, inv.local, inv.segment,
            options=PeerOptions(use_tracker=False, use_lpd=False, use_relay=False,
                                predefined_hosts=list(inv.predefined_hosts)),
        )
        self.inbox: list = []

    # -- construction ---------------------------------------------------------

    def _build_peers(self) -> None:
        sc = self.scenario
        files = {f.manifest.name: f for f in sc.files}
        for spec in sc.peers:
            peer = SimPeer(
                spec.name, spec.peer_id, spec.external, spec.local, spec.segment,
                shares={sc.shares[n].share_id: kind for n, kind in spec.shares.items()},
                options=PeerOptions(spec.use_tracker, spec.use_lpd, spec.use_relay, spec.use_dht,
                                    list(spec.predefined_hosts), spec.dialect, spec.requires_approval),
            )
            for fname, indices in spec.chunks.items():
                f = files[fname]
                chunks = f.chunks()
                bad = set(spec.corrupt.get(fname, ()))
                for i in indices:
                    data = chunks[i]
                    if i in bad:
                        data = bytes(b ^ 0xFF for b in data)
                    peer.chunk_store[(f.manifest.digest, i)] = data
            self.peers[spec.name] = peer

    # -- clock ----------------------------------------------------------------

    @property
    def now(self) -> float:
        """Unix time in seconds."""
        return (self.epoch_us + self.now_us) / US

    def schedule(self, at_us: int, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (at_us, next(self._seq), fn, args))

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for peer in self.peers.values():
            self.schedule(1 + self.rng.randrange(START_JITTER_US), self._peer_start, peer)
        for plan in self.scenario.relay_sessions:
            a, b = self.peers[plan.a], self.peers[plan.b]
            share = self.scenario.shares[plan.share].share_id
            conv = _RelayConversation(self, a, b, share, self.relays[0])
            self.conversations.append(conv)
            self.schedule(int(plan.at * US), conv.start)
        for ev in self.scenario.events:
            self.schedule(int(ev.at * US), self._apply_event, ev)

    def run_until(self, limit_us: int, stop: Optional[Callable[[], bool]] = None) -> bool:
        """Process events up to ``limit_us``; returns True when ``stop`` fired."""
        while self._queue and self._queue[0][0] <= limit_us:
            at, _, fn, args = heapq.heappop(self._queue)
            self.now_us = max(self.now_us, at)
            fn(*args)
            if stop is not None and stop():
                return True
        self.now_us = max(self.now_us, limit_us)
        return False

    def run(self, duration_s: float) -> None:
        self.start()
        self.run_until(self.now_us + int(round(duration_s * US)))

    # -- datagrams ------------------------------------------------------------

    def _actor_segment(self, actor: str) -> Optional[str]:
        if actor == INVESTIGATOR:
            return self.investigator.segment
        peer = self.peers.get(actor)
        return peer.segment if peer else None

    def _all_peers(self):
        yield from self.peers.values()
        yield self.investigator

    def _resolve(self, actor: str, dst):
        """Receivers of a datagram from ``actor``: list of (kind, target)."""
        if dst == self.lpd_group:
            seg = self._actor_segment(actor)
            return [("peer", p) for p in self.peers.values()
                    if p.segment == seg and p.name != actor and p.online and p.options.use_lpd]
        if dst in self.trackers:
            return [("tracker", dst)]
        if dst in self.relays:
            return [("relay", dst)]
        seg = self._actor_segment(actor)
        for p in self._all_peers():
            if p.online and p.segment == seg and p.local == dst and p.name != actor:
                return [("peer", p)]
        for p in self._all_peers():
            if p.online and p.external == dst and p.name != actor:
                return [("peer", p)]
        return []

    def send(self, actor: str, src, dst, transport: Transport, payload: bytes) -> None:
        record = CaptureRecord(self.epoch_us + self.now_us, src, dst, transport, payload)
        self.capture.append(record)
        cls, msg = dissect_frame(payload, transport.value)
        self._log(actor, f"tx {transport.value.lower()} {src} -> {dst}", cls, msg)
        for kind, target in self._resolve(actor, dst):
            self.schedule(self.now_us + LATENCY_US, self._deliver, kind, target, record, cls, msg)

    def _log(self, actor: str, direction: str, cls, msg) -> None:
        self.trace.append(f"{self.now_us / US:.6f} | {actor} | {direction} | {cls} | {summarize(msg)}")

    def _deliver(self, kind: str, target, record: CaptureRecord, cls, msg) -> None:
        name = {"tracker": "tracker", "relay": "relay"}.get(kind) or target.name
        if kind == "peer" and not target.online:
            return
        self._log(name, f"rx {record.transport.value.lower()} {record.src} -> {record.dst}", cls, msg)
        if kind == "tracker":
            self._tracker_receive(target, record, cls, msg)
        elif kind == "relay":
            for conv in self.conversations:
                if record.src in (conv.a.external, conv.b.external) and conv.relay == target:
                    conv.at_relay(record, msg)
        elif target is self.investigator:
            self.inbox.append(record)
        else:
            self._peer_receive(target, record, cls, msg)

    # -- tracker --------------------------------------------------------------

    def _tracker_receive(self, endpoint, record: CaptureRecord, cls, msg) -> None:
        if cls.kind is not FrameKind.GET_PEERS:
            return
        req_header = decode_utp_header(record.payload)
        response = tracker_handle_get_peers(self.tracker, msg, record.src, self.now)
        ack = UtpHeader(UtpPacketType.STATE, connection_id=req_header.connection_id,
                        timestamp_us=self.now_us & 0xFFFFFFFF, ack_nr=req_header.seq_nr)
        data = UtpHeader(UtpPacketType.DATA, connection_id=req_header.connection_id,
                         timestamp_us=self.now_us & 0xFFFFFFFF, seq_nr=1, ack_nr=req_header.seq_nr)
        self.send("tracker", endpoint, record.src, record.transport, encode_utp_header(ack))
        self.send("tracker", endpoint, record.src, record.transport, encode_peers_response(response, data))

    # -- peers ----------------------------------------------------------------

    def _peer_start(self, peer: SimPeer) -> None:
        if not peer.online:
            return
        opts = peer.options
        if opts.use_tracker and peer.shares:
            for share in peer.shares:
                self._conn_ids[(peer.name, share)] = self.rng.randrange(1 << 16)
            self._announce(peer, True)
        if opts.use_lpd and peer.shares:
            self._lpd_round(peer)
        if opts.predefined_hosts and peer.shares:
            for host in opts.predefined_hosts:
                for share in peer.shares:
                    self._contact(peer, host, share)
        if opts.use_dht and self.dht_nodes:
            for share in peer.shares:
                dht_announce(self.dht_nodes[:3], share, peer.entry(), self.scenario.dht_k)
        self.schedule(self.now_us + int(self.scenario.pex_interval * US), self._pex_round, peer)

    def _announce(self, peer: SimPeer, first: bool) -> None:
        if not peer.online or not peer.options.use_tracker:
            return
        tracker = self.trackers[0] if self.trackers else None
        if tracker is None:
            return
        for share in peer.shares:
            wire_share = share
            if peer.options.dialect.share_width == 32:
                wire_share = share32_from(share, peer.local.ip, peer.local.port)
            key = (peer.name, share)
            seq = self._seq_nrs.get(key, 0) + 1
            self._seq_nrs[key] = seq
            header = UtpHeader(UtpPacketType.DATA, connection_id=self._conn_ids.get(key, 0),
                               timestamp_us=self.now_us & 0xFFFFFFFF, window_size=1 << 20, seq_nr=seq & 0xFFFF)
            msg = GetPeers(peer.local, peer.local.port, peer.peer_id, wire_share)
            payload = encode_get_peers(msg, header=header)
            self.send(peer.name, peer.external, tracker, Transport.UDP, payload)
            if first:
                self.send(peer.name, peer.external, tracker, Transport.TCP, payload)
        self.schedule(self.now_us + int(self.scenario.announce_interval * US), self._announce, peer, False)

    def _lpd_round(self, peer: SimPeer) -> None:
        if not peer.online or not peer.options.use_lpd:
            return
        self.lpd_multicast(peer)
        self.schedule(self.now_us + int(self.scenario.lpd_interval * US), self._lpd_round, peer)

    def lpd_multicast(self, peer: SimPeer) -> None:
        """One multicast ping per share, 32-byte form."""
        for share in peer.shares:
            self._lpd_waiting[(peer.name, share)] = self.now_us
            ping = Ping(peer.peer_id, None, share32_from(share, peer.local.ip, peer.local.port))
            self.send(peer.name, peer.local, self.lpd_group, Transport.UDP, encode_ping(ping, 32))

    def _contact(self, peer: SimPeer, host, share: bytes) -> None:
        same_lan = any(p.local == host and p.segment == peer.segment for p in self._all_peers())
        src = peer.local if same_lan else peer.external
        self._contacted.add((peer.name, host, share))
        ping = Ping(peer.peer_id, src.port, share)
        self.send(peer.name, src, host, Transport.TCP, encode_ping(ping, 20))

    def prune_stale(self, peer: SimPeer) -> None:
        """Forget contacts that no longer answer at the remembered address."""
        live = {p.peer_id: p for p in self._all_peers() if p.online}
        for share, known in peer.known_peers.items():
            for pid in [pid for pid, e in known.items()
                        if pid not in live or e.addr not in (live[pid].external, live[pid].local)]:
                del known[pid]

    def _pex_round(self, peer: SimPeer) -> None:
        if not peer.online:
            return
        self.prune_stale(peer)
        by_id = {p.peer_id: p for p in self.peers.values()}
        for share in peer.shares:
            for pid in sorted(peer.known_peers.get(share, {})):
                other = by_id.get(pid)
                if other is not None and other.online and other.holds(share):
                    pex_exchange(peer, other, share, rng=self.rng)
        self.schedule(self.now_us + int(self.scenario.pex_interval * US), self._pex_round, peer)

    def _peer_receive(self, peer: SimPeer, record: CaptureRecord, cls, msg) -> None:
        for conv in self.conversations:
            if record.src == conv.relay and peer in (conv.a, conv.b):
                conv.at_peer(peer, record)
                return
        if cls.kind is FrameKind.PEERS_RESPONSE:
            if peer.holds(msg.share_id):
                for entry in msg.peers:
                    peer.learn(msg.share_id, entry)
            return
        if cls.kind is not FrameKind.PING:
            return
        if msg.is_multicast_form:
            if not peer.options.use_lpd:
                return
            port = msg.port if msg.port is not None else record.src.port
            for share in peer.shares:
                if share32_from(share, record.src.ip, port) == msg.share_id:
                    reply_to = type(record.src)(record.src.ip, port)
                    peer.learn(share, PeerEntry(reply_to, reply_to, msg.peer_id))
                    reply = Ping(peer.peer_id, peer.local.port, share)
                    self.send(peer.name, peer.local, reply_to, Transport.TCP, encode_ping(reply, 20))
            return
        share = msg.share_id
        if not peer.holds(share):
            return
        sender = type(record.src)(record.src.ip, msg.port if msg.port is not None else record.src.port)
        peer.learn(share, PeerEntry(sender, sender, msg.peer_id))
        key = (peer.name, record.src, share)
        if key in self._contacted:
            self._contacted.discard(key)
            return
        asked = self._lpd_waiting.get((peer.name, share))
        if record.dst == peer.local and asked is not None and self.now_us - asked <= LPD_REPLY_WINDOW_US:
            return
        reply = Ping(peer.peer_id, record.dst.port, share)
        self.send(peer.name, record.dst, record.src, record.transport, encode_ping(reply, 20))

    # -- scripted events -------------------------------------------------------

    def _apply_event(self, ev) -> None:
        peer = self.peers[ev.peer]
        if ev.action == "depart":
            peer.online = False
            self.trace.append(f"{self.now_us / US:.6f} | {peer.name} | event | - | departs")
        elif ev.action == "reassign":
            old = peer.external
            peer.external = ev.external
            self.trace.append(f"{self.now_us / US:.6f} | {peer.name} | event | - | external {old} -> {ev.external}")

    # -- queries used by the investigator -----------------------------------------

    def find_peer(self, endpoint, segment: Optional[str] = None) -> Optional[SimPeer]:
        for p in self.peers.values():
            if p.online and segment is not None and p.segment == segment and p.local == endpoint:
                return p
        for p in self.peers.values():
            if p.online and p.external == endpoint:
                return p
        return None

    def share_label(self, share: bytes) -> str:
        return self.share_names.get(share, _short(share))


class SimTransport:
    """Investigator's view of the simulated network."""

    def __init__(self, network: Network, settle_s: float = 1.0):
        self.net = network
        self.me = network.investigator
        self.settle_us = int(settle_s * US)
        network.start()

    @property
    def peer_id(self) -> bytes:
        return self.me.peer_id

    @property
    def local(self):
        return self.me.local

    @property
    def external(self):
        return self.me.external

    @property
    def trackers(self) -> list:
        return list(self.net.trackers)

    @property
    def predefined_hosts(self) -> list:
        return list(self.me.options.predefined_hosts)

    def now(self) -> float:
        return self.net.now

    def join(self, share: bytes) -> None:
        self.me.shares.setdefault(share, KeyKind.READ_ONLY)

    def advance(self, seconds: float) -> None:
        self.net.run(seconds)

    def _collect(self, sends, deadline_s: float, expect: Optional[int], accept) -> list:
        start = len(self.net.inbox)
        for src, dst, transport, payload in sends:
            self.net.send(INVESTIGATOR, src, dst, transport, payload)
        t0 = self.net.now_us
        limit = t0 + int(deadline_s * US)
        if expect is None:
            limit = min(limit, t0 + self.settle_us)

        def got():
            return [r for r in self.net.inbox[start:] if accept(r)]

        stop = (lambda: len(got()) >= expect) if expect else None
        self.net.run_until(limit, stop)
        return got()

    def request(self, dst, payload: bytes, transports=(Transport.UDP,), deadline_s: float = 30.0,
                expect: Optional[int] = None) -> list:
        peer = self.net.find_peer(dst, self.me.segment)
        on_lan = peer is not None and peer.segment == self.me.segment and peer.local == dst
        src = self.me.local if on_lan else self.me.external
        sends = [(src, dst, t, payload) for t in transports]
        return self._collect(sends, deadline_s, expect, lambda r: r.src == dst)

    def multicast(self, payload: bytes, deadline_s: float = 30.0) -> list:
        sends = [(self.me.local, self.net.lpd_group, Transport.UDP, payload)]
        return self._collect(sends, deadline_s, None, lambda r: r.dst == self.me.local)

    def dht_lookup(self, target: bytes) -> list:
        if not self.net.dht_nodes:
            raise NoRoute("DHT disabled in this network")
        return dht_lookup(self.net.dht_nodes[:3], target, self.net.scenario.dht_k)

    def pex(self, endpoint, share: bytes) -> list:
        peer = self.net.find_peer(endpoint, self.me.segment)
        if peer is None or not peer.holds(share):
            return []
        self.join(share)
        self.net.prune_stale(peer)
        self.net.prune_stale(self.me)
        pex_exchange(self.me, peer, share, rng=self.net.rng)
        return list(self.me.known_peers.get(share, {}).values())

    def fetch_chunk(self, endpoint, file_digest: bytes, index: int) -> bytes:
        peer = self.net.find_peer(endpoint, self.me.segment)
        if peer is None:
            raise ChunkAbsent(f"no peer answers at {endpoint}")
        return peer_serve_chunk(peer, file_digest, index)

