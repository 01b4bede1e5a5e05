from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from ..errors import AccessDenied, ChunkAbsent
from ..keys import KeyKind
from ..wire import Dialect, Endpoint, PeerEntry

PEX_CAP = 50


@dataclass
class PeerOptions:
    use_tracker: bool = True
    use_lpd: bool = True
    use_relay: bool = True
    use_dht: bool = False
    predefined_hosts: list = field(default_factory=list)
    dialect: Dialect = Dialect.V14
    # Share joined through a limited-use link or with approval required.
    requires_approval: bool = False


@dataclass(eq=False)
class SimPeer:
    name: str
    peer_id: bytes
    external: Endpoint
    local: Endpoint
    segment: str
    shares: dict = field(default_factory=dict)        # share id -> KeyKind
    chunk_store: dict = field(default_factory=dict)   # (file digest, index) -> bytes
    options: PeerOptions = field(default_factory=PeerOptions)
    online: bool = True
    known_peers: dict = field(default_factory=dict)   # share id -> {peer id: PeerEntry}

    def entry(self) -> PeerEntry:
        return PeerEntry(addr=self.external, local_addr=self.local, peer_id=self.peer_id)

    def holds(self, share: bytes) -> bool:
        return share in self.shares

    def can_write(self, share: bytes) -> bool:
        return self.shares.get(share) in (KeyKind.READ_WRITE, KeyKind.ENCRYPTED_READ_WRITE)

    def learn(self, share: bytes, entry: PeerEntry) -> None:
        if entry.peer_id == self.peer_id:
            return
        self.known_peers.setdefault(share, {})[entry.peer_id] = entry


def pex_exchange(a: SimPeer, b: SimPeer, share: bytes, cap: int = PEX_CAP,
                 rng: Optional[random.Random] = None) -> tuple:
    """Each side hands the other at most ``cap`` of its known peers for ``share``."""
    if not (a.holds(share) and b.holds(share)):
        raise ValueError("both peers must hold the share to exchange peers")
    rng = rng or random.Random(0)

    def offer(p: SimPeer) -> list:
        entries = sorted(p.known_peers.get(share, {}).values(), key=lambda e: e.peer_id)
        if len(entries) > cap:
            entries = rng.sample(entries, cap)
        return entries

    from_a, from_b = offer(a), offer(b)
    for e in from_b:
        a.learn(share, e)
    for e in from_a:
        b.learn(share, e)
    return set(a.known_peers.get(share, {})), set(b.known_peers.get(share, {}))


def peer_serve_chunk(p: SimPeer, file_digest: bytes, index: int) -> bytes:
    if p.options.requires_approval:
        raise AccessDenied(f"{p.name} requires owner approval")
    try:
        return p.chunk_store[(file_digest, index)]
    except KeyError:
        raise ChunkAbsent(f"{p.name} lacks chunk {index} of {file_digest.hex()[:12]}") from None
