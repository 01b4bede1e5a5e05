"""Tracker registry: every ``get_peers`` both registers and queries."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from ..keys import share32_from
from ..wire import Endpoint, GetPeers, PeerEntry, PeersResponse

ANNOUNCE_INTERVAL = 600.0


@dataclass
class Registration:
    entry: PeerEntry
    last_seen: float


@dataclass
class TrackerState:
    announce_interval: float = ANNOUNCE_INTERVAL
    registrations: dict = field(default_factory=dict)  # share id -> [Registration]
    known_shares: list = field(default_factory=list)

    @property
    def expiry_horizon(self) -> float:
        # One missed announce is tolerated.
        return 2 * self.announce_interval

    def live_entries(self, share: bytes) -> list:
        return [r.entry for r in self.registrations.get(share, [])]


def resolve_share(state: TrackerState, msg: GetPeers) -> bytes:
    """Map the request's share field onto a 20-byte registry key.

    A 32-byte id is matched against every share the tracker has seen; one it
    cannot place is filed under its own SHA-1 so repeat requests still meet.
    """
    share = msg.share_id
    if len(share) == 20:
        if share not in state.known_shares:
            state.known_shares.append(share)
        return share
    for known in state.known_shares:
        if share32_from(known, msg.local_addr.ip, msg.local_addr.port) == share:
            return known
    return hashlib.sha1(share).digest()


def tracker_expire(state: TrackerState, now: float) -> None:
    horizon = state.expiry_horizon
    for share in list(state.registrations):
        kept = [r for r in state.registrations[share] if now - r.last_seen <= horizon]
        if kept:
            state.registrations[share] = kept
        else:
            del state.registrations[share]


def tracker_handle_get_peers(state: TrackerState, msg: GetPeers, observed_external: Endpoint,
                             now: float) -> PeersResponse:
    tracker_expire(state, now)
    share = resolve_share(state, msg)
    entry = PeerEntry(addr=observed_external, local_addr=msg.local_addr, peer_id=msg.peer_id)
    regs = state.registrations.setdefault(share, [])
    for reg in regs:
        if reg.entry.peer_id == msg.peer_id:
            reg.entry = entry
            reg.last_seen = now
            break
    else:
        regs.append(Registration(entry, now))
    return PeersResponse(
        external_addr=observed_external,
        peers=tuple(r.entry for r in regs),
        share_id=share,
        time=int(now),
    )
