"""Relay negotiation as seen by the relay server.

The observable sequence has eight steps. Only steps 1, 3 and 5 have known
payload layouts; the others carry opaque blobs and are checked for order
alone.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Optional, Union

from ..wire import RelayInit, RelayNonce


class RelayStep(enum.IntEnum):
    INIT = 1           # peer asks the relay to reach a remote peer
    ACK = 2            # relay acknowledges
    NONCE_A = 3        # peer supplies its nonce and share id
    COUNTERS = 4       # relay starts the session counters with the remote peer
    NONCE_B = 5        # relay forwards the remote nonce
    REMOTE_KEY = 6     # relay delivers the remote public key
    LOCAL_KEY = 7      # peer delivers its public key
    TRAFFIC = 8        # bridged, encrypted traffic


class RelayState(enum.Enum):
    NEW = "new"
    INIT = "init"
    ACKED = "acked"
    NONCE_RECEIVED_A = "nonce-received-a"
    COUNTERS_EXCHANGED = "counters-exchanged"
    NONCE_RECEIVED_B = "nonce-received-b"
    REMOTE_KEY_DELIVERED = "remote-key-delivered"
    KEYS_EXCHANGED = "keys-exchanged"
    BRIDGED = "bridged"
    FAILED = "failed"


_ORDER = [
    RelayState.NEW,
    RelayState.INIT,
    RelayState.ACKED,
    RelayState.NONCE_RECEIVED_A,
    RelayState.COUNTERS_EXCHANGED,
    RelayState.NONCE_RECEIVED_B,
    RelayState.REMOTE_KEY_DELIVERED,
    RelayState.KEYS_EXCHANGED,
    RelayState.BRIDGED,
]


@dataclass(frozen=True)
class RelayEvent:
    step: RelayStep
    payload: Union[RelayInit, RelayNonce, bytes] = b""


@dataclass(frozen=True)
class RelaySession:
    state: RelayState = RelayState.NEW
    peer_a: Optional[bytes] = None
    peer_b: Optional[bytes] = None
    nonce_a: Optional[bytes] = None
    nonce_b: Optional[bytes] = None
    key_a: Optional[bytes] = None
    key_b: Optional[bytes] = None
    share: Optional[bytes] = None
    violation: Optional[str] = None

    @property
    def expected_step(self) -> Optional[RelayStep]:
        if self.state in (RelayState.FAILED, RelayState.BRIDGED):
            return None
        return RelayStep(_ORDER.index(self.state) + 1)


def _fail(session: RelaySession, why: str) -> RelaySession:
    return dataclasses.replace(session, state=RelayState.FAILED, violation=why)


def relay_advance(session: RelaySession, event: RelayEvent) -> RelaySession:
    """Apply one observed step; anything out of order fails the session.

    A failed session is returned unchanged.
    """
    if session.state is RelayState.FAILED:
        return session
    expected = session.expected_step
    if expected is None or event.step != expected:
        want = expected.name if expected else "nothing"
        return _fail(session, f"step {event.step.name} while expecting {want}")
    nxt = _ORDER[_ORDER.index(session.state) + 1]
    p = event.payload
    changes = {"state": nxt}
    if event.step is RelayStep.INIT:
        if not isinstance(p, RelayInit):
            return _fail(session, "step 1 needs a relay init message")
        for name, value in (("peer_a", p.local_peer_id), ("peer_b", p.remote_peer_id)):
            if getattr(session, name) not in (None, value):
                return _fail(session, f"{name} does not match the session")
            changes[name] = value
    elif event.step in (RelayStep.NONCE_A, RelayStep.NONCE_B):
        if not isinstance(p, RelayNonce):
            return _fail(session, f"step {int(event.step)} needs a nonce message")
        if session.share is not None and p.share_id != session.share:
            return _fail(session, "nonce message names a different share")
        changes["share"] = p.share_id
        changes["nonce_a" if event.step is RelayStep.NONCE_A else "nonce_b"] = p.nonce
    elif event.step in (RelayStep.REMOTE_KEY, RelayStep.LOCAL_KEY):
        if not isinstance(p, bytes) or not p:
            return _fail(session, "key delivery carries no key blob")
        changes["key_b" if event.step is RelayStep.REMOTE_KEY else "key_a"] = p
    elif event.step is RelayStep.TRAFFIC:
        if None in (session.nonce_a, session.nonce_b, session.key_a, session.key_b):
            return _fail(session, "bridge attempted without both nonces and keys")
    return dataclasses.replace(session, **changes)


def run_script(events, session: Optional[RelaySession] = None) -> RelaySession:
    session = session or RelaySession()
    for ev in events:
        session = relay_advance(session, ev)
    return session
