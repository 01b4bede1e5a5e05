"""Reassemble shared files from chunks held by the enumerated peers."""

from __future__ import annotations

import hashlib
from typing import Iterable

from ..content import FileManifest
from ..errors import AccessDenied, SyncError
from .model import FileRecovery, RecoveryStatus, Snapshot


def _peers_in(snapshot: Snapshot) -> list:
    first = {}
    for r in snapshot.records:
        first.setdefault(r.peer_id, r)
    return [first[p] for p in sorted(first)]


def retrieve_content(share: bytes, manifests: Iterable[FileManifest], snapshot: Snapshot, transport) -> list:
    """Fetch every chunk round-robin across the snapshot's peers.

    Chunk ``i`` is first asked of peer ``i mod n``, then the following peers in
    turn. A peer that refuses with AccessDenied is not asked again.
    """
    peers = _peers_in(snapshot)
    results = []
    for m in manifests:
        denied = set()
        chunks, sources, missing = [], [], []
        for i in range(m.chunk_count):
            got = None
            for k in range(len(peers)):
                rec = peers[(i + k) % len(peers)]
                if rec.peer_id in denied:
                    continue
                try:
                    got = transport.fetch_chunk(rec.external, m.digest, i)
                except AccessDenied:
                    denied.add(rec.peer_id)
                    continue
                except SyncError:
                    continue
                sources.append(rec.peer_id)
                break
            if got is None:
                missing.append(i)
                sources.append(None)
            chunks.append(got)
        if missing:
            results.append(FileRecovery(m.name, m.digest, RecoveryStatus.INCOMPLETE, tuple(missing),
                                        None, tuple(sources), tuple(sorted(denied))))
            continue
        data = b"".join(chunks)
        ok = len(data) == m.size and hashlib.sha1(data).digest() == m.digest
        status = RecoveryStatus.COMPLETE_VERIFIED if ok else RecoveryStatus.DIGEST_MISMATCH
        results.append(FileRecovery(m.name, m.digest, status, (), data, tuple(sources), tuple(sorted(denied))))
    return results
