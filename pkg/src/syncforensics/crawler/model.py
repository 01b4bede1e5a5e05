"""Records produced by a crawl, and the snapshot file format."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional

from ..keys import PeerId, ShareId
from ..wire import Endpoint


class PeerSource(enum.Enum):
    TRACKER = "Tracker"
    LPD = "LPD"
    DHT = "DHT"
    PEX = "PEX"
    PREDEFINED = "Predefined"

    @classmethod
    def parse(cls, text: str) -> "PeerSource":
        for s in cls:
            if text.lower() == s.value.lower():
                return s
        raise ValueError(f"unknown discovery source {text!r}")


ALL_SOURCES = frozenset(PeerSource)
_SOURCE_RANK = {s: i for i, s in enumerate(PeerSource)}


def iso_time(ts: float) -> str:
    """Unix seconds to ISO-8601 UTC with a ``Z`` suffix."""
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    spec = "microseconds" if dt.microsecond else "seconds"
    return dt.isoformat(timespec=spec).replace("+00:00", "Z")


def parse_iso_time(text: str) -> float:
    return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()


@dataclass(frozen=True)
class PeerRecord:
    peer_id: bytes
    external: Endpoint
    local: Endpoint
    source: PeerSource
    observed_at: float

    def __post_init__(self):
        object.__setattr__(self, "peer_id", PeerId(self.peer_id))

    @property
    def key(self) -> tuple:
        return (self.peer_id, self.external, self.local)

    def to_dict(self) -> dict:
        return {
            "peer_id": self.peer_id.hex(),
            "external": str(self.external),
            "local": str(self.local),
            "source": self.source.value,
            "observed_at": iso_time(self.observed_at),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PeerRecord":
        return cls(
            bytes.fromhex(d["peer_id"]),
            Endpoint.parse(d["external"]),
            Endpoint.parse(d["local"]),
            PeerSource.parse(d["source"]),
            parse_iso_time(d["observed_at"]),
        )


def _sort_key(r: PeerRecord) -> tuple:
    return (r.peer_id, r.external.pack(), r.local.pack())


def merge_records(records: Iterable[PeerRecord]) -> tuple:
    """Deduplicate on (peer_id, external, local) and sort.

    When several sources saw the same record the earliest observation wins,
    ties broken by a fixed source order, so the result does not depend on the
    order sources were queried in.
    """
    best: dict = {}
    for r in records:
        cur = best.get(r.key)
        if cur is None or (r.observed_at, _SOURCE_RANK[r.source]) < (cur.observed_at, _SOURCE_RANK[cur.source]):
            best[r.key] = r
    return tuple(sorted(best.values(), key=_sort_key))


@dataclass(frozen=True)
class Snapshot:
    share: bytes
    taken_at: float
    records: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "share", ShareId(self.share))
        object.__setattr__(self, "records", merge_records(self.records))

    @property
    def peer_ids(self) -> frozenset:
        return frozenset(r.peer_id for r in self.records)

    def to_dict(self) -> dict:
        return {
            "share": self.share.hex(),
            "taken_at": iso_time(self.taken_at),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Snapshot":
        return cls(bytes.fromhex(d["share"]), parse_iso_time(d["taken_at"]),
                   tuple(PeerRecord.from_dict(r) for r in d["records"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Snapshot":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ChurnReport:
    departed: frozenset
    joined: frozenset
    retained: frozenset
    churn_rate: float

    @property
    def rate_text(self) -> str:
        return f"{self.churn_rate * 100:.1f}%"

    def to_dict(self) -> dict:
        return {
            "departed": sorted(p.hex() for p in self.departed),
            "joined": sorted(p.hex() for p in self.joined),
            "retained": sorted(p.hex() for p in self.retained),
            "churn_rate": self.rate_text,
        }


class FindingKind(enum.Enum):
    NAT_SHARED = "NatShared"
    IP_REALLOCATION = "IpReallocation"


@dataclass(frozen=True)
class Finding:
    kind: FindingKind
    evidence: tuple
    rationale: str

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "rationale": self.rationale,
                "evidence": [r.to_dict() for r in self.evidence]}


@dataclass(frozen=True)
class GeoRecord:
    ip: str
    country: str
    city: str
    provider: str

    def to_dict(self) -> dict:
        return {"ip": self.ip, "country": self.country, "city": self.city, "provider": self.provider}


class RecoveryStatus(enum.Enum):
    COMPLETE_VERIFIED = "Complete+Verified"
    INCOMPLETE = "Incomplete"
    DIGEST_MISMATCH = "DigestMismatch"


@dataclass(frozen=True)
class FileRecovery:
    name: str
    digest: bytes
    status: RecoveryStatus
    missing: tuple = ()
    data: Optional[bytes] = field(default=None, repr=False)
    chunk_sources: tuple = ()   # peer id per chunk index, None where missing
    denied: tuple = ()          # peers that refused with AccessDenied

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "digest": self.digest.hex(),
            "status": self.status.value,
            "missing": list(self.missing),
            "chunk_sources": [p.hex() if p else None for p in self.chunk_sources],
            "access_denied": sorted(p.hex() for p in self.denied),
        }
