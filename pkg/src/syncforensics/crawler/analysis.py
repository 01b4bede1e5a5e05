"""Churn between snapshots and NAT / address-reallocation heuristics."""

from __future__ import annotations

from collections import defaultdict
from typing import Optional

from ..errors import ShareMismatch
from .model import ChurnReport, Finding, FindingKind, Snapshot


def diff_snapshots(s1: Snapshot, s2: Snapshot) -> ChurnReport:
    """Churn is the fraction of the first snapshot's peers missing from the second."""
    if s1.share != s2.share:
        raise ShareMismatch(f"snapshots cover different shares: {s1.share.hex()} vs {s2.share.hex()}")
    a, b = s1.peer_ids, s2.peer_ids
    departed, joined, retained = a - b, b - a, a & b
    rate = len(departed) / len(a) if a else 0.0
    return ChurnReport(frozenset(departed), frozenset(joined), frozenset(retained), rate)


def _nat_groups(snapshot: Snapshot) -> list:
    by_ip = defaultdict(list)
    for r in snapshot.records:
        # a record whose local endpoint merely echoes the external one says nothing about NAT
        if r.local != r.external:
            by_ip[r.external.ip].append(r)
    groups = []
    for ip, recs in by_ip.items():
        # one record per distinct local endpoint behind this address
        distinct = {}
        for r in recs:
            distinct.setdefault(r.local, r)
        if len(distinct) >= 2:
            groups.append((ip, tuple(sorted(distinct.values(), key=lambda r: (r.local.pack(), r.peer_id)))))
    return groups


def is_nat_shared(evidence) -> bool:
    ips = {r.external.ip for r in evidence}
    locals_ = [r.local for r in evidence]
    return len(evidence) >= 2 and len(ips) == 1 and len(set(locals_)) == len(locals_)


def is_ip_reallocation(evidence) -> bool:
    if len(evidence) != 2:
        return False
    a, b = evidence
    return a.peer_id == b.peer_id and a.local == b.local and a.external.ip != b.external.ip


def detect_findings(s1: Snapshot, s2: Optional[Snapshot] = None) -> list:
    """NAT sharing within each snapshot, address reallocation across the two.

    A NAT group seen in both snapshots (same address, same peers) is reported
    once, citing the earlier sighting.
    """
    findings = []
    seen_nat = set()
    for snap in (s1, s2) if s2 is not None else (s1,):
        for ip, evidence in _nat_groups(snap):
            ident = (ip, frozenset(r.peer_id for r in evidence))
            if ident in seen_nat:
                continue
            seen_nat.add(ident)
            findings.append(Finding(
                FindingKind.NAT_SHARED, evidence,
                f"{len(evidence)} distinct local endpoints share external address {ip}",
            ))
    if s2 is not None:
        before = {(r.peer_id, r.local): r for r in s1.records}
        for r2 in s2.records:
            r1 = before.get((r2.peer_id, r2.local))
            if r1 is not None and r1.external.ip != r2.external.ip:
                findings.append(Finding(
                    FindingKind.IP_REALLOCATION, (r1, r2),
                    f"peer {r2.peer_id.hex()} kept local endpoint {r2.local} while its external "
                    f"address moved from {r1.external.ip} to {r2.external.ip}",
                ))
    return findings
