"""Investigation report: five methodology steps plus a peer table."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .model import ChurnReport, iso_time

STEP_NAMES = (
    "identification-of-content",
    "identification-of-lookup-hash",
    "network-crawl",
    "peer-analysis",
    "content-recovery",
)


@dataclass(frozen=True)
class InvestigationReport:
    snapshots: tuple
    churn: Optional[ChurnReport] = None
    findings: tuple = ()
    geo: tuple = ()
    recovery: tuple = ()
    lookup_input: Optional[str] = None
    lookup_kind: Optional[str] = None
    sources: tuple = ()
    notes: tuple = field(default=())

    def to_dict(self) -> dict:
        share = self.snapshots[0].share.hex()
        steps = {
            STEP_NAMES[0]: {"input": self.lookup_input, "input_kind": self.lookup_kind,
                            "provenance": "investigator-supplied input"},
            STEP_NAMES[1]: {"share": share, "provenance": "derive_lookup_hash"},
            STEP_NAMES[2]: {
                "sources": sorted(s.value if hasattr(s, "value") else str(s) for s in self.sources),
                "snapshots": [s.to_dict() for s in self.snapshots],
                "peer_counts": [len(s.peer_ids) for s in self.snapshots],
                "provenance": "enumerate_peers",
            },
            STEP_NAMES[3]: {
                "churn": self.churn.to_dict() if self.churn else None,
                "findings": [f.to_dict() for f in self.findings],
                "geolocation": [g.to_dict() for g in self.geo],
                "provenance": "diff_snapshots, detect_findings, geolocate",
            },
            STEP_NAMES[4]: {"files": [r.to_dict() for r in self.recovery], "provenance": "retrieve_content"},
        }
        return {"share": share, "steps": steps, "notes": list(self.notes)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def peer_table(self, index: int = -1) -> str:
        """Text table of one snapshot: PeerID, external IP:port, local IP:port."""
        snap = self.snapshots[index]
        rows = [("PeerID", "External IP:Port", "Local IP:Port")]
        rows += [(r.peer_id.hex(), str(r.external), str(r.local)) for r in snap.records]
        widths = [max(len(row[i]) for row in rows) for i in range(3)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def to_text(self) -> str:
        out = [f"Share {self.snapshots[0].share.hex()}"]
        if self.lookup_input:
            out.append(f"Lookup input ({self.lookup_kind}): {self.lookup_input}")
        for n, snap in enumerate(self.snapshots, 1):
            out += ["", f"Snapshot {n} at {iso_time(snap.taken_at)}: {len(snap.peer_ids)} peers",
                    self.peer_table(n - 1)]
        if self.churn is not None:
            c = self.churn
            out += ["", f"Churn {c.rate_text}: {len(c.departed)} departed, {len(c.joined)} joined, "
                        f"{len(c.retained)} retained"]
        if self.findings:
            out.append("")
            out += [f"{f.kind.value}: {f.rationale}" for f in self.findings]
        if self.geo:
            out.append("")
            out += [f"{g.ip}  {g.country}  {g.city}" for g in self.geo]
        if self.recovery:
            out.append("")
            for r in self.recovery:
                extra = f" missing {list(r.missing)}" if r.missing else ""
                out.append(f"{r.name}: {r.status.value}{extra}")
        return "\n".join(out) + "\n"


def build_report(snapshots, churn=None, findings=(), geo=(), recovery=(), **meta) -> InvestigationReport:
    snapshots = tuple(snapshots)
    if not snapshots:
        raise ValueError("a report needs at least one snapshot")
    return InvestigationReport(snapshots, churn, tuple(findings), tuple(geo), tuple(recovery),
                               meta.get("lookup_input"), meta.get("lookup_kind"),
                               tuple(meta.get("sources", ())), tuple(meta.get("notes", ())))
