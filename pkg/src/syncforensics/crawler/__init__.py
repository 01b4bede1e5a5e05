"""Investigation pipeline: identify, enumerate, analyse, geolocate, recover."""

from .analysis import detect_findings, diff_snapshots, is_ip_reallocation, is_nat_shared
from .discovery import DEFAULT_DEADLINE_S, derive_lookup_hash, enumerate_peers, lookup_input_kind
from .geo import CsvGeoProvider, GeoProvider, geolocate, open_provider
from .model import (
    ALL_SOURCES,
    ChurnReport,
    FileRecovery,
    Finding,
    FindingKind,
    GeoRecord,
    PeerRecord,
    PeerSource,
    RecoveryStatus,
    Snapshot,
    merge_records,
)
from .report import STEP_NAMES, InvestigationReport, build_report
from .retrieval import retrieve_content
