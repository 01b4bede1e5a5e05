"""Scenario configuration.

A scenario is a JSON document::

    {
      "name": "demo", "seed": 7, "epoch": "2014-09-07T00:00:00Z",
      "announce_interval": 600, "lpd_interval": 60,
      "trackers": ["54.225.100.8:3000"], "relays": ["67.215.229.106:3000"],
      "dht": {"nodes": 32, "k": 8},
      "shares": {"movies": {"key": "BKV273YUFMWILMESLRDVLI5NHMWO3OCS7"}},
      "files": [{"name": "a.bin", "share": "movies", "size": 4096, "chunk_size": 512}],
      "peers": [{"name": "p01", "external": "203.0.113.5:41000",
                 "local": "192.168.1.10:41000", "segment": "home",
                 "shares": ["movies"], "use_lpd": false,
                 "chunks": {"a.bin": "all"}, "corrupt": {"a.bin": [3]}}],
      "relay_sessions": [{"a": "p01", "b": "p02", "share": "movies", "at": 5}],
      "events": [{"at": 3600, "peer": "p01", "action": "depart"},
                 {"at": 3600, "peer": "p02", "action": "reassign",
                  "external": "198.51.100.9:41000"}],
      "investigator": {"segment": "home", "local": "192.168.1.99:3838",
                       "external": "203.0.113.99:3838", "predefined_hosts": []}
    }

Share entries accept ``key`` (an access key), ``share_id`` (40 hex chars) or
nothing, in which case a read-write key is generated from the seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional

from ..content import FileManifest, split_chunks
from ..errors import ConfigInvalid, WrongWidth
from ..keys import AccessKey, KeyKind, ShareId, generate_rw_key, share_id_from_key
from ..wire import Dialect, Endpoint

DEFAULT_TRACKERS = ("54.225.100.8:3000", "54.225.92.50:3000", "54.225.196.38:3000")
DEFAULT_RELAYS = ("67.215.229.106:3000", "67.215.231.242:3000")
LPD_GROUP = "239.192.0.0:3838"
DEFAULT_EPOCH = "2014-09-07T00:00:00Z"

PRESETS = ("fig7", "enumeration10", "entry-point")


@dataclass
class ShareSpec:
    name: str
    share_id: ShareId
    key: Optional[AccessKey] = None


@dataclass
class FileSpec:
    share: str
    manifest: FileManifest
    content: bytes

    def chunks(self) -> list:
        return split_chunks(self.content, self.manifest.chunk_size)


@dataclass
class PeerSpec:
    name: str
    peer_id: bytes
    external: Endpoint
    local: Endpoint
    segment: str
    shares: dict                      # share name -> KeyKind
    use_tracker: bool = True
    use_lpd: bool = True
    use_relay: bool = True
    use_dht: bool = False
    predefined_hosts: list = field(default_factory=list)
    dialect: Dialect = Dialect.V14
    requires_approval: bool = False
    chunks: dict = field(default_factory=dict)   # file name -> sorted chunk indices
    corrupt: dict = field(default_factory=dict)  # file name -> sorted chunk indices


@dataclass
class RelayPlan:
    a: str
    b: str
    share: str
    at: float


@dataclass
class EventPlan:
    at: float
    peer: str
    action: str
    external: Optional[Endpoint] = None


@dataclass
class InvestigatorSpec:
    peer_id: bytes
    segment: str
    local: Endpoint
    external: Endpoint
    predefined_hosts: list = field(default_factory=list)


@dataclass
class Scenario:
    name: str
    seed: int
    epoch: float
    announce_interval: float
    lpd_interval: float
    pex_interval: float
    trackers: list
    relays: list
    lpd_group: Endpoint
    dht_nodes: int
    dht_k: int
    shares: dict       # name -> ShareSpec
    files: list        # [FileSpec]
    peers: list        # [PeerSpec]
    relay_sessions: list
    events: list
    investigator: InvestigatorSpec

    def share_by_id(self, share_id: bytes) -> Optional[ShareSpec]:
        for s in self.shares.values():
            if s.share_id == share_id:
                return s
        return None

    def manifests_for(self, share_id: bytes) -> list:
        spec = self.share_by_id(share_id)
        if spec is None:
            return []
        return [f.manifest for f in self.files if f.share == spec.name]


def parse_epoch(text) -> float:
    if isinstance(text, (int, float)):
        return float(text)
    dt = datetime.fromisoformat(str(text).replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


class _Problems:
    def __init__(self):
        self.items = []

    def add(self, where: str, why: str) -> None:
        self.items.append((where, why))

    def endpoint(self, where: str, text) -> Optional[Endpoint]:
        try:
            return Endpoint.parse(str(text))
        except WrongWidth as exc:
            self.add(where, str(exc))
            return None

    def number(self, where: str, value, positive=True):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.add(where, f"expected a number, got {value!r}")
            return None
        if positive and value < 0:
            self.add(where, "must not be negative")
            return None
        return value


_PEER_FLAGS = ("use_tracker", "use_lpd", "use_relay", "use_dht", "requires_approval")
_KIND_NAMES = {k.label: k for k in KeyKind} | {k.value: k for k in KeyKind if k.value}


def parse_scenario(cfg: dict) -> Scenario:
    """Validate a scenario document; every problem found is reported at once."""
    if not isinstance(cfg, dict):
        raise ConfigInvalid([("", "scenario must be a JSON object")])
    p = _Problems()
    seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        p.add("seed", "expected an integer")
        seed = 0
    rng = random.Random(seed)

    try:
        epoch = parse_epoch(cfg.get("epoch", DEFAULT_EPOCH))
    except ValueError as exc:
        p.add("epoch", str(exc))
        epoch = 0.0
    intervals = {}
    for key, default in (("announce_interval", 600), ("lpd_interval", 60), ("pex_interval", 600)):
        v = p.number(key, cfg.get(key, default))
        if v is not None and v <= 0:
            p.add(key, "must be positive")
        intervals[key] = v or default

    trackers = [e for i, t in enumerate(cfg.get("trackers", DEFAULT_TRACKERS))
                if (e := p.endpoint(f"trackers[{i}]", t))]
    relays = [e for i, t in enumerate(cfg.get("relays", DEFAULT_RELAYS))
              if (e := p.endpoint(f"relays[{i}]", t))]
    lpd_group = p.endpoint("lpd_group", cfg.get("lpd_group", LPD_GROUP)) or Endpoint.parse(LPD_GROUP)

    dht_cfg = cfg.get("dht", {}) or {}
    dht_nodes = p.number("dht.nodes", dht_cfg.get("nodes", 0)) or 0
    dht_k = p.number("dht.k", dht_cfg.get("k", 8)) or 8

    shares = {}
    for name, scfg in (cfg.get("shares") or {}).items():
        where = f"shares.{name}"
        scfg = scfg or {}
        key = None
        if "share_id" in scfg:
            try:
                share_id = ShareId.from_hex(scfg["share_id"])
            except ValueError:
                p.add(f"{where}.share_id", "expected 40 hex characters")
                continue
        else:
            if "key" in scfg:
                key = AccessKey.parse(str(scfg["key"]))
            else:
                key = generate_rw_key(rng.randbytes)
            share_id = share_id_from_key(key)
        shares[name] = ShareSpec(name, share_id, key)

    files = []
    file_names = set()
    for i, fcfg in enumerate(cfg.get("files") or []):
        where = f"files[{i}]"
        name = fcfg.get("name")
        if not name or name in file_names:
            p.add(f"{where}.name", "missing or duplicate file name")
            continue
        file_names.add(name)
        if fcfg.get("share") not in shares:
            p.add(f"{where}.share", f"unknown share {fcfg.get('share')!r}")
            continue
        size = p.number(f"{where}.size", fcfg.get("size", 4096))
        chunk = p.number(f"{where}.chunk_size", fcfg.get("chunk_size", 512))
        if not size or not chunk:
            p.add(where, "size and chunk_size must be positive")
            continue
        data = random.Random(f"{seed}/{name}").randbytes(int(size))
        files.append(FileSpec(fcfg["share"], FileManifest.for_content(name, data, int(chunk)), data))
    files_by_name = {f.manifest.name: f for f in files}

    peers = []
    seen_names, seen_ids = set(), set()
    for i, pc in enumerate(cfg.get("peers") or []):
        where = f"peers[{i}]"
        name = pc.get("name") or f"peer{i + 1:02d}"
        if name in seen_names or name == "investigator":
            p.add(f"{where}.name", f"duplicate or reserved peer name {name!r}")
        seen_names.add(name)
        peer_id = rng.randbytes(20)
        if "peer_id" in pc:
            try:
                peer_id = bytes.fromhex(pc["peer_id"])
                if len(peer_id) != 20:
                    raise ValueError
            except ValueError:
                p.add(f"{where}.peer_id", "expected 40 hex characters")
        if peer_id in seen_ids:
            p.add(f"{where}.peer_id", "peer id not unique")
        seen_ids.add(peer_id)
        external = p.endpoint(f"{where}.external", pc.get("external"))
        local = p.endpoint(f"{where}.local", pc.get("local", pc.get("external")))
        segment = pc.get("segment")
        if not segment or not isinstance(segment, str):
            p.add(f"{where}.segment", "every peer needs a LAN segment label")
        held = {}
        for s in pc.get("shares") or []:
            if isinstance(s, dict):
                sname, kind_name = s.get("share"), s.get("kind", "read-write")
            else:
                sname, kind_name = s, "read-write"
            if sname not in shares:
                p.add(f"{where}.shares", f"unknown share {sname!r}")
                continue
            kind = _KIND_NAMES.get(kind_name)
            if kind is None:
                p.add(f"{where}.shares", f"unknown key kind {kind_name!r}")
                continue
            held[sname] = kind
        flags = {}
        for flag in _PEER_FLAGS:
            v = pc.get(flag, flag != "use_dht" and flag != "requires_approval")
            if not isinstance(v, bool):
                p.add(f"{where}.{flag}", "expected true or false")
                v = False
            flags[flag] = v
        hosts = [e for j, h in enumerate(pc.get("predefined_hosts") or [])
                 if (e := p.endpoint(f"{where}.predefined_hosts[{j}]", h))]
        dialect = {"v14": Dialect.V14, "v20": Dialect.V20}.get(str(pc.get("dialect", "v14")).lower())
        if dialect is None:
            p.add(f"{where}.dialect", "expected v14 or v20")
            dialect = Dialect.V14
        chunks, corrupt = {}, {}
        for label, target in (("chunks", chunks), ("corrupt", corrupt)):
            for fname, sel in (pc.get(label) or {}).items():
                f = files_by_name.get(fname)
                if f is None:
                    p.add(f"{where}.{label}", f"unknown file {fname!r}")
                    continue
                if f.share not in held:
                    p.add(f"{where}.{label}", f"peer does not hold share of {fname!r}")
                    continue
                n = f.manifest.chunk_count
                if sel == "all":
                    target[fname] = list(range(n))
                elif isinstance(sel, list) and all(isinstance(x, int) and 0 <= x < n for x in sel):
                    target[fname] = sorted(set(sel))
                else:
                    p.add(f"{where}.{label}.{fname}", f"expected 'all' or indices in [0, {n})")
        for fname, idx in corrupt.items():
            chunks[fname] = sorted(set(chunks.get(fname, [])) | set(idx))
        if external and local and segment:
            peers.append(PeerSpec(
                name, peer_id, external, local, segment, held,
                predefined_hosts=hosts, dialect=dialect, chunks=chunks, corrupt=corrupt, **flags,
            ))

    ext_seen = {}
    for peer in peers:
        if peer.external in ext_seen:
            p.add(f"peers.{peer.name}.external", f"endpoint already used by {ext_seen[peer.external]}")
        ext_seen[peer.external] = peer.name
    lan_seen = {}
    for peer in peers:
        key = (peer.segment, peer.local)
        if key in lan_seen and lan_seen[key] != peer.name:
            p.add(f"peers.{peer.name}.local", f"local endpoint already used in segment {peer.segment}")
        lan_seen[key] = peer.name

    by_name = {peer.name: peer for peer in peers}
    relay_sessions = []
    for i, rc in enumerate(cfg.get("relay_sessions") or []):
        where = f"relay_sessions[{i}]"
        a, b, s = rc.get("a"), rc.get("b"), rc.get("share")
        if a not in by_name or b not in by_name or a == b:
            p.add(where, "a and b must name two different peers")
            continue
        if s not in by_name[a].shares or s not in by_name[b].shares:
            p.add(f"{where}.share", "both peers must hold the share")
            continue
        if not relays:
            p.add(where, "no relay server configured")
            continue
        at = p.number(f"{where}.at", rc.get("at", 1.0))
        relay_sessions.append(RelayPlan(a, b, s, at or 1.0))

    events = []
    for i, ec in enumerate(cfg.get("events") or []):
        where = f"events[{i}]"
        if ec.get("peer") not in by_name:
            p.add(f"{where}.peer", f"unknown peer {ec.get('peer')!r}")
            continue
        action = ec.get("action")
        at = p.number(f"{where}.at", ec.get("at"))
        if at is None:
            continue
        if action == "depart":
            events.append(EventPlan(at, ec["peer"], action))
        elif action == "reassign":
            ext = p.endpoint(f"{where}.external", ec.get("external"))
            if ext:
                events.append(EventPlan(at, ec["peer"], action, ext))
        else:
            p.add(f"{where}.action", "expected 'depart' or 'reassign'")

    ic = cfg.get("investigator") or {}
    inv_local = p.endpoint("investigator.local", ic.get("local", "10.99.0.2:3838"))
    inv_ext = p.endpoint("investigator.external", ic.get("external", "192.0.2.250:3838"))
    inv_hosts = [e for j, h in enumerate(ic.get("predefined_hosts") or [])
                 if (e := p.endpoint(f"investigator.predefined_hosts[{j}]", h))]
    inv_id = rng.randbytes(20)

    if p.items:
        raise ConfigInvalid(p.items)
    return Scenario(
        name=str(cfg.get("name", "scenario")),
        seed=seed,
        epoch=epoch,
        announce_interval=float(intervals["announce_interval"]),
        lpd_interval=float(intervals["lpd_interval"]),
        pex_interval=float(intervals["pex_interval"]),
        trackers=trackers,
        relays=relays,
        lpd_group=lpd_group,
        dht_nodes=int(dht_nodes),
        dht_k=int(dht_k),
        shares=shares,
        files=files,
        peers=peers,
        relay_sessions=relay_sessions,
        events=sorted(events, key=lambda e: e.at),
        investigator=InvestigatorSpec(inv_id, str(ic.get("segment", "investigator")), inv_local, inv_ext, inv_hosts),
    )


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigInvalid([("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")])
    text = resources.files("syncforensics.simnet").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def preset_geo_table(name: str) -> Optional[str]:
    """Path of the geolocation CSV shipped with a preset, if it has one."""
    if name not in PRESETS:
        return None
    res = resources.files("syncforensics.simnet").joinpath("presets", f"{name}-geo.csv")
    return str(res) if res.is_file() else None


def load_scenario_config(ref: str) -> dict:
    """``ref`` is a preset name or a path to a JSON scenario."""
    if ref in PRESETS:
        return preset_config(ref)
    path = Path(ref)
    text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid([("", f"{path}: invalid JSON ({exc})")]) from exc
