"""Command-line entry point: ``syncforensics {key,link,dissect,simulate,crawl}``.

Exit codes: 0 success, 2 usage error, 3 domain error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import random
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import __version__
from .capture import CaptureFormat, write_raw_frames
from .crawler import (
    ALL_SOURCES,
    PeerSource,
    Snapshot,
    build_report,
    derive_lookup_hash,
    detect_findings,
    diff_snapshots,
    enumerate_peers,
    geolocate,
    lookup_input_kind,
    open_provider,
    retrieve_content,
)
from .dissector import (
    DEFAULT_TRACKER_IPS,
    Dissector,
    classify_stream,
    extract_share_ids,
    read_capture,
    reconstruct_flows,
)
from .errors import ConfigInvalid, SyncError
from .keys import (
    AccessKey,
    classify_key,
    derive_one_time,
    derive_read_only,
    generate_rw_key,
    share_id_from_key,
)
from .simnet import Network, SimTransport, load_scenario_config, parse_scenario, preset_geo_table
from .simnet.scenario import PRESETS
from .wire import ShareLink, format_share_link, parse_share_link

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("syncforensics")


class UsageError(Exception):
    pass


# -- configuration ------------------------------------------------------------------


@dataclass
class CliConfig:
    tracker_endpoints: list = field(default_factory=lambda: [f"{ip}:3000" for ip in DEFAULT_TRACKER_IPS])
    lpd_port: int = 3838
    relay_port: int = 3000
    announce_interval_s: int = 600
    geo_csv_path: Optional[str] = None
    output_dir: str = "."
    seed: Optional[int] = None
    # which fields were set explicitly (file or flag), so scenario values win otherwise
    explicit: frozenset = frozenset()


_CONFIG_KEYS = ("tracker_endpoints", "lpd_port", "relay_port", "announce_interval_s",
                "geo_csv_path", "output_dir", "seed")


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    problems = []
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                problems.append((f"line {n}", "expected key = value"))
            elif key not in _CONFIG_KEYS:
                problems.append((key, "unknown setting"))
            else:
                values[key] = value.strip()
    if problems:
        raise ConfigInvalid(problems)
    return values


def build_config(file_values: dict, flags: dict) -> CliConfig:
    """Merge config-file strings with parsed flags; flags win."""
    cfg = CliConfig()
    problems = []
    merged = {**file_values, **{k: v for k, v in flags.items() if v is not None}}

    def to_int(key, value, lo, hi):
        try:
            v = int(value)
        except (TypeError, ValueError):
            problems.append((key, f"expected an integer, got {value!r}"))
            return None
        if not lo <= v <= hi:
            problems.append((key, f"{v} outside {lo}..{hi}"))
            return None
        return v

    for key, value in merged.items():
        if key == "tracker_endpoints":
            items = value if isinstance(value, list) else [v for v in str(value).split(",") if v.strip()]
            cfg.tracker_endpoints = [v.strip() for v in items]
        elif key in ("lpd_port", "relay_port"):
            v = to_int(key, value, 1, 65535)
            if v is not None:
                setattr(cfg, key, v)
        elif key == "announce_interval_s":
            v = to_int(key, value, 1, 2**31)
            if v is not None:
                cfg.announce_interval_s = v
        elif key == "seed":
            v = to_int(key, value, -(2**63), 2**64 - 1)
            if v is not None:
                cfg.seed = v
        elif key in ("geo_csv_path", "output_dir"):
            setattr(cfg, key, str(value))
    if problems:
        raise ConfigInvalid(problems)
    cfg.explicit = frozenset(merged)
    return cfg


def _stamp(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y%m%dT%H%M%SZ")


def _out_dir(cfg: CliConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path: Path, data) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)
    print(path)


def _load_network(ref: str, cfg: CliConfig) -> Network:
    doc = load_scenario_config(ref)
    if not isinstance(doc, dict):
        raise ConfigInvalid([("", "scenario must be a JSON object")])
    doc = dict(doc)
    if cfg.seed is not None:
        doc["seed"] = cfg.seed
    if "announce_interval_s" in cfg.explicit:
        doc["announce_interval"] = cfg.announce_interval_s
    if "tracker_endpoints" in cfg.explicit:
        doc["trackers"] = list(cfg.tracker_endpoints)
    if "lpd_port" in cfg.explicit:
        group = str(doc.get("lpd_group", "239.192.0.0:3838")).rpartition(":")[0]
        doc["lpd_group"] = f"{group}:{cfg.lpd_port}"
    return Network(parse_scenario(doc))


# -- key ------------------------------------------------------------------------------


def cmd_key(args, cfg: CliConfig) -> int:
    sub = args.key_cmd
    if sub == "gen":
        entropy = random.Random(cfg.seed).randbytes if cfg.seed is not None else None
        print(generate_rw_key(entropy))
        return EXIT_OK
    text = args.key.strip()
    if not text:
        raise UsageError("key must not be empty")
    if sub == "classify":
        print(classify_key(text).label)
    elif sub == "derive-ro":
        print(derive_read_only(AccessKey.parse(text)))
    elif sub == "derive-ot":
        print(derive_one_time(AccessKey.parse(text)))
    elif sub == "share-id":
        print(share_id_from_key(AccessKey.parse(text)).hex())
    return EXIT_OK


# -- link ------------------------------------------------------------------------------


_LINK_LABELS = (("f", "folder"), ("sz", "size"), ("s", "share"), ("i", "one-time-key"),
                ("p", "peer"), ("e", "expiry"), ("v", "version"))


def cmd_link(args, cfg: CliConfig) -> int:
    if args.link_cmd == "parse":
        link = parse_share_link(args.url)
        fields = link.as_dict()
        if args.json:
            doc = {k: v for k, v in fields.items() if v is not None}
            if link.extra:
                doc["extra"] = [list(p) for p in link.extra]
            print(json.dumps(doc, sort_keys=True))
        else:
            for key, label in _LINK_LABELS:
                if fields[key] is not None:
                    print(f"{key} ({label}): {fields[key]}")
            for key, value in link.extra:
                print(f"{key} (extra): {value}")
        return EXIT_OK
    if args.url:
        link = parse_share_link(args.url)
    else:
        if not (args.f and args.s and args.i):
            raise UsageError("link format needs a URL or at least --f, --s and --i")
        link = ShareLink(args.f, args.s, args.i, args.sz, args.p, args.e, args.v)
    print(format_share_link(link))
    return EXIT_OK


# -- dissect ----------------------------------------------------------------------------


def cmd_dissect(args, cfg: CliConfig) -> int:
    raw = Path(args.capture).read_bytes()
    tag = hashlib.sha256(raw).hexdigest()[:12]
    tracker_ips = tuple(ep.rpartition(":")[0] or ep for ep in cfg.tracker_endpoints)
    dissector = Dissector(tracker_ips, cfg.lpd_port, cfg.relay_port)
    packets = list(classify_stream(read_capture(args.capture, args.format), dissector))
    shares = extract_share_ids(packets)
    if args.kind:
        wanted = set(args.kind)
        packets = [p for p in packets if p.classification.kind.value in wanted or str(p.classification) in wanted]
    flows = reconstruct_flows(packets)
    if args.share:
        want = bytes.fromhex(args.share)
        flows = [f for f in flows if want in f.share_ids]
        shares = [s for s in shares if s.share_id == want]
    out = _out_dir(cfg)
    listing = "\n".join(["# index timestamp_us transport src -> dst classification hints length"]
                        + [p.listing_line() for p in packets]) + "\n"
    _write(out / f"dissect-{tag}.packets.txt", listing)
    _write(out / f"dissect-{tag}.flows.json",
           json.dumps([f.to_dict() for f in flows], indent=2, sort_keys=True) + "\n")
    _write(out / f"dissect-{tag}.shares.json",
           json.dumps([s.to_dict() for s in shares], indent=2, sort_keys=True) + "\n")
    print(f"packets: {len(packets)}")
    print(f"flows: {len(flows)}")
    for s in shares:
        print(f"share {s.share_id.hex()} first_seen={s.first_seen} packets={len(s.packets)}")
    return EXIT_OK


# -- simulate ----------------------------------------------------------------------------


def cmd_simulate(args, cfg: CliConfig) -> int:
    if args.duration < 0:
        raise UsageError("duration must not be negative")
    net = _load_network(args.scenario, cfg)
    net.run(args.duration)
    sc = net.scenario
    base = f"sim-{sc.name}-s{sc.seed}-{_stamp(sc.epoch)}-d{args.duration:g}"
    out = _out_dir(cfg)
    _write(out / f"{base}.trace.txt", "\n".join(net.trace) + "\n")
    path = out / f"{base}.spb"
    with open(path, "wb") as fh:
        write_raw_frames(net.capture, fh)
    print(path)
    return EXIT_OK


# -- crawl ------------------------------------------------------------------------------


def _parse_sources(text: str) -> frozenset:
    names = [t.strip() for t in text.split(",") if t.strip()]
    if not names:
        raise UsageError("at least one discovery source must be enabled")
    if names == ["all"]:
        return ALL_SOURCES
    try:
        return frozenset(PeerSource.parse(n) for n in names)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_crawl(args, cfg: CliConfig) -> int:
    sources = _parse_sources(args.sources)
    if args.snapshots < 1:
        raise UsageError("--snapshots must be at least 1")
    kind = lookup_input_kind(args.share)
    share = derive_lookup_hash(args.share)
    net = _load_network(args.scenario, cfg)
    transport = SimTransport(net)
    transport.advance(args.warmup)
    snapshots = []
    for n in range(args.snapshots):
        if n:
            transport.advance(args.interval)
        snapshots.append(enumerate_peers(share, sources, transport, args.deadline))

    churn = findings = None
    notes = []
    if len(snapshots) >= 2:
        churn = diff_snapshots(snapshots[0], snapshots[-1])
        findings = detect_findings(snapshots[0], snapshots[-1])
    else:
        findings = detect_findings(snapshots[0])
    geo_path = cfg.geo_csv_path or (preset_geo_table(args.scenario) if args.scenario in PRESETS else None)
    geo = []
    if geo_path:
        every = Snapshot(share, snapshots[0].taken_at, tuple(r for s in snapshots for r in s.records))
        geo = geolocate(every, open_provider("csv", geo_path))
    else:
        notes.append("geolocation skipped: no provider configured")
    manifests = net.scenario.manifests_for(share)
    recovery = retrieve_content(share, manifests, snapshots[-1], transport) if manifests else []
    if not manifests:
        notes.append("content recovery skipped: no manifest known for this share")

    report = build_report(snapshots, churn, findings, geo, recovery, lookup_input=args.share,
                          lookup_kind=kind, sources=sources, notes=notes)
    out = _out_dir(cfg)
    prefix = share.hex()[:12]
    for snap in snapshots:
        _write(out / f"snapshot-{prefix}-{_stamp(snap.taken_at)}.json", snap.dumps())
    stamp = _stamp(snapshots[0].taken_at)
    _write(out / f"report-{prefix}-{stamp}.json", report.to_json())
    _write(out / f"report-{prefix}-{stamp}.txt", report.to_text())
    for r in recovery:
        if r.data is not None and args.save_content:
            _write(out / f"content-{prefix}-{r.digest.hex()[:12]}-{Path(r.name).name}", r.data)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="key=value configuration file")
    g.add_argument("--output-dir", dest="output_dir")
    g.add_argument("--seed", type=int)
    g.add_argument("--tracker", dest="tracker_endpoints", action="append", metavar="IP:PORT",
                   help="tracker endpoint (repeatable)")
    g.add_argument("--lpd-port", dest="lpd_port", type=int)
    g.add_argument("--relay-port", dest="relay_port", type=int)
    g.add_argument("--announce-interval", dest="announce_interval_s", type=int)
    g.add_argument("--geo-csv", dest="geo_csv_path")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="syncforensics", description="BitTorrent Sync forensic toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    key = sub.add_parser("key", help="classify, generate and derive access keys")
    key_sub = key.add_subparsers(dest="key_cmd", required=True)
    for name, help_ in (("classify", "print the key's permission kind"),
                        ("derive-ro", "read-only key from a read-write key"),
                        ("derive-ot", "one-time key from a read-write or read-only key"),
                        ("share-id", "20-byte share id as hex")):
        sp = key_sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("key")
    key_sub.add_parser("gen", parents=[common], help="generate a read-write key")

    link = sub.add_parser("link", help="parse and format share links")
    link_sub = link.add_subparsers(dest="link_cmd", required=True)
    lp = link_sub.add_parser("parse", parents=[common])
    lp.add_argument("url")
    lp.add_argument("--json", action="store_true")
    lf = link_sub.add_parser("format", parents=[common], help="canonical form of a URL or of the given fields")
    lf.add_argument("url", nargs="?")
    for name in ("f", "sz", "s", "i", "p", "v"):
        lf.add_argument(f"--{name}")
    lf.add_argument("--e", type=int)

    d = sub.add_parser("dissect", parents=[common], help="classify a capture and summarise flows")
    d.add_argument("capture")
    d.add_argument("--format", choices=[f.value for f in CaptureFormat], required=True)
    d.add_argument("--kind", action="append", help="keep only packets of this classification")
    d.add_argument("--share", help="keep only flows carrying this 40-hex share id")

    s = sub.add_parser("simulate", parents=[common], help="run a scenario; write trace and capture")
    s.add_argument("scenario", help=f"preset ({', '.join(PRESETS)}) or JSON scenario path")
    s.add_argument("--duration", type=float, default=600.0, help="simulated seconds (default 600)")

    c = sub.add_parser("crawl", parents=[common], help="investigate a share against a simulated network")
    c.add_argument("share", help="access key, 40-hex share id, .db file name or share link")
    c.add_argument("--scenario", required=True)
    c.add_argument("--sources", default="all",
                   help="comma list of tracker,lpd,dht,pex,predefined (default all)")
    c.add_argument("--snapshots", type=int, default=1)
    c.add_argument("--interval", type=float, default=86400.0, help="seconds between snapshots")
    c.add_argument("--warmup", type=float, default=60.0, help="seconds to run before the first snapshot")
    c.add_argument("--deadline", type=float, default=30.0, help="per-source deadline in seconds")
    c.add_argument("--save-content", action="store_true", help="write recovered files")
    return parser


_COMMANDS = {"key": cmd_key, "link": cmd_link, "dissect": cmd_dissect, "simulate": cmd_simulate, "crawl": cmd_crawl}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        flags = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
        cfg = build_config(file_values, flags)
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigInvalid as exc:
        detail = "; ".join(f"{f}: {r}" for f, r in exc.problems)
        print(f"invalid configuration: {detail}", file=sys.stderr)
        return EXIT_DOMAIN
    except SyncError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
