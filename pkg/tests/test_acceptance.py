"""The twelve acceptance criteria, one test each.

Every test prints a single ``[criterion N] PASS|FAIL ...`` line (shown even
without ``-s``) before asserting.
"""

import copy
import hashlib
import itertools
import json
import random
import time
from pathlib import Path

import pytest

from syncforensics.bencode import BDict, INT64_MAX, INT64_MIN, decode_exact, encode
from syncforensics.capture import Transport
from syncforensics.cli import main
from syncforensics.crawler import (
    ALL_SOURCES,
    FindingKind,
    PeerSource,
    RecoveryStatus,
    build_report,
    detect_findings,
    diff_snapshots,
    enumerate_peers,
    retrieve_content,
)
from syncforensics.errors import DecodeError
from syncforensics.keys import (
    AccessKey,
    KeyKind,
    classify_key,
    derive_one_time,
    derive_read_only,
    generate_rw_key,
)
from syncforensics.simnet import (
    RelayState,
    SimTransport,
    build_dht,
    build_scenario,
    dht_announce,
    dht_find_closest,
    dht_lookup,
    dht_xor_distance,
    parse_scenario,
    preset_config,
    run_script,
    TrackerState,
    tracker_handle_get_peers,
)
from syncforensics.wire import (
    MAGIC,
    Dialect,
    Endpoint,
    GetPeers,
    PeerEntry,
    PeersResponse,
    Ping,
    RelayInit,
    RelayNonce,
    UtpHeader,
    UtpPacketType,
    decode_get_peers,
    decode_peers_response,
    decode_ping,
    decode_relay_message,
    decode_utp_header,
    dissect_frame,
    encode_get_peers,
    encode_message,
    encode_ping,
    encode_utp_header,
    format_share_link,
    parse_share_link,
)
from test_simnet import good_script

WINHEX = ("https://link.getsync.com/#f=winhex&sz=35E5&s=XIQSFD2MCDPS2QKITWKJROJ2VUSV2YNA"
          "&i=CKKR3V2BBM7MXIOTPU3XWK55JBUFWG3EY&p=CALSNMDGCZZAUQXBXEIR6Q57UMTVOSFI&e=1431277452")
MOVIES_KEY = "BKV273YUFMWILMESLRDVLI5NHMWO3OCS7"
PLANTED = "bb63eb5b61969956e71273026f00a1deca464413"


@pytest.fixture
def verdict(capsys, request):
    """Call with (passed, detail); prints the criterion line and asserts."""
    number = request.node.get_closest_marker("criterion").args[0]

    def report(passed: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if passed else 'FAIL'} {detail}")
        assert passed, detail

    return report


criterion = pytest.mark.criterion


# -- 1: codec round-trips and fuzzing ------------------------------------------------------


def random_bvalue(rng: random.Random, depth: int = 0):
    roll = rng.random()
    if depth >= 3 or roll < 0.35:
        return rng.choice((rng.randint(-1000, 1000), rng.randint(INT64_MIN, INT64_MAX)))
    if roll < 0.7:
        return rng.randbytes(rng.randrange(12))
    if roll < 0.85:
        return [random_bvalue(rng, depth + 1) for _ in range(rng.randrange(4))]
    return BDict([(rng.randbytes(rng.randrange(1, 6)), random_bvalue(rng, depth + 1)) for _ in range(rng.randrange(4))])


def random_endpoint(rng):
    return Endpoint.unpack(rng.randbytes(6))


def random_message(rng: random.Random):
    r = rng.randrange(5)
    if r == 0:
        share = rng.randbytes(rng.choice((20, 32)))
        return GetPeers(random_endpoint(rng), rng.randrange(65536), rng.randbytes(20), share)
    if r == 1:
        peers = tuple(PeerEntry(random_endpoint(rng), random_endpoint(rng), rng.randbytes(20))
                      for _ in range(rng.randrange(5)))
        return PeersResponse(random_endpoint(rng), peers, rng.randbytes(20), rng.randrange(2**40))
    if r == 2:
        if rng.random() < 0.5:
            return Ping(rng.randbytes(20), None, rng.randbytes(32))
        return Ping(rng.randbytes(20), rng.randrange(65536), rng.randbytes(20))
    if r == 3:
        return RelayInit(rng.randbytes(20), rng.randbytes(20), rng.randbytes(4), rng.randbytes(4))
    return RelayNonce(rng.randbytes(16), rng.randbytes(20), rng.randbytes(4))


FUZZ_TARGETS = (decode_exact, decode_utp_header, decode_get_peers, decode_peers_response, decode_ping,
                decode_relay_message)


@criterion(1)
def test_codec_round_trip_and_fuzz(verdict):
    rng = random.Random(1)
    t0 = time.perf_counter()
    bad_values = 0
    for _ in range(100_000):
        v = random_bvalue(rng)
        raw = encode(v)
        if encode(decode_exact(raw)) != raw:
            bad_values += 1
    bad_messages = 0
    seeds = []
    for _ in range(10_000):
        m = random_message(rng)
        raw = encode_message(m)
        seeds.append(raw)
        if dissect_frame(raw)[1] != m:
            bad_messages += 1
    crashes = 0
    for n in range(100_000):
        if n % 2:
            data = rng.randbytes(rng.randrange(64))
        else:
            data = bytearray(rng.choice(seeds))
            for _ in range(rng.randint(1, 3)):
                data[rng.randrange(len(data))] = rng.randrange(256)
            data = bytes(data[: rng.randrange(len(data) + 1)])
        try:
            dissect_frame(data)
        except Exception:
            crashes += 1
        try:
            FUZZ_TARGETS[n % len(FUZZ_TARGETS)](data)
        except DecodeError:
            pass
        except Exception:
            crashes += 1
    elapsed = time.perf_counter() - t0
    ok = bad_values == 0 and bad_messages == 0 and crashes == 0 and elapsed < 60
    verdict(ok, f"1e5 values ({bad_values} bad), 1e4 messages ({bad_messages} bad), "
                f"1e5 fuzz inputs ({crashes} untyped failures) in {elapsed:.1f}s (< 60s)")


# -- 2: golden bytes ----------------------------------------------------------------------------


@criterion(2)
def test_golden_bytes(verdict):
    firsts = [encode_utp_header(UtpHeader(t))[0] for t in
              (UtpPacketType.DATA, UtpPacketType.FIN, UtpPacketType.STATE, UtpPacketType.RST, UtpPacketType.SYN)]
    la = Endpoint("192.168.1.10", 3369)
    v14 = encode_get_peers(GetPeers(la, 3369, b"P" * 20, b"S" * 20), Dialect.V14)
    v20 = encode_get_peers(GetPeers(la, 3369, b"P" * 20, b"W" * 32), Dialect.V20)
    ping = encode_ping(Ping(b"P" * 20, None, b"W" * 32), 32)
    expected_ping = MAGIC + b"d1:m4:PING4:peer20:" + b"P" * 20 + b"5:share32:" + b"W" * 32 + b"e"
    ok = (firsts == [0x01, 0x11, 0x21, 0x31, 0x41]
          and b"9:get_peers" in v14 and b"5:share20:" in v14 and b"5:share32:" not in v14
          and b"9:get_peers" in v20 and b"5:share32:" in v20
          and ping == expected_ping)
    verdict(ok, f"uTP first bytes {[hex(b) for b in firsts]}, get_peers templates, multicast ping layout")


# -- 3: share links -------------------------------------------------------------------------------


@criterion(3)
def test_share_links(verdict):
    link = parse_share_link(WINHEX)
    six = (link.folder_name, link.size_hint, link.share_id_b32, link.one_time_key, link.server_peer_id, link.expiry)
    want = ("winhex", "35E5", "XIQSFD2MCDPS2QKITWKJROJ2VUSV2YNA", "CKKR3V2BBM7MXIOTPU3XWK55JBUFWG3EY",
            "CALSNMDGCZZAUQXBXEIR6Q57UMTVOSFI", 1431277452)
    minimal = parse_share_link("https://link.getsync.com/#f=docs&s=XIQSFD2MCDPS2QKITWKJROJ2VUSV2YNA&i=CKKR")
    ok = (six == want and format_share_link(link) == WINHEX
          and (minimal.folder_name, minimal.share_id_b32, minimal.one_time_key) ==
          ("docs", "XIQSFD2MCDPS2QKITWKJROJ2VUSV2YNA", "CKKR")
          and parse_share_link(format_share_link(minimal)) == minimal)
    verdict(ok, f"winhex fields {six}; minimal link and canonical round-trip")


# -- 4: keys ----------------------------------------------------------------------------------------


@criterion(4)
def test_key_handling(verdict):
    rng = random.Random(4)
    generated_ok = True
    for _ in range(200):
        k = generate_rw_key(rng.randbytes)
        generated_ok &= len(k.display) == 33 and classify_key(k.display) is KeyKind.READ_WRITE
        ro = derive_read_only(k)
        generated_ok &= ro == derive_read_only(k) and classify_key(ro.display) is KeyKind.READ_ONLY
        ot = derive_one_time(k)
        generated_ok &= ot == derive_one_time(ro) and classify_key(ot.display) is KeyKind.ONE_TIME
    ok = classify_key(MOVIES_KEY) is KeyKind.READ_ONLY and generated_ok
    verdict(ok, f"{MOVIES_KEY} -> {classify_key(MOVIES_KEY).label}; 200 generated keys classify and derive consistently")


# -- 5: enumeration completeness -------------------------------------------------------------------


def visible_peers(cfg: dict, sources) -> set:
    """Brute-force expected set straight from the scenario document."""
    inv = cfg["investigator"]
    hosts = set(inv.get("predefined_hosts", []))
    out = set()
    for p in cfg["peers"]:
        held = {s if isinstance(s, str) else s["share"] for s in p.get("shares", [])}
        if "evidence" not in held:
            continue
        if PeerSource.TRACKER in sources and p.get("use_tracker", True) and cfg.get("trackers", [1]):
            out.add(p["name"])
        if PeerSource.LPD in sources and p.get("use_lpd", True) and p["segment"] == inv["segment"]:
            out.add(p["name"])
        if PeerSource.PREDEFINED in sources and p["external"] in hosts:
            out.add(p["name"])
    return out


@criterion(5)
def test_enumeration_completeness(verdict):
    cfg = preset_config("enumeration10")
    t0 = time.perf_counter()
    got = {}
    for label, sources in (("all", ALL_SOURCES), ("tracker", frozenset({PeerSource.TRACKER}))):
        net = build_scenario(cfg)
        transport = SimTransport(net)
        transport.advance(60)
        share = net.scenario.shares["evidence"].share_id
        names = {p.peer_id: p.name for p in net.peers.values()}
        snap = enumerate_peers(share, sources, transport)
        got[label] = ({names[p] for p in snap.peer_ids}, visible_peers(cfg, sources))
    elapsed = time.perf_counter() - t0
    ok = (all(a == b for a, b in got.values()) and len(got["all"][0]) == 10
          and got["tracker"][0] < got["all"][0] and elapsed < 5)
    verdict(ok, f"all sources {len(got['all'][0])}/10, tracker only {sorted(got['tracker'][0])} "
                f"in {elapsed:.2f}s (< 5s)")


# -- 6: tracker ---------------------------------------------------------------------------------------


@criterion(6)
def test_tracker_semantics(verdict):
    share = hashlib.sha1(b"t").digest()

    def ask(state, n, now):
        msg = GetPeers(Endpoint(f"192.168.0.{n}", 3000), 3000, bytes([n]) * 20, share)
        return tracker_handle_get_peers(state, msg, Endpoint(f"203.0.113.{n}", 3000), now)

    state = TrackerState(announce_interval=600)
    first = ask(state, 1, 0.0)
    first_ok = len(first.peers) == 1 and first.peers[0].peer_id == b"\x01" * 20
    counts = {}
    for gap in (1199.0, 1201.0):
        st = TrackerState(announce_interval=600)
        ask(st, 1, 0.0)
        counts[gap] = len(ask(st, 2, gap).peers)
    ok = first_ok and counts == {1199.0: 2, 1201.0: 1}
    verdict(ok, f"first announce -> {len(first.peers)} entry (requester); "
                f"after 1199s {counts[1199.0] - 1} retained, after 1201s {counts[1201.0] - 1} retained")


# -- 7: relay ---------------------------------------------------------------------------------------------


@criterion(7)
def test_relay_state_machine(verdict):
    t0 = time.perf_counter()
    script = good_script()
    bridged = run_script(script).state is RelayState.BRIDGED
    failed = 0
    for i in range(7):
        events = list(script)
        events[i], events[i + 1] = events[i + 1], events[i]
        failed += run_script(events).state is RelayState.FAILED
    elapsed = time.perf_counter() - t0
    ok = bridged and failed == 7 and elapsed < 1
    verdict(ok, f"in-order script bridged={bridged}; {failed}/7 transpositions failed in {elapsed * 1000:.1f}ms (< 1s)")


# -- 8: DHT ------------------------------------------------------------------------------------------------


@criterion(8)
def test_dht_against_brute_force(verdict):
    agree = total = 0
    for net_seed in range(50):
        rng = random.Random(net_seed)
        nodes = build_dht(64, rng)
        for _ in range(5):
            target = rng.randbytes(20)
            truth = sorted(nodes, key=lambda n: dht_xor_distance(n.node_id, target))[:8]
            value = PeerEntry(Endpoint("10.0.0.1", 1), Endpoint("10.0.0.1", 1), target)
            for node in truth:
                node.store(target, value)
            start = [rng.choice(nodes)]
            found = dht_find_closest(start, target)
            total += 1
            agree += ([n.node_id for n in found] == [n.node_id for n in truth]
                      and dht_lookup(start, target) == [value])
    verdict(agree == total, f"{agree}/{total} lookups over 50 random 64-node networks match brute force")


# -- 9: daily snapshot reconstruction -----------------------------------------------------------------------------


def fig7_crawl(cfg=None):
    net = build_scenario(cfg or preset_config("fig7"))
    transport = SimTransport(net)
    transport.advance(60)
    share = net.scenario.shares["movies"].share_id
    s1 = enumerate_peers(share, ALL_SOURCES, transport)
    transport.advance(86400)
    s2 = enumerate_peers(share, ALL_SOURCES, transport)
    return net, transport, share, s1, s2


@criterion(9)
def test_daily_snapshot_reconstruction(verdict):
    net, _, share, s1, s2 = fig7_crawl()
    churn = diff_snapshots(s1, s2)
    findings = detect_findings(s1, s2)
    realloc = [f for f in findings if f.kind is FindingKind.IP_REALLOCATION]
    nat = [f for f in findings if f.kind is FindingKind.NAT_SHARED]
    p20 = net.peers["p20"].peer_id
    report = build_report([s1, s2], churn, findings)
    header = report.peer_table(0).splitlines()[0].split()
    ok = (len(s1.peer_ids) == 21 and len(s2.peer_ids) == 20
          and churn.churn_rate == 1 / 21 and churn.rate_text == "4.8%"
          and len(realloc) == 1 and realloc[0].evidence[0].peer_id == p20
          and len(nat) == 1 and nat[0].evidence[0].external.ip == "198.51.100.7"
          and header == ["PeerID", "External", "IP:Port", "Local", "IP:Port"])
    verdict(ok, f"snapshots {len(s1.peer_ids)} -> {len(s2.peer_ids)} peers, churn {churn.rate_text}, "
                f"{len(realloc)} IpReallocation, {len(nat)} NatShared, table columns {header}")


# -- 10: content recovery ---------------------------------------------------------------------------------------


def recover(cfg):
    net, transport, share, _, s2 = fig7_crawl(cfg)
    [result] = retrieve_content(share, net.scenario.manifests_for(share), s2, transport)
    return result


@criterion(10)
def test_content_recovery(verdict):
    base = preset_config("fig7")
    planted = recover(base)
    gap_cfg = copy.deepcopy(base)
    for p in gap_cfg["peers"]:
        if "chunks" in p:
            p["chunks"]["collection.bin"] = [i for i in p["chunks"]["collection.bin"] if i != 7]
    gap = recover(gap_cfg)
    bad_cfg = copy.deepcopy(base)
    bad_cfg["peers"][0]["corrupt"] = {"collection.bin": [4]}   # only p01 holds chunk 4
    bad = recover(bad_cfg)
    digest_ok = planted.data is not None and hashlib.sha1(planted.data).digest() == planted.digest
    ok = (planted.status is RecoveryStatus.COMPLETE_VERIFIED and digest_ok
          and gap.status is RecoveryStatus.INCOMPLETE and gap.missing == (7,)
          and bad.status is RecoveryStatus.DIGEST_MISMATCH)
    verdict(ok, f"overlap plant {planted.status.value}, gap {gap.status.value}{list(gap.missing)}, "
                f"corruption {bad.status.value}")


# -- 11: simulate -> dissect -----------------------------------------------------------------------------------


def expected_flows(cfg: dict) -> int:
    """Conversations the entry-point scenario produces in its first 30 seconds."""
    peers = [p for p in cfg["peers"] if p.get("shares")]
    held = {p["name"]: {s if isinstance(s, str) else s["share"] for s in p["shares"]} for p in peers}
    n = 0
    for p in peers:
        if p.get("use_tracker", True):
            n += 2                                   # UDP and TCP to the tracker
        if p.get("use_lpd", True):
            n += 1                                   # multicast
        n += len(p.get("predefined_hosts", []))      # one TCP conversation per host
    lpd = [p for p in peers if p.get("use_lpd", True)]
    for a, b in itertools.combinations(lpd, 2):
        if a["segment"] == b["segment"] and held[a["name"]] & held[b["name"]]:
            n += 1                                   # unicast replies between LAN neighbours
    n += 2 * len([r for r in cfg.get("relay_sessions", []) if r.get("at", 1.0) < 30])
    return n


@criterion(11)
def test_simulate_then_dissect(verdict, tmp_path, capsys):
    cfg = preset_config("entry-point")
    expected_shares = {s.share_id.hex() for s in parse_scenario(cfg).shares.values()}
    main(["simulate", "entry-point", "--duration", "30", "--output-dir", str(tmp_path / "sim")])
    [spb] = (tmp_path / "sim").glob("*.spb")
    main(["dissect", str(spb), "--format", "raw", "--output-dir", str(tmp_path / "all")])
    [shares] = (tmp_path / "all").glob("*.shares.json")
    [flows] = (tmp_path / "all").glob("*.flows.json")
    got_shares = {s["share_id"] for s in json.loads(shares.read_text())}
    got_flows = len(json.loads(flows.read_text()))
    code = main(["dissect", str(spb), "--format", "raw", "--share", PLANTED, "--output-dir", str(tmp_path / "one")])
    [planted] = (tmp_path / "one").glob("*.shares.json")
    extracted = [s["share_id"] for s in json.loads(planted.read_text())]
    capsys.readouterr()
    ok = (got_shares == expected_shares and PLANTED in got_shares and got_flows == expected_flows(cfg)
          and code == 0 and extracted == [PLANTED])
    verdict(ok, f"share ids {sorted(s[:8] for s in got_shares)} (expected {sorted(s[:8] for s in expected_shares)}), "
                f"{got_flows} sessions (expected {expected_flows(cfg)}), planted {PLANTED[:8]} extracted")


# -- 12: determinism ------------------------------------------------------------------------------------------


def run_everything(out: Path, capsys) -> tuple:
    commands = [
        ["key", "gen", "--seed", "12"],
        ["key", "share-id", MOVIES_KEY],
        ["link", "parse", WINHEX, "--json"],
        ["simulate", "entry-point", "--duration", "120", "--output-dir", str(out)],
        ["crawl", MOVIES_KEY, "--scenario", "fig7", "--snapshots", "2", "--save-content", "--output-dir", str(out)],
    ]
    stdout = []
    for argv in commands:
        main(argv)
        stdout.append(capsys.readouterr().out.replace(str(out), "<out>"))
    [spb] = out.glob("*.spb")
    main(["dissect", str(spb), "--format", "raw", "--output-dir", str(out)])
    stdout.append(capsys.readouterr().out.replace(str(out), "<out>"))
    return stdout, {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@criterion(12)
def test_determinism(verdict, tmp_path, capsys):
    first = run_everything(tmp_path / "a", capsys)
    second = run_everything(tmp_path / "b", capsys)
    ok = first == second and len(first[1]) >= 8
    verdict(ok, f"{len(first[0])} commands rerun; {len(first[1])} output files byte-identical")
